//! Greedy improvement of checkpointing configurations, random baselines,
//! and exhaustive Pareto enumeration at small scale.
//!
//! Each optimization step re-profiles the current configuration, applies a
//! small batch of suggestions, and repeats until none remains admissible.
//! Finding the optimal activation subset is NP-hard in general, so beyond
//! the greedy strategies only an exhaustive search over all `2^m` subsets
//! is offered, guarded to small checkpoint counts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{CallTree, CheckpointConfig, StaticRef};
use crate::profiler::{self, Category, ProfileReport, Suggestion};
use crate::sim::{self, AdjointCost, SimError};

/// Suggestion-picking strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    /// Highest run-time gain first, deferring expensive peak growth.
    TimeFirst,
    /// Lowest memory cost first, regardless of run-time gain.
    MemoryFirst,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Strategy {
    pub kind: StrategyKind,
    /// Suggestions applied per re-profile.
    pub batch: usize,
    /// Hard cap on the predicted peak after applying a suggestion.
    pub budget_bytes: Option<u64>,
    /// Time-first only: postpone suggestions whose peak cost exceeds this
    /// while cheaper alternatives remain.
    pub defer_above_bytes: Option<u64>,
}

impl Strategy {
    pub fn time_first() -> Strategy {
        Strategy {
            kind: StrategyKind::TimeFirst,
            batch: 1,
            budget_bytes: None,
            defer_above_bytes: None,
        }
    }

    pub fn memory_first() -> Strategy {
        Strategy {
            kind: StrategyKind::MemoryFirst,
            batch: 1,
            budget_bytes: None,
            defer_above_bytes: None,
        }
    }
}

/// One row of an optimization trajectory: the configuration after applying
/// `applied` (empty at step 0) and its freshly simulated cost.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub config: CheckpointConfig,
    pub time_s: f64,
    pub peak_bytes: u64,
    pub applied: Vec<StaticRef>,
}

/// Pick the next batch of suggestions to apply under `strategy`. An empty
/// result means no admissible suggestion remains.
pub fn next_suggestions(
    report: &ProfileReport,
    strategy: &Strategy,
    current_peak: u64,
) -> Vec<Suggestion> {
    let admissible = |s: &Suggestion| match strategy.budget_bytes {
        Some(budget) => current_peak as i128 + s.dpk_bytes as i128 <= budget as i128,
        None => true,
    };
    let by_gain = |a: &Suggestion, b: &Suggestion| {
        b.dt_s
            .abs()
            .total_cmp(&a.dt_s.abs())
            .then_with(|| a.re.cmp(&b.re))
    };

    let mut picked: Vec<Suggestion> = Vec::new();
    match strategy.kind {
        StrategyKind::TimeFirst => {
            // Categories 1 and 2 cost no peak: exhaust them first. Then pay
            // for peak growth, cheapest-to-defer last.
            let mut free: Vec<Suggestion> = report
                .suggestions
                .iter()
                .filter(|s| s.category != Category::CostsPeak)
                .cloned()
                .collect();
            free.sort_by(by_gain);
            let (mut costly, mut deferred): (Vec<Suggestion>, Vec<Suggestion>) = report
                .suggestions
                .iter()
                .filter(|s| s.category == Category::CostsPeak)
                .cloned()
                .partition(|s| match strategy.defer_above_bytes {
                    Some(limit) => s.dpk_bytes <= limit as i64,
                    None => true,
                });
            costly.sort_by(by_gain);
            deferred.sort_by(by_gain);
            for s in free.into_iter().chain(costly).chain(deferred) {
                if admissible(&s) {
                    picked.push(s);
                    if picked.len() == strategy.batch {
                        break;
                    }
                }
            }
        }
        StrategyKind::MemoryFirst => {
            let mut all: Vec<Suggestion> = report.suggestions.clone();
            all.sort_by(|a, b| {
                a.dpk_bytes
                    .cmp(&b.dpk_bytes)
                    .then_with(|| by_gain(a, b))
            });
            for s in all {
                if admissible(&s) {
                    picked.push(s);
                    if picked.len() == strategy.batch {
                        break;
                    }
                }
            }
        }
    }
    picked
}

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Profile(#[from] profiler::ProfileError),
}

/// Greedy improvement loop: simulate, profile, apply, repeat until no
/// admissible suggestion remains. Deterministic.
pub fn optimize(
    tree: &CallTree,
    config0: &CheckpointConfig,
    strategy: &Strategy,
) -> Result<Vec<TrajectoryPoint>, OptimizeError> {
    Ok(optimize_with_reports(tree, config0, strategy)?.0)
}

/// [`optimize`], also returning the profile report seen at each step.
pub fn optimize_with_reports(
    tree: &CallTree,
    config0: &CheckpointConfig,
    strategy: &Strategy,
) -> Result<(Vec<TrajectoryPoint>, Vec<ProfileReport>), OptimizeError> {
    let mut config = config0.clone();
    let mut applied: Vec<StaticRef> = Vec::new();
    let mut points = Vec::new();
    let mut reports = Vec::new();
    loop {
        let (events, cost) = sim::capture_events(tree, &config)?;
        let report = profiler::profile(&events, cost.time_s)?;
        points.push(TrajectoryPoint {
            step: points.len(),
            config: config.clone(),
            time_s: cost.time_s,
            peak_bytes: cost.peak_bytes,
            applied: std::mem::take(&mut applied),
        });
        let batch = next_suggestions(&report, strategy, cost.peak_bytes);
        reports.push(report);
        if batch.is_empty() {
            return Ok((points, reports));
        }
        for s in batch {
            config.inhibited.insert(s.re.clone());
            applied.push(s.re);
        }
    }
}

/// Simulate `n` uniformly random inhibition subsets (each checkpoint
/// inhibited with probability 1/2), deterministic in `seed`. Binomial
/// entries are taken from `base`.
pub fn random_configs(
    tree: &CallTree,
    base: &CheckpointConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<(CheckpointConfig, AdjointCost)>, SimError> {
    let refs = tree.call_refs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut config = CheckpointConfig {
            inhibited: Default::default(),
            binomial: base.binomial.clone(),
        };
        for re in &refs {
            if rng.random_bool(0.5) {
                config.inhibited.insert(re.clone());
            }
        }
        let cost = sim::simulate(tree, &config)?;
        out.push((config, cost));
    }
    Ok(out)
}

/// A non-dominated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoPoint {
    pub config: CheckpointConfig,
    pub time_s: f64,
    pub peak_bytes: u64,
}

pub const DEFAULT_PARETO_GUARD: usize = 20;

#[derive(Debug, Error)]
pub enum ParetoError {
    #[error("tree has {checkpoints} static checkpoints, above the exhaustive-search guard of {guard}")]
    GuardExceeded { checkpoints: usize, guard: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Weak dominance on (time, peak): at least as good on both, better on one.
pub fn dominates(a: (f64, u64), b: (f64, u64)) -> bool {
    a.0 <= b.0 && a.1 <= b.1 && (a.0 < b.0 || a.1 < b.1)
}

/// Evaluate all `2^m` inhibition subsets and return the non-dominated
/// front, ordered by time. Binomial entries are taken from `base`.
pub fn pareto(
    tree: &CallTree,
    base: &CheckpointConfig,
    guard: usize,
) -> Result<Vec<ParetoPoint>, ParetoError> {
    let refs = tree.call_refs();
    if refs.len() > guard {
        return Err(ParetoError::GuardExceeded {
            checkpoints: refs.len(),
            guard,
        });
    }
    let mut points = Vec::with_capacity(1usize << refs.len());
    for mask in 0u64..(1u64 << refs.len()) {
        let mut config = CheckpointConfig {
            inhibited: Default::default(),
            binomial: base.binomial.clone(),
        };
        for (bit, re) in refs.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                config.inhibited.insert(re.clone());
            }
        }
        let cost = sim::simulate(tree, &config)?;
        points.push(ParetoPoint {
            config,
            time_s: cost.time_s,
            peak_bytes: cost.peak_bytes,
        });
    }
    points.sort_by(|a, b| {
        a.time_s
            .total_cmp(&b.time_s)
            .then(a.peak_bytes.cmp(&b.peak_bytes))
    });
    // One sweep over time-sorted points: a point survives only by strictly
    // improving the best peak, or by exactly tying the point that set it.
    let mut front: Vec<ParetoPoint> = Vec::new();
    let mut best: Option<(f64, u64)> = None;
    for p in points {
        let keep = match best {
            None => true,
            Some((bt, bp)) => p.peak_bytes < bp || (p.peak_bytes == bp && p.time_s == bt),
        };
        if keep {
            if p.peak_bytes < best.map_or(u64::MAX, |b| b.1) {
                best = Some((p.time_s, p.peak_bytes));
            }
            front.push(p);
        }
    }
    Ok(front)
}

// CSV forms for the three optimizer outputs. Config cells are `;`-joined
// `proc@site` tokens.

pub const TRAJECTORY_CSV_HEADER: &str = "step,time_s,peak_bytes,applied";
pub const SCATTER_CSV_HEADER: &str = "config_id,time_s,peak_bytes";
pub const PARETO_CSV_HEADER: &str = "time_s,peak_bytes,config";

pub fn trajectory_csv(points: &[TrajectoryPoint]) -> String {
    let mut out = String::from(TRAJECTORY_CSV_HEADER);
    out.push('\n');
    for p in points {
        let applied: Vec<String> = p.applied.iter().map(|r| r.to_string()).collect();
        out.push_str(&format!(
            "{},{:.9},{},{}\n",
            p.step,
            p.time_s,
            p.peak_bytes,
            applied.join(";")
        ));
    }
    out
}

pub fn scatter_csv(rows: &[(CheckpointConfig, AdjointCost)]) -> String {
    let mut out = String::from(SCATTER_CSV_HEADER);
    out.push('\n');
    for (id, (_, cost)) in rows.iter().enumerate() {
        out.push_str(&format!("{},{:.9},{}\n", id, cost.time_s, cost.peak_bytes));
    }
    out
}

pub fn pareto_csv(front: &[ParetoPoint]) -> String {
    let mut out = String::from(PARETO_CSV_HEADER);
    out.push('\n');
    for p in front {
        out.push_str(&format!(
            "{:.9},{},{}\n",
            p.time_s,
            p.peak_bytes,
            p.config.inhibited_tokens()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CallNode, Segment, TreeItem};
    use crate::profiler::FrameStats;
    use std::collections::BTreeMap;

    fn seg(label: &str, t_primal: f64, t_fwd: f64, t_bwd: f64, tape: u64) -> TreeItem {
        TreeItem::Segment(Segment {
            label: label.to_string(),
            t_primal,
            t_fwd,
            t_bwd,
            tape_bytes: tape,
        })
    }

    fn call(proc: &str, site: u32, snap: u64, t_w: f64, t_r: f64, body: Vec<TreeItem>) -> TreeItem {
        TreeItem::Call(CallNode {
            static_ref: StaticRef::sited(proc, site),
            snapshot_bytes: snap,
            t_snp_write: t_w,
            t_snp_read: t_r,
            body,
        })
    }

    fn tree(items: Vec<TreeItem>) -> CallTree {
        let t = CallTree {
            name: "test".to_string(),
            items,
        };
        t.validate().unwrap();
        t
    }

    fn t1() -> CallTree {
        tree(vec![
            seg("U", 1.0, 2.0, 2.0, 10),
            call("C", 42, 4, 0.5, 0.5, vec![seg("CB", 2.0, 3.0, 3.0, 20)]),
            seg("D", 3.0, 4.0, 4.0, 30),
        ])
    }

    fn report_with(suggestions: Vec<Suggestion>) -> ProfileReport {
        ProfileReport {
            root: FrameStats {
                time_s: 0.0,
                turn_bytes: 0,
                peak_bytes: 0,
                deltas: BTreeMap::new(),
            },
            suggestions,
            multi_site_procs: Default::default(),
        }
    }

    fn sugg(proc: &str, dt: f64, dpk: i64) -> Suggestion {
        let d = crate::profiler::DeltaTriple {
            dt_s: dt,
            dtn_bytes: dpk,
            dpk_bytes: dpk,
        };
        Suggestion {
            re: StaticRef::sited(proc, 1),
            occurrences: 1,
            dt_s: dt,
            dtn_bytes: dpk,
            dpk_bytes: dpk,
            category: crate::profiler::categorize(&d),
        }
    }

    #[test]
    fn time_first_exhausts_free_categories_before_costly_ones() {
        let report = report_with(vec![sugg("A", -5.0, 0), sugg("B", -9.0, 100)]);
        let picked = next_suggestions(&report, &Strategy::time_first(), 0);
        assert_eq!(picked.len(), 1);
        assert_eq!(picked[0].re, StaticRef::sited("A", 1));
    }

    #[test]
    fn memory_first_prefers_the_cheapest_peak() {
        let report = report_with(vec![sugg("A", -5.0, 0), sugg("B", -9.0, 100)]);
        let picked = next_suggestions(&report, &Strategy::memory_first(), 0);
        assert_eq!(picked[0].re, StaticRef::sited("A", 1));
    }

    #[test]
    fn budget_skips_unaffordable_suggestions() {
        let report = report_with(vec![sugg("C", -3.0, 16)]);
        let mut strategy = Strategy::time_first();
        strategy.budget_bytes = Some(50);
        // 44 + 16 exceeds 50: nothing admissible.
        assert!(next_suggestions(&report, &strategy, 44).is_empty());
        strategy.budget_bytes = Some(60);
        assert_eq!(next_suggestions(&report, &strategy, 44).len(), 1);
    }

    #[test]
    fn defer_threshold_postpones_heavy_suggestions() {
        let report = report_with(vec![sugg("heavy", -9.0, 500), sugg("light", -2.0, 10)]);
        let mut strategy = Strategy::time_first();
        strategy.defer_above_bytes = Some(100);
        let picked = next_suggestions(&report, &strategy, 0);
        assert_eq!(picked[0].re, StaticRef::sited("light", 1));
        // Once only heavy ones remain they are still taken.
        let report = report_with(vec![sugg("heavy", -9.0, 500)]);
        let picked = next_suggestions(&report, &strategy, 0);
        assert_eq!(picked[0].re, StaticRef::sited("heavy", 1));
    }

    #[test]
    fn t1_trajectory_reaches_the_inhibited_configuration() {
        let points = optimize(&t1(), &CheckpointConfig::default(), &Strategy::time_first()).unwrap();
        assert_eq!(points.len(), 2);
        assert_eq!(points[0].time_s, 21.0);
        assert_eq!(points[0].peak_bytes, 44);
        assert!(points[0].applied.is_empty());
        assert_eq!(points[1].time_s, 18.0);
        assert_eq!(points[1].peak_bytes, 60);
        assert_eq!(points[1].applied, vec![StaticRef::sited("C", 42)]);
        // Every point re-simulates to itself.
        for p in &points {
            let cost = sim::simulate(&t1(), &p.config).unwrap();
            assert_eq!(cost.time_s, p.time_s);
            assert_eq!(cost.peak_bytes, p.peak_bytes);
        }
    }

    #[test]
    fn budget_stops_the_t1_trajectory_at_step_zero() {
        for kind in [StrategyKind::TimeFirst, StrategyKind::MemoryFirst] {
            let strategy = Strategy {
                kind,
                batch: 1,
                budget_bytes: Some(50),
                defer_above_bytes: None,
            };
            let points = optimize(&t1(), &CheckpointConfig::default(), &strategy).unwrap();
            assert_eq!(points.len(), 1);
            assert_eq!(points[0].time_s, 21.0);
        }
    }

    #[test]
    fn zero_checkpoint_tree_yields_a_one_row_trajectory() {
        let t = tree(vec![seg("a", 1.0, 1.5, 1.5, 10)]);
        for strategy in [Strategy::time_first(), Strategy::memory_first()] {
            let points = optimize(&t, &CheckpointConfig::default(), &strategy).unwrap();
            assert_eq!(points.len(), 1);
            assert_eq!(points[0].step, 0);
        }
    }

    #[test]
    fn batches_apply_several_suggestions_per_step() {
        let report = report_with(vec![
            sugg("A", -5.0, 0),
            sugg("B", -9.0, 100),
            sugg("C", -1.0, 0),
        ]);
        let mut strategy = Strategy::time_first();
        strategy.batch = 2;
        let picked = next_suggestions(&report, &strategy, 0);
        assert_eq!(picked.len(), 2);
        assert_eq!(picked[0].re, StaticRef::sited("A", 1));
        assert_eq!(picked[1].re, StaticRef::sited("C", 1));
    }

    #[test]
    fn fully_inhibited_start_is_a_single_point() {
        let config = CheckpointConfig {
            inhibited: t1().call_refs().into_iter().collect(),
            binomial: BTreeMap::new(),
        };
        let points = optimize(&t1(), &config, &Strategy::memory_first()).unwrap();
        assert_eq!(points.len(), 1);
        assert!(points[0].applied.is_empty());
    }

    #[test]
    fn random_configs_are_deterministic_and_bounded() {
        let t = t1();
        let base = CheckpointConfig::default();
        let a = random_configs(&t, &base, 6, 9).unwrap();
        let b = random_configs(&t, &base, 6, 9).unwrap();
        assert_eq!(a, b);
        assert!(random_configs(&t, &base, 0, 9).unwrap().is_empty());
        // One checkpoint: every sampled config is one of the two subsets.
        for (config, _) in random_configs(&t, &base, 4, 3).unwrap() {
            assert!(config.inhibited.len() <= 1);
        }
    }

    #[test]
    fn t1_front_holds_both_configurations() {
        let front = pareto(&t1(), &CheckpointConfig::default(), DEFAULT_PARETO_GUARD).unwrap();
        assert_eq!(front.len(), 2);
        assert_eq!((front[0].time_s, front[0].peak_bytes), (18.0, 60));
        assert_eq!((front[1].time_s, front[1].peak_bytes), (21.0, 44));
    }

    #[test]
    fn zero_checkpoint_tree_has_a_single_front_point() {
        let t = tree(vec![seg("a", 1.0, 1.5, 1.5, 10)]);
        let front = pareto(&t, &CheckpointConfig::default(), DEFAULT_PARETO_GUARD).unwrap();
        assert_eq!(front.len(), 1);
        assert_eq!(front[0].peak_bytes, 10);
    }

    #[test]
    fn dominated_active_configuration_is_excluded() {
        // Snapshot-dominated checkpoint: the all-active point loses on both
        // axes and drops off the front.
        let t = tree(vec![
            seg("U", 1.0, 1.0, 1.0, 0),
            call("C", 3, 50, 0.1, 0.1, vec![seg("cb", 1.0, 1.0, 1.0, 5)]),
            seg("D", 1.0, 1.0, 1.0, 10),
        ]);
        let front = pareto(&t, &CheckpointConfig::default(), DEFAULT_PARETO_GUARD).unwrap();
        assert_eq!(front.len(), 1);
        assert_eq!(front[0].peak_bytes, 15);
        assert!((front[0].time_s - 6.0).abs() < 1e-9);
        assert!(!front[0].config.is_active(&StaticRef::sited("C", 3)));
    }

    #[test]
    fn guard_refuses_large_trees() {
        let t = crate::model::generate_tree(1, 12, 3, &Default::default()).unwrap();
        match pareto(&t, &CheckpointConfig::default(), 10) {
            Err(ParetoError::GuardExceeded { checkpoints, guard }) => {
                assert_eq!(checkpoints, 12);
                assert_eq!(guard, 10);
            }
            other => panic!("expected guard error, got {other:?}"),
        }
    }

    #[test]
    fn csv_forms_are_stable() {
        let points = optimize(&t1(), &CheckpointConfig::default(), &Strategy::time_first()).unwrap();
        assert_eq!(
            trajectory_csv(&points),
            "step,time_s,peak_bytes,applied\n0,21.000000000,44,\n1,18.000000000,60,C@42\n"
        );
        let front = pareto(&t1(), &CheckpointConfig::default(), DEFAULT_PARETO_GUARD).unwrap();
        assert_eq!(
            pareto_csv(&front),
            "time_s,peak_bytes,config\n18.000000000,60,C@42\n21.000000000,44,\n"
        );
        let rows = random_configs(&t1(), &CheckpointConfig::default(), 2, 5).unwrap();
        let csv = scatter_csv(&rows);
        assert!(csv.starts_with("config_id,time_s,peak_bytes\n0,"));
        assert_eq!(csv.lines().count(), 3);
    }
}
