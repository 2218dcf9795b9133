//! Online profiler for the callback event stream.
//!
//! The profiler folds the stream bottom-up over the tree of nested round
//! trips. For every frame it tracks the round-trip time, the stack size at
//! the frame's own turn point, the peak over all turns inside it, and, for
//! every active checkpoint observed, the predicted change of those three
//! numbers if that checkpoint alone were inhibited. The per-frame step is
//! [`combine`]: given the stats of a checkpointed child round trip and of
//! the suffix to its right, it produces the stats of their sequence.
//!
//! The central property, exercised heavily by the test suite: for every
//! tree and configuration, the predicted deltas equal the difference of two
//! exact simulations, byte-exact on stack sizes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::model::{CallTree, CheckpointConfig, StaticRef};
use crate::sim::{self, EventKind, SimError, TraceEvent};

/// Round-trip aggregate of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStats {
    /// Round-trip time in seconds.
    pub time_s: f64,
    /// Stack size at this frame's own turn point.
    pub turn_bytes: u64,
    /// Maximum stack over every turn point within the frame.
    pub peak_bytes: u64,
    /// Predicted per-checkpoint changes when inhibiting one checkpoint.
    pub deltas: BTreeMap<StaticRef, DeltaTriple>,
}

impl FrameStats {
    fn base(turn_bytes: u64) -> FrameStats {
        FrameStats {
            time_s: 0.0,
            turn_bytes,
            peak_bytes: turn_bytes,
            deltas: BTreeMap::new(),
        }
    }

    fn delta(&self, re: &StaticRef) -> DeltaTriple {
        self.deltas.get(re).copied().unwrap_or_default()
    }
}

/// Predicted change of (time, turn size, peak size) for inhibiting one
/// checkpoint. Time never increases; the stack deltas are usually positive
/// but turn negative when the snapshot outweighs the tape it replaces.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DeltaTriple {
    pub dt_s: f64,
    pub dtn_bytes: i64,
    pub dpk_bytes: i64,
}

/// One dynamic checkpoint occurrence awaiting its backward-sweep match.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingOccurrence {
    pub re: StaticRef,
    /// Snapshot write plus duplicate primal run, in seconds.
    pub advance_s: f64,
    /// Snapshot read time, in seconds.
    pub restore_s: f64,
    /// Stack size just after the snapshot push.
    pub snp_bytes: u64,
}

/// Inhibition suggestion categories, by the sign of the peak change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Category {
    /// Inhibition gains both time and peak: inhibit without hesitation.
    GainsBoth = 1,
    /// Only a hidden local peak changes; time is gained for free.
    PeakHidden = 2,
    /// Time is gained at a peak-memory cost: a trade-off decision.
    CostsPeak = 3,
}

impl Category {
    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

pub fn categorize(delta: &DeltaTriple) -> Category {
    match delta.dpk_bytes {
        d if d < 0 => Category::GainsBoth,
        0 => Category::PeakHidden,
        _ => Category::CostsPeak,
    }
}

/// One profiler output row: root-frame deltas for a static checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Suggestion {
    pub re: StaticRef,
    pub occurrences: u64,
    pub dt_s: f64,
    pub dtn_bytes: i64,
    pub dpk_bytes: i64,
    pub category: Category,
}

/// Profiling result for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileReport {
    pub root: FrameStats,
    /// Sorted by category, then |dt| descending, then ref.
    pub suggestions: Vec<Suggestion>,
    /// Procedures observed at more than one call site. Rows are per-site;
    /// no proc-wide aggregate is computed for them.
    pub multi_site_procs: BTreeSet<String>,
}

pub const SUGGESTION_CSV_HEADER: &str = "ref,occurrences,category,dt_s,dtn_bytes,dpk_bytes";

impl ProfileReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SUGGESTION_CSV_HEADER);
        out.push('\n');
        for s in &self.suggestions {
            out.push_str(&format!(
                "{},{},{},{:.9},{},{}\n",
                s.re, s.occurrences, s.category, s.dt_s, s.dtn_bytes, s.dpk_bytes
            ));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<20} {:>5} {:>3} {:>16} {:>12} {:>12}\n",
            "ref", "occ", "cat", "dt_s", "dtn_bytes", "dpk_bytes"
        ));
        for s in &self.suggestions {
            out.push_str(&format!(
                "{:<20} {:>5} {:>3} {:>16.9} {:>12} {:>12}\n",
                s.re.to_string(),
                s.occurrences,
                s.category,
                s.dt_s,
                s.dtn_bytes,
                s.dpk_bytes
            ));
        }
        out.push_str(&format!(
            "round trip: time_s={:.9} turn_bytes={} peak_bytes={}\n",
            self.root.time_s, self.root.turn_bytes, self.root.peak_bytes
        ));
        for proc in &self.multi_site_procs {
            out.push_str(&format!(
                "note: {proc} occurs at several sites; rows are per-site and not aggregated\n"
            ));
        }
        out
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("event {index}: clock went backwards ({clock_s} after {previous_s})")]
    ClockRegression {
        index: usize,
        clock_s: f64,
        previous_s: f64,
    },
    #[error("event {index}: {kind} requires a checkpoint ref")]
    MissingRef { index: usize, kind: String },
    #[error("event {index}: {detail}")]
    UnmatchedEvent { index: usize, detail: String },
    #[error("frame for {re} closed without a turn point")]
    MissingFrameTurn { re: String },
    #[error("stream ended without the outermost turn point")]
    MissingTurn,
    #[error("stream ended inside {depth} unclosed round trips")]
    UnclosedFrames { depth: usize },
    #[error("stream ended with {count} snapshot writes never read back")]
    UnmatchedOccurrences { count: usize },
}

/// The recursive step of the calculus: stats of the sequence `child ;
/// suffix`, where `child` is the round trip of an active checkpoint's body,
/// `suffix` the round trip of everything to its right, and `occ` the
/// occurrence overheads measured in the forward sweep.
///
/// For every checkpoint other than the child's own, inhibition leaves the
/// execution scheme unchanged: times add, the turn is the suffix turn, and
/// the peak is the larger of the two shifted peaks. For the child's own
/// checkpoint, inhibition splices its tape under the suffix: the write/read
/// overheads disappear from the time, and the child's turn stack (minus the
/// snapshot it no longer carries) accumulates beneath the suffix.
pub fn combine(
    child: &FrameStats,
    suffix: &FrameStats,
    occ: &PendingOccurrence,
    c_ref: &StaticRef,
) -> FrameStats {
    let peak = suffix.peak_bytes.max(child.peak_bytes);
    let mut deltas = BTreeMap::new();
    let mut keys: BTreeSet<&StaticRef> = child.deltas.keys().chain(suffix.deltas.keys()).collect();
    keys.insert(c_ref);
    for re in keys {
        let dc = child.delta(re);
        let ds = suffix.delta(re);
        let delta = if re == c_ref {
            let spliced_turn = child.turn_bytes as i128 + dc.dtn_bytes as i128;
            DeltaTriple {
                dt_s: ds.dt_s + dc.dt_s - occ.advance_s - occ.restore_s,
                dtn_bytes: narrow(
                    spliced_turn + ds.dtn_bytes as i128 - occ.snp_bytes as i128,
                ),
                dpk_bytes: narrow(
                    (spliced_turn + suffix.peak_bytes as i128 + ds.dpk_bytes as i128
                        - occ.snp_bytes as i128)
                        .max(child.peak_bytes as i128 + dc.dpk_bytes as i128)
                        - peak as i128,
                ),
            }
        } else {
            DeltaTriple {
                dt_s: ds.dt_s + dc.dt_s,
                dtn_bytes: ds.dtn_bytes,
                dpk_bytes: narrow(
                    (suffix.peak_bytes as i128 + ds.dpk_bytes as i128)
                        .max(child.peak_bytes as i128 + dc.dpk_bytes as i128)
                        - peak as i128,
                ),
            }
        };
        deltas.insert(re.clone(), delta);
    }
    FrameStats {
        time_s: occ.advance_s + suffix.time_s + occ.restore_s + child.time_s,
        turn_bytes: suffix.turn_bytes,
        peak_bytes: peak,
        deltas,
    }
}

/// Fold a sibling round trip that shares no snapshot with the suffix: a
/// loop-iteration round trip under binomial checkpointing. Times and
/// occurrence deltas add, peaks max, and nothing touches the frame's turn:
/// iterations reverse one at a time, so their stacks never accumulate.
fn merge_sibling(child: &FrameStats, suffix: &FrameStats) -> FrameStats {
    let peak = suffix.peak_bytes.max(child.peak_bytes);
    let keys: BTreeSet<&StaticRef> = child.deltas.keys().chain(suffix.deltas.keys()).collect();
    let deltas = keys
        .into_iter()
        .map(|re| {
            let dc = child.delta(re);
            let ds = suffix.delta(re);
            (
                re.clone(),
                DeltaTriple {
                    dt_s: ds.dt_s + dc.dt_s,
                    dtn_bytes: ds.dtn_bytes,
                    dpk_bytes: narrow(
                        (suffix.peak_bytes as i128 + ds.dpk_bytes as i128)
                            .max(child.peak_bytes as i128 + dc.dpk_bytes as i128)
                            - peak as i128,
                    ),
                },
            )
        })
        .collect();
    FrameStats {
        time_s: suffix.time_s + child.time_s,
        turn_bytes: suffix.turn_bytes,
        peak_bytes: peak,
        deltas,
    }
}

fn narrow(v: i128) -> i64 {
    i64::try_from(v).expect("stack delta exceeds i64 range")
}

/// One fold step, exposed for verification: the inputs and output of a
/// [`combine`] (checkpoint child) or sibling merge (`occurrence` absent).
pub struct FoldStep<'a> {
    pub child: &'a FrameStats,
    pub suffix: &'a FrameStats,
    pub occurrence: Option<&'a PendingOccurrence>,
    pub result: &'a FrameStats,
}

/// Consume an event stream and produce the report. `end_clock_s` is the
/// total duration of the run: the stream carries no event for the tail of
/// the outermost backward sweep.
pub fn profile(events: &[TraceEvent], end_clock_s: f64) -> Result<ProfileReport, ProfileError> {
    profile_with_observer(events, end_clock_s, &mut |_| {})
}

/// [`profile`] with a callback invoked at every fold step.
pub fn profile_with_observer(
    events: &[TraceEvent],
    end_clock_s: f64,
    observer: &mut dyn FnMut(FoldStep<'_>),
) -> Result<ProfileReport, ProfileError> {
    let mut fold = Fold {
        frames: vec![Frame::root()],
        counts: BTreeMap::new(),
        last_clock: 0.0,
        observer,
    };
    for (index, ev) in events.iter().enumerate() {
        fold.step(index, ev)?;
    }
    fold.finish(events.len(), end_clock_s)
}

struct PendingRec {
    re: StaticRef,
    write_clock: f64,
    snp_bytes: u64,
    advance_open: bool,
    end_advance_clock: Option<f64>,
}

struct AwaitingReverse {
    rec: PendingRec,
    read_clock: f64,
}

enum FrameKind {
    Root,
    Checkpoint(PendingOccurrence),
    Iteration,
}

struct Frame {
    kind: FrameKind,
    re: Option<StaticRef>,
    open_clock: f64,
    turn_bytes: Option<u64>,
    suffix: FrameStats,
    pending: Vec<PendingRec>,
    awaiting: Option<AwaitingReverse>,
}

impl Frame {
    fn root() -> Frame {
        Frame::open(FrameKind::Root, None, 0.0)
    }

    fn open(kind: FrameKind, re: Option<StaticRef>, clock: f64) -> Frame {
        Frame {
            kind,
            re,
            open_clock: clock,
            turn_bytes: None,
            suffix: FrameStats::base(0),
            pending: Vec::new(),
            awaiting: None,
        }
    }
}

struct Fold<'o> {
    frames: Vec<Frame>,
    counts: BTreeMap<StaticRef, u64>,
    last_clock: f64,
    observer: &'o mut dyn FnMut(FoldStep<'_>),
}

impl Fold<'_> {
    fn top(&mut self) -> &mut Frame {
        self.frames.last_mut().expect("frame stack never empties")
    }

    fn err(index: usize, detail: impl Into<String>) -> ProfileError {
        ProfileError::UnmatchedEvent {
            index,
            detail: detail.into(),
        }
    }

    fn require_ref(index: usize, ev: &TraceEvent) -> Result<StaticRef, ProfileError> {
        ev.re.clone().ok_or_else(|| ProfileError::MissingRef {
            index,
            kind: ev.kind.to_string(),
        })
    }

    fn step(&mut self, index: usize, ev: &TraceEvent) -> Result<(), ProfileError> {
        if ev.clock_s < self.last_clock {
            return Err(ProfileError::ClockRegression {
                index,
                clock_s: ev.clock_s,
                previous_s: self.last_clock,
            });
        }
        self.last_clock = self.last_clock.max(ev.clock_s);

        match ev.kind {
            EventKind::SnpWrite => {
                let re = Self::require_ref(index, ev)?;
                self.top().pending.push(PendingRec {
                    re,
                    write_clock: ev.clock_s,
                    snp_bytes: ev.stack_bytes,
                    advance_open: false,
                    end_advance_clock: None,
                });
            }
            EventKind::BeginAdvance => {
                let re = Self::require_ref(index, ev)?;
                let rec = self
                    .top()
                    .pending
                    .last_mut()
                    .ok_or_else(|| Self::err(index, "BEGIN_ADVANCE without a snapshot write"))?;
                if rec.re != re || rec.advance_open || rec.end_advance_clock.is_some() {
                    return Err(Self::err(
                        index,
                        format!("BEGIN_ADVANCE for {re} does not match pending {}", rec.re),
                    ));
                }
                rec.advance_open = true;
            }
            EventKind::EndAdvance => {
                let re = Self::require_ref(index, ev)?;
                let rec = self
                    .top()
                    .pending
                    .last_mut()
                    .ok_or_else(|| Self::err(index, "END_ADVANCE without a snapshot write"))?;
                if rec.re != re || !rec.advance_open || rec.end_advance_clock.is_some() {
                    return Err(Self::err(
                        index,
                        format!("END_ADVANCE for {re} does not match pending {}", rec.re),
                    ));
                }
                rec.end_advance_clock = Some(ev.clock_s);
            }
            EventKind::Turn => {
                let frame = self.top();
                match frame.turn_bytes {
                    None => {
                        frame.turn_bytes = Some(ev.stack_bytes);
                        frame.suffix = FrameStats::base(ev.stack_bytes);
                    }
                    Some(_) => {
                        frame.suffix.peak_bytes = frame.suffix.peak_bytes.max(ev.stack_bytes);
                    }
                }
            }
            EventKind::SnpRead => {
                let re = Self::require_ref(index, ev)?;
                let frame = self.top();
                if frame.turn_bytes.is_none() {
                    return Err(Self::err(index, "SNP_READ before the frame's turn point"));
                }
                if frame.awaiting.is_some() {
                    return Err(Self::err(index, "SNP_READ while another read awaits its reverse"));
                }
                let rec = frame
                    .pending
                    .pop()
                    .ok_or_else(|| Self::err(index, "SNP_READ without a matching snapshot write"))?;
                if rec.re != re {
                    return Err(Self::err(
                        index,
                        format!("SNP_READ for {re} but innermost write was {}", rec.re),
                    ));
                }
                let end_advance = rec.end_advance_clock.ok_or_else(|| {
                    Self::err(index, format!("SNP_READ for {re} before its END_ADVANCE"))
                })?;
                // The suffix round trip runs exactly between the end of this
                // occurrence's duplicate primal and its snapshot read.
                frame.suffix.time_s = ev.clock_s - end_advance;
                frame.awaiting = Some(AwaitingReverse {
                    rec,
                    read_clock: ev.clock_s,
                });
            }
            EventKind::BeginReverse => {
                let re = Self::require_ref(index, ev)?;
                let frame = self.top();
                if frame.turn_bytes.is_none() {
                    return Err(Self::err(index, "BEGIN_REVERSE before the frame's turn point"));
                }
                let kind = match frame.awaiting.take() {
                    Some(aw) => {
                        if aw.rec.re != re {
                            return Err(Self::err(
                                index,
                                format!(
                                    "BEGIN_REVERSE for {re} after SNP_READ of {}",
                                    aw.rec.re
                                ),
                            ));
                        }
                        FrameKind::Checkpoint(PendingOccurrence {
                            re: re.clone(),
                            advance_s: aw.rec.end_advance_clock.expect("checked at SNP_READ")
                                - aw.rec.write_clock,
                            restore_s: ev.clock_s - aw.read_clock,
                            snp_bytes: aw.rec.snp_bytes,
                        })
                    }
                    // No snapshot involved: a loop-iteration round trip.
                    None => FrameKind::Iteration,
                };
                self.frames.push(Frame::open(kind, Some(re), ev.clock_s));
            }
            EventKind::EndReverse => {
                let re = Self::require_ref(index, ev)?;
                if self.frames.len() < 2 {
                    return Err(Self::err(index, "END_REVERSE without an open round trip"));
                }
                let frame = self.frames.pop().expect("checked depth above");
                if frame.re.as_ref() != Some(&re) {
                    return Err(Self::err(
                        index,
                        format!(
                            "END_REVERSE for {re} closes a round trip opened for {}",
                            frame.re.map_or_else(|| "the root".to_string(), |r| r.to_string())
                        ),
                    ));
                }
                if !frame.pending.is_empty() || frame.awaiting.is_some() {
                    return Err(Self::err(
                        index,
                        format!("round trip of {re} closes with unmatched snapshot writes"),
                    ));
                }
                let turn_bytes = frame.turn_bytes.ok_or(ProfileError::MissingFrameTurn {
                    re: re.to_string(),
                })?;
                let child = FrameStats {
                    time_s: ev.clock_s - frame.open_clock,
                    turn_bytes,
                    peak_bytes: frame.suffix.peak_bytes,
                    deltas: frame.suffix.deltas,
                };
                let parent = self.frames.last_mut().expect("root stays open");
                let result = match &frame.kind {
                    FrameKind::Checkpoint(occ) => {
                        *self.counts.entry(re.clone()).or_insert(0) += 1;
                        let result = combine(&child, &parent.suffix, occ, &re);
                        (self.observer)(FoldStep {
                            child: &child,
                            suffix: &parent.suffix,
                            occurrence: Some(occ),
                            result: &result,
                        });
                        result
                    }
                    FrameKind::Iteration => {
                        let result = merge_sibling(&child, &parent.suffix);
                        (self.observer)(FoldStep {
                            child: &child,
                            suffix: &parent.suffix,
                            occurrence: None,
                            result: &result,
                        });
                        result
                    }
                    FrameKind::Root => unreachable!("root frame is never popped"),
                };
                parent.suffix = result;
            }
        }
        Ok(())
    }

    fn finish(
        mut self,
        n_events: usize,
        end_clock_s: f64,
    ) -> Result<ProfileReport, ProfileError> {
        if end_clock_s < self.last_clock {
            return Err(ProfileError::ClockRegression {
                index: n_events,
                clock_s: end_clock_s,
                previous_s: self.last_clock,
            });
        }
        if self.frames.len() != 1 {
            return Err(ProfileError::UnclosedFrames {
                depth: self.frames.len() - 1,
            });
        }
        let root = self.frames.pop().expect("exactly one frame left");
        if !root.pending.is_empty() || root.awaiting.is_some() {
            return Err(ProfileError::UnmatchedOccurrences {
                count: root.pending.len() + usize::from(root.awaiting.is_some()),
            });
        }
        let turn_bytes = root.turn_bytes.ok_or(ProfileError::MissingTurn)?;
        let stats = FrameStats {
            time_s: end_clock_s,
            turn_bytes,
            peak_bytes: root.suffix.peak_bytes,
            deltas: root.suffix.deltas,
        };

        let mut sites: BTreeMap<&str, BTreeSet<Option<u32>>> = BTreeMap::new();
        for re in stats.deltas.keys() {
            sites.entry(&re.proc).or_default().insert(re.site);
        }
        let multi_site_procs = sites
            .iter()
            .filter(|(_, s)| s.len() > 1)
            .map(|(p, _)| p.to_string())
            .collect();

        let mut suggestions: Vec<Suggestion> = stats
            .deltas
            .iter()
            .map(|(re, d)| Suggestion {
                re: re.clone(),
                occurrences: *self.counts.get(re).expect("every delta has occurrences"),
                dt_s: d.dt_s,
                dtn_bytes: d.dtn_bytes,
                dpk_bytes: d.dpk_bytes,
                category: categorize(d),
            })
            .collect();
        suggestions.sort_by(|a, b| {
            a.category
                .cmp(&b.category)
                .then(b.dt_s.abs().total_cmp(&a.dt_s.abs()))
                .then(a.re.cmp(&b.re))
        });

        Ok(ProfileReport {
            root: stats,
            suggestions,
            multi_site_procs,
        })
    }
}

#[derive(Debug, Error)]
pub enum ProfileTreeError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

/// Simulate `(tree, config)` and profile the resulting stream.
pub fn profile_tree(
    tree: &CallTree,
    config: &CheckpointConfig,
) -> Result<ProfileReport, ProfileTreeError> {
    let (events, cost) = sim::capture_events(tree, config)?;
    Ok(profile(&events, cost.time_s)?)
}
