//! Binomial (revolve-style) checkpointing of homogeneous time-stepping loops.
//!
//! Reversing `l` time steps with at most `d` simultaneously stored
//! before-step snapshots costs extra primal executions of the step body.
//! This module computes the minimal execution count, the matching
//! repetition bound, and an explicit action schedule realizing the optimum.
//!
//! Counting convention: every primal execution of a step counts once; each
//! step is taped exactly once, immediately before its own backward sweep,
//! and that taping execution is included in the count. The first advance
//! happens inside the enclosing forward sweep and tapes the last step
//! directly, so a single step costs one execution, not two.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BinomialError {
    #[error("loop must have at least one step")]
    ZeroSteps,
    #[error("binomial capacity must be at least one slot")]
    ZeroSlots,
}

/// Smallest repetition number `r` such that `l` steps are reversible with
/// `d` slots: min { r >= 0 : C(d+r, r) >= l }.
pub fn min_repetition(l: u64, d: u64) -> Result<u64, BinomialError> {
    check_args(l, d)?;
    let mut r: u64 = 0;
    let mut reach: u128 = 1; // C(d+0, 0)
    while reach < l as u128 {
        r += 1;
        // C(d+r, r) = C(d+r-1, r-1) * (d+r) / r, exact at every step.
        reach = reach.saturating_mul((d + r) as u128) / r as u128;
    }
    Ok(r)
}

/// Minimal total step executions to reverse `l` steps with `d` slots.
///
/// E(1, d) = 1; E(l, 1) = l(l+1)/2;
/// E(l, d) = min over 1 <= m <= l-1 of m + E(l-m, d-1) + E(m, d).
pub fn step_executions(l: u64, d: u64) -> Result<u64, BinomialError> {
    check_args(l, d)?;
    let table = ExecTable::build(l, d);
    Ok(table.executions(l, d))
}

fn check_args(l: u64, d: u64) -> Result<(), BinomialError> {
    if l < 1 {
        return Err(BinomialError::ZeroSteps);
    }
    if d < 1 {
        return Err(BinomialError::ZeroSlots);
    }
    Ok(())
}

/// One primitive of a loop-reversal schedule. Positions are "state after k
/// steps" (0 = loop entry); steps are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    /// Store a snapshot of the state at `position` into a free slot.
    Store { position: u64 },
    /// Restore the stored snapshot of `position`, making it the live state.
    Restore { position: u64 },
    /// Run steps `from+1 ..= to` in primal mode.
    Advance { from: u64, to: u64 },
    /// Run `step` as a taping forward sweep.
    Tape { step: u64 },
    /// Run the backward sweep of `step`, consuming its tape.
    Reverse { step: u64 },
}

/// An execution-optimal reversal schedule.
///
/// Everything up to and including the first `Tape` (always of the last
/// step) belongs to the enclosing forward sweep; the rest runs when the
/// enclosing backward sweep reaches the loop.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub steps: u64,
    pub slots: u64,
    pub actions: Vec<Action>,
}

/// Aggregate costs of a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleSummary {
    /// Total step executions (primal advances plus tapings).
    pub executions: u64,
    /// Snapshot store actions.
    pub stores: u64,
    /// Snapshot restore actions.
    pub restores: u64,
    /// Executions of the most-executed single step.
    pub max_step_executions: u64,
}

impl ScheduleSummary {
    /// Realized repetition: executions of the busiest step beyond its first.
    pub fn repetition(&self) -> u64 {
        self.max_step_executions - 1
    }
}

impl Schedule {
    pub fn summary(&self) -> ScheduleSummary {
        let mut per_step = vec![0u64; self.steps as usize + 1];
        let mut stores = 0;
        let mut restores = 0;
        for action in &self.actions {
            match *action {
                Action::Store { .. } => stores += 1,
                Action::Restore { .. } => restores += 1,
                Action::Advance { from, to } => {
                    for step in from + 1..=to {
                        per_step[step as usize] += 1;
                    }
                }
                Action::Tape { step } => per_step[step as usize] += 1,
                Action::Reverse { .. } => {}
            }
        }
        ScheduleSummary {
            executions: per_step.iter().sum(),
            stores,
            restores,
            max_step_executions: per_step.iter().copied().max().unwrap_or(0),
        }
    }
}

/// Build the optimal schedule for `l` steps and `d` slots.
pub fn schedule(l: u64, d: u64) -> Result<Schedule, BinomialError> {
    check_args(l, d)?;
    // Slots beyond l are unusable; capping keeps the table small.
    let d = d.min(l);
    let table = ExecTable::build(l, d);
    let mut actions = Vec::new();
    emit_live(&table, 0, l, d, &mut actions);
    Ok(Schedule {
        steps: l,
        slots: d,
        actions,
    })
}

/// Reversal of steps `base+1 ..= base+l` with the state live at `base`
/// (just advanced there; no snapshot of `base` taken yet).
fn emit_live(table: &ExecTable, base: u64, l: u64, d: u64, out: &mut Vec<Action>) {
    if l == 1 {
        out.push(Action::Tape { step: base + 1 });
        out.push(Action::Reverse { step: base + 1 });
        return;
    }
    out.push(Action::Store { position: base });
    if d == 1 {
        out.push(Action::Advance {
            from: base,
            to: base + l - 1,
        });
        out.push(Action::Tape { step: base + l });
        out.push(Action::Reverse { step: base + l });
        for i in (1..l).rev() {
            emit_replay_cycle(base, i, out);
        }
        return;
    }
    let m = table.split(l, d);
    out.push(Action::Advance {
        from: base,
        to: base + m,
    });
    emit_live(table, base + m, l - m, d - 1, out);
    emit_stored(table, base, m, d, out);
}

/// Reversal of steps `base+1 ..= base+l` with a snapshot of `base` already
/// stored and the live state elsewhere.
fn emit_stored(table: &ExecTable, base: u64, l: u64, d: u64, out: &mut Vec<Action>) {
    if l == 1 {
        out.push(Action::Restore { position: base });
        out.push(Action::Tape { step: base + 1 });
        out.push(Action::Reverse { step: base + 1 });
        return;
    }
    if d == 1 {
        for i in (1..=l).rev() {
            emit_replay_cycle(base, i, out);
        }
        return;
    }
    out.push(Action::Restore { position: base });
    let m = table.split(l, d);
    out.push(Action::Advance {
        from: base,
        to: base + m,
    });
    emit_live(table, base + m, l - m, d - 1, out);
    emit_stored(table, base, m, d, out);
}

/// Restore `base`, re-advance to step `i`, tape and reverse it.
fn emit_replay_cycle(base: u64, i: u64, out: &mut Vec<Action>) {
    out.push(Action::Restore { position: base });
    if i > 1 {
        out.push(Action::Advance {
            from: base,
            to: base + i - 1,
        });
    }
    out.push(Action::Tape { step: base + i });
    out.push(Action::Reverse { step: base + i });
}

/// Memoized execution counts and argmin splits, confined per evaluation.
struct ExecTable {
    max_d: u64,
    exec: Vec<u64>,
    splits: Vec<u64>,
}

impl ExecTable {
    fn build(l: u64, d: u64) -> ExecTable {
        let d = d.min(l);
        let (ln, dn) = (l as usize, d as usize);
        let mut table = ExecTable {
            max_d: d,
            exec: vec![0; (ln + 1) * (dn + 1)],
            splits: vec![0; (ln + 1) * (dn + 1)],
        };
        for dd in 1..=dn {
            for ll in 1..=ln {
                let (e, m) = if ll == 1 {
                    (1, 0)
                } else if dd == 1 {
                    (ll as u64 * (ll as u64 + 1) / 2, 0)
                } else {
                    let mut best = u64::MAX;
                    let mut best_m = 1;
                    for m in 1..ll {
                        let cost =
                            m as u64 + table.at(ll - m, dd - 1) + table.at(m, dd);
                        if cost < best {
                            best = cost;
                            best_m = m as u64;
                        }
                    }
                    (best, best_m)
                };
                let idx = table.index(ll, dd);
                table.exec[idx] = e;
                table.splits[idx] = m;
            }
        }
        table
    }

    fn index(&self, l: usize, d: usize) -> usize {
        l * (self.max_d as usize + 1) + d
    }

    fn at(&self, l: usize, d: usize) -> u64 {
        self.exec[self.index(l, d)]
    }

    fn executions(&self, l: u64, d: u64) -> u64 {
        self.at(l as usize, d.min(self.max_d).min(l) as usize)
    }

    fn split(&self, l: u64, d: u64) -> u64 {
        self.splits[self.index(l as usize, d.min(self.max_d).min(l) as usize)]
    }
}
