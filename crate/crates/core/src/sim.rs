//! Exact discrete simulator of adjoint execution under a checkpointing
//! configuration.
//!
//! The adjoint of a code fragment is a *round trip*: a taping forward sweep,
//! a turn point, and a backward sweep that consumes the tape. An active
//! checkpoint interrupts the enclosing forward sweep with a snapshot write
//! plus a plain primal run of its body, and replays the body's full round
//! trip from the snapshot during the enclosing backward sweep. The simulator
//! replays this schedule tick by tick, tracks the stack exactly, and emits
//! the profiling callback events observed by the online profiler.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::binomial::{self, Action};
use crate::model::{CallNode, CallTree, CheckpointConfig, LoopNode, StaticRef, TreeItem};

/// Profiling callback occurrences, in emission order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    SnpWrite,
    BeginAdvance,
    EndAdvance,
    Turn,
    SnpRead,
    BeginReverse,
    EndReverse,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::SnpWrite => "SNP_WRITE",
            EventKind::BeginAdvance => "BEGIN_ADVANCE",
            EventKind::EndAdvance => "END_ADVANCE",
            EventKind::Turn => "TURN",
            EventKind::SnpRead => "SNP_READ",
            EventKind::BeginReverse => "BEGIN_REVERSE",
            EventKind::EndReverse => "END_REVERSE",
        })
    }
}

/// One profiling callback occurrence.
///
/// `SNP_WRITE` carries the stack size measured just after pushing the
/// snapshot, and the clock taken just before paying the write time, so the
/// span from `SNP_WRITE` to `END_ADVANCE` prices the whole duplicate-primal
/// overhead of the occurrence. `SNP_READ` is symmetric: clock before the
/// read time, stack before the pop. Loop-iteration round trips under
/// binomial checkpointing are bracketed by `BEGIN_REVERSE`/`END_REVERSE`
/// carrying the loop id as a site-less ref, with no snapshot events.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub kind: EventKind,
    pub re: Option<StaticRef>,
    pub clock_s: f64,
    pub stack_bytes: u64,
}

impl TraceEvent {
    /// Tab-separated log form: kind, proc, site, clock (9 decimals), stack.
    pub fn log_line(&self) -> String {
        let proc = self.re.as_ref().map_or("-", |r| r.proc.as_str());
        let site = self
            .re
            .as_ref()
            .and_then(|r| r.site)
            .map_or_else(|| "-".to_string(), |s| s.to_string());
        format!(
            "{}\t{}\t{}\t{:.9}\t{}",
            self.kind, proc, site, self.clock_s, self.stack_bytes
        )
    }
}

/// Consumer of the event stream. One sink per run.
pub trait EventSink {
    fn event(&mut self, ev: &TraceEvent);
}

impl<F: FnMut(&TraceEvent)> EventSink for F {
    fn event(&mut self, ev: &TraceEvent) {
        self(ev)
    }
}

/// Sink that drops everything; used by plain simulation.
pub struct NullSink;

impl EventSink for NullSink {
    fn event(&mut self, _ev: &TraceEvent) {}
}

/// Exact totals of one adjoint round trip over the whole tree.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointCost {
    /// Total run time of the adjoint, in seconds.
    pub time_s: f64,
    /// Global maximum stack size over the run.
    pub peak_bytes: u64,
    /// Stack size at the outermost turn point.
    pub turn_bytes: u64,
    /// Duplicate primal runs caused by each active checkpoint.
    pub primal_reexecutions: BTreeMap<StaticRef, u64>,
    /// Executions of each loop's step body (primal and taping alike).
    pub step_executions: BTreeMap<String, u64>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("binomial capacity configured for unknown loop {id:?}")]
    DanglingLoopId { id: String },
    #[error("stack arithmetic overflow (loop {id:?} reserves {slots} x {bytes} bytes)")]
    ReservationOverflow { id: String, slots: u64, bytes: u64 },
}

/// Run the round trip and return exact totals. Pure in `(tree, config)`.
pub fn simulate(tree: &CallTree, config: &CheckpointConfig) -> Result<AdjointCost, SimError> {
    emit_events(tree, config, &mut NullSink)
}

/// Same traversal as [`simulate`], pushing every callback event into `sink`.
pub fn emit_events(
    tree: &CallTree,
    config: &CheckpointConfig,
    sink: &mut dyn EventSink,
) -> Result<AdjointCost, SimError> {
    let loop_ids = tree.loop_ids();
    for id in config.binomial.keys() {
        if !loop_ids.contains(id) {
            return Err(SimError::DanglingLoopId { id: id.clone() });
        }
    }
    let mut engine = Engine {
        config,
        sink,
        clock: 0.0,
        stack: Vec::new(),
        depth: 0,
        peak: 0,
        primal_reexecutions: BTreeMap::new(),
        step_executions: BTreeMap::new(),
    };
    engine.forward(&tree.items)?;
    engine.emit(EventKind::Turn, None);
    let turn_bytes = engine.depth;
    engine.backward(&tree.items)?;
    assert!(
        engine.stack.is_empty(),
        "simulator bug: {} bytes left on the stack after the round trip",
        engine.depth
    );
    Ok(AdjointCost {
        time_s: engine.clock,
        peak_bytes: engine.peak,
        turn_bytes,
        primal_reexecutions: engine.primal_reexecutions,
        step_executions: engine.step_executions,
    })
}

/// Collect the full event stream alongside the cost summary.
pub fn capture_events(
    tree: &CallTree,
    config: &CheckpointConfig,
) -> Result<(Vec<TraceEvent>, AdjointCost), SimError> {
    let mut events = Vec::new();
    let mut sink = |ev: &TraceEvent| events.push(ev.clone());
    let cost = emit_events(tree, config, &mut sink)?;
    Ok((events, cost))
}

/// Plain primal run time of the whole tree (loops multiplied out).
pub fn simulate_primal(tree: &CallTree) -> f64 {
    primal_time(&tree.items)
}

fn primal_time(items: &[TreeItem]) -> f64 {
    items
        .iter()
        .map(|item| match item {
            TreeItem::Segment(seg) => seg.t_primal,
            TreeItem::Call(call) => primal_time(&call.body),
            TreeItem::Loop(lp) => lp.iterations as f64 * primal_time(&lp.body),
        })
        .sum()
}

/// Time, peak and step-execution summary of one binomial loop in isolation:
/// what the loop contributes at its own stack base, with `d` slots and the
/// given configuration inside the step body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopCost {
    pub time_s: f64,
    pub peak_bytes: u64,
    pub step_executions: u64,
}

pub fn loop_cost(
    lp: &LoopNode,
    d: u64,
    inner_config: &CheckpointConfig,
) -> Result<LoopCost, SimError> {
    let tree = CallTree {
        name: format!("loop-{}", lp.id),
        items: vec![TreeItem::Loop(lp.clone())],
    };
    let mut config = inner_config.clone();
    config.binomial.insert(lp.id.clone(), d);
    let cost = simulate(&tree, &config)?;
    Ok(LoopCost {
        time_s: cost.time_s,
        peak_bytes: cost.peak_bytes,
        step_executions: *cost
            .step_executions
            .get(&lp.id)
            .expect("simulated loop records its executions"),
    })
}

struct Engine<'a> {
    config: &'a CheckpointConfig,
    sink: &'a mut dyn EventSink,
    clock: f64,
    /// Sizes of live pushes, newest last. Pops must match exactly.
    stack: Vec<u64>,
    depth: u64,
    peak: u64,
    primal_reexecutions: BTreeMap<StaticRef, u64>,
    step_executions: BTreeMap<String, u64>,
}

impl Engine<'_> {
    fn push(&mut self, bytes: u64) {
        self.stack.push(bytes);
        self.depth += bytes;
        self.peak = self.peak.max(self.depth);
    }

    fn pop(&mut self, bytes: u64) {
        let top = self.stack.pop().expect("simulator bug: pop from empty stack");
        assert_eq!(top, bytes, "simulator bug: pop does not match matching push");
        self.depth -= bytes;
    }

    fn emit(&mut self, kind: EventKind, re: Option<&StaticRef>) {
        self.emit_at(kind, re, self.clock, self.depth);
    }

    fn emit_at(&mut self, kind: EventKind, re: Option<&StaticRef>, clock_s: f64, stack_bytes: u64) {
        self.sink.event(&TraceEvent {
            kind,
            re: re.cloned(),
            clock_s,
            stack_bytes,
        });
    }

    /// Count step-body executions reached by a primal run, `mult` deep.
    fn count_primal_steps(&mut self, items: &[TreeItem], mult: u64) {
        for item in items {
            match item {
                TreeItem::Segment(_) => {}
                TreeItem::Call(call) => self.count_primal_steps(&call.body, mult),
                TreeItem::Loop(lp) => {
                    let runs = lp.iterations * mult;
                    *self.step_executions.entry(lp.id.clone()).or_insert(0) += runs;
                    self.count_primal_steps(&lp.body, runs);
                }
            }
        }
    }

    /// Plain primal execution: advances the clock, touches no stack.
    /// Checkpoints inside take no snapshot; primal code is not a sweep.
    fn run_primal(&mut self, items: &[TreeItem]) {
        self.clock += primal_time(items);
        self.count_primal_steps(items, 1);
    }

    fn forward(&mut self, items: &[TreeItem]) -> Result<(), SimError> {
        for item in items {
            match item {
                TreeItem::Segment(seg) => {
                    self.clock += seg.t_fwd;
                    self.push(seg.tape_bytes);
                }
                TreeItem::Call(call) => {
                    if self.config.is_active(&call.static_ref) {
                        self.checkpoint_forward(call);
                    } else {
                        self.forward(&call.body)?;
                    }
                }
                TreeItem::Loop(lp) => match self.config.binomial.get(&lp.id) {
                    Some(&d) => self.loop_forward(lp, d)?,
                    None => {
                        for _ in 0..lp.iterations {
                            *self.step_executions.entry(lp.id.clone()).or_insert(0) += 1;
                            self.forward(&lp.body)?;
                        }
                    }
                },
            }
        }
        Ok(())
    }

    fn backward(&mut self, items: &[TreeItem]) -> Result<(), SimError> {
        for item in items.iter().rev() {
            match item {
                TreeItem::Segment(seg) => {
                    self.clock += seg.t_bwd;
                    self.pop(seg.tape_bytes);
                }
                TreeItem::Call(call) => {
                    if self.config.is_active(&call.static_ref) {
                        self.checkpoint_backward(call)?;
                    } else {
                        self.backward(&call.body)?;
                    }
                }
                TreeItem::Loop(lp) => match self.config.binomial.get(&lp.id) {
                    Some(&d) => self.loop_backward(lp, d)?,
                    None => {
                        for _ in 0..lp.iterations {
                            self.backward(&lp.body)?;
                        }
                    }
                },
            }
        }
        Ok(())
    }

    /// Active checkpoint in a forward sweep: write the snapshot, then run
    /// the body once as primal. The stack only grows by the snapshot.
    fn checkpoint_forward(&mut self, call: &CallNode) {
        let re = &call.static_ref;
        let write_start = self.clock;
        self.clock += call.t_snp_write;
        self.push(call.snapshot_bytes);
        // Snapshot size is read off the stack just after the push, but the
        // occurrence is timed from before the write.
        self.emit_at(EventKind::SnpWrite, Some(re), write_start, self.depth);
        self.emit(EventKind::BeginAdvance, Some(re));
        self.run_primal(&call.body);
        *self
            .primal_reexecutions
            .entry(re.clone())
            .or_insert(0) += 1;
        self.emit(EventKind::EndAdvance, Some(re));
    }

    /// Mirror position in the backward sweep: read the snapshot back, then
    /// run the full round trip of the body from the current depth.
    fn checkpoint_backward(&mut self, call: &CallNode) -> Result<(), SimError> {
        let re = &call.static_ref;
        self.emit(EventKind::SnpRead, Some(re));
        self.clock += call.t_snp_read;
        self.pop(call.snapshot_bytes);
        self.emit(EventKind::BeginReverse, Some(re));
        self.forward(&call.body)?;
        self.emit(EventKind::Turn, None);
        self.backward(&call.body)?;
        self.emit(EventKind::EndReverse, Some(re));
        Ok(())
    }

    fn reservation(&self, lp: &LoopNode, d: u64) -> Result<u64, SimError> {
        let slots = d.min(lp.iterations);
        slots
            .checked_mul(lp.step_snapshot_bytes)
            .ok_or(SimError::ReservationOverflow {
                id: lp.id.clone(),
                slots,
                bytes: lp.step_snapshot_bytes,
            })
    }

    fn bump_steps(&mut self, lp: &LoopNode, runs: u64) {
        *self.step_executions.entry(lp.id.clone()).or_insert(0) += runs;
    }

    /// Advance `steps` iterations in primal mode.
    fn loop_advance(&mut self, lp: &LoopNode, steps: u64) {
        self.clock += steps as f64 * primal_time(&lp.body);
        self.bump_steps(lp, steps);
        for _ in 0..steps {
            self.count_primal_steps(&lp.body, 1);
        }
    }

    /// Binomial loop in the enclosing forward sweep: reserve the snapshot
    /// slots flat, store and advance along the first descent of the
    /// schedule, and tape the last step inline. Everything after the first
    /// taping runs when the backward sweep returns.
    fn loop_forward(&mut self, lp: &LoopNode, d: u64) -> Result<(), SimError> {
        self.push(self.reservation(lp, d)?);
        let sched = binomial::schedule(lp.iterations, d).expect("validated loop bounds");
        for action in &sched.actions {
            match *action {
                Action::Store { .. } => self.clock += lp.t_snp_write,
                Action::Advance { from, to } => self.loop_advance(lp, to - from),
                Action::Tape { .. } => {
                    self.bump_steps(lp, 1);
                    self.forward(&lp.body)?;
                    break;
                }
                Action::Restore { .. } | Action::Reverse { .. } => {
                    unreachable!("first descent contains no restores or reversals")
                }
            }
        }
        Ok(())
    }

    /// Binomial loop reversal in the enclosing backward sweep: reverse the
    /// inline-taped last step, then replay the remaining schedule. Each
    /// taped iteration is a bracketed round trip with its own turn point.
    fn loop_backward(&mut self, lp: &LoopNode, d: u64) -> Result<(), SimError> {
        let loop_ref = StaticRef::proc_wide(lp.id.clone());
        let sched = binomial::schedule(lp.iterations, d).expect("validated loop bounds");
        let first_tape = sched
            .actions
            .iter()
            .position(|a| matches!(a, Action::Tape { .. }))
            .expect("every schedule tapes its last step");
        // Last step was taped during the enclosing forward sweep.
        self.backward(&lp.body)?;
        let mut rest = sched.actions[first_tape + 2..].iter();
        while let Some(action) = rest.next() {
            match *action {
                Action::Store { .. } => self.clock += lp.t_snp_write,
                Action::Restore { .. } => self.clock += lp.t_snp_read,
                Action::Advance { from, to } => self.loop_advance(lp, to - from),
                Action::Tape { .. } => {
                    self.bump_steps(lp, 1);
                    self.emit(EventKind::BeginReverse, Some(&loop_ref));
                    self.forward(&lp.body)?;
                    self.emit(EventKind::Turn, None);
                    self.backward(&lp.body)?;
                    self.emit(EventKind::EndReverse, Some(&loop_ref));
                    let next = rest.next();
                    assert!(
                        matches!(next, Some(Action::Reverse { .. })),
                        "schedule pairs every taping with its reversal"
                    );
                }
                Action::Reverse { .. } => unreachable!("reversals are consumed with their taping"),
            }
        }
        self.pop(self.reservation(lp, d)?);
        Ok(())
    }
}
