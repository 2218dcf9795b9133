//! Annotated call trees and checkpointing configurations.
//!
//! A call tree describes the primal program as seen by the adjoint: plain
//! code segments with separate primal/taping/reverse costs, call sites that
//! are potential checkpoints, and homogeneous time-stepping loops. A
//! [`CheckpointConfig`] selects which call-site checkpoints are inhibited
//! and which loops run under binomial checkpointing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A static checkpoint location: a procedure name plus, optionally, the
/// call-site line. A site-less ref stands for every call site of the
/// procedure when resolving inhibitions.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StaticRef {
    pub proc: String,
    pub site: Option<u32>,
}

impl StaticRef {
    pub fn sited(proc: impl Into<String>, site: u32) -> Self {
        StaticRef {
            proc: proc.into(),
            site: Some(site),
        }
    }

    pub fn proc_wide(proc: impl Into<String>) -> Self {
        StaticRef {
            proc: proc.into(),
            site: None,
        }
    }

    /// Drop the site, keeping only the procedure name.
    pub fn widened(&self) -> StaticRef {
        StaticRef {
            proc: self.proc.clone(),
            site: None,
        }
    }
}

impl fmt::Display for StaticRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.site {
            Some(site) => write!(f, "{}@{}", self.proc, site),
            None => write!(f, "{}", self.proc),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("malformed checkpoint ref {input:?}: {reason}")]
pub struct RefParseError {
    pub input: String,
    pub reason: String,
}

impl FromStr for StaticRef {
    type Err = RefParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| RefParseError {
            input: s.to_string(),
            reason: reason.to_string(),
        };
        let (proc, site) = match s.split_once('@') {
            Some((p, l)) => {
                let site: u32 = l.parse().map_err(|_| err("site is not a non-negative integer"))?;
                (p, Some(site))
            }
            None => (s, None),
        };
        if proc.is_empty() || proc.chars().any(char::is_whitespace) {
            return Err(err("procedure name must be a non-empty token without whitespace"));
        }
        Ok(StaticRef {
            proc: proc.to_string(),
            site,
        })
    }
}

/// A plain code fragment. `t_primal` is the cost of running it untouched,
/// `t_fwd` the cost of the taping forward sweep (which pushes `tape_bytes`
/// on the stack), `t_bwd` the cost of the backward sweep (which pops them).
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub label: String,
    pub t_primal: f64,
    pub t_fwd: f64,
    pub t_bwd: f64,
    pub tape_bytes: u64,
}

/// A call site that is a potential checkpoint. When active, the enclosing
/// forward sweep writes a snapshot and runs the body as primal code; the
/// body's own round trip is postponed to the enclosing backward sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct CallNode {
    pub static_ref: StaticRef,
    pub snapshot_bytes: u64,
    pub t_snp_write: f64,
    pub t_snp_read: f64,
    pub body: Vec<TreeItem>,
}

/// A homogeneous time-stepping loop: `iterations` executions of `body`.
/// Under binomial checkpointing, `step_snapshot_bytes` is the size of one
/// before-step snapshot and the write/read times price the slot traffic.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopNode {
    pub id: String,
    pub iterations: u64,
    pub step_snapshot_bytes: u64,
    pub t_snp_write: f64,
    pub t_snp_read: f64,
    pub body: Vec<TreeItem>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeItem {
    Segment(Segment),
    Call(CallNode),
    Loop(LoopNode),
}

/// Root of an annotated call tree.
#[derive(Debug, Clone, PartialEq)]
pub struct CallTree {
    pub name: String,
    pub items: Vec<TreeItem>,
}

impl CallTree {
    /// All call-site refs, in traversal order. Unique by tree invariant.
    pub fn call_refs(&self) -> Vec<StaticRef> {
        fn walk(items: &[TreeItem], out: &mut Vec<StaticRef>) {
            for item in items {
                match item {
                    TreeItem::Segment(_) => {}
                    TreeItem::Call(call) => {
                        out.push(call.static_ref.clone());
                        walk(&call.body, out);
                    }
                    TreeItem::Loop(lp) => walk(&lp.body, out),
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.items, &mut out);
        out
    }

    /// All loop ids, in traversal order.
    pub fn loop_ids(&self) -> Vec<String> {
        fn walk(items: &[TreeItem], out: &mut Vec<String>) {
            for item in items {
                match item {
                    TreeItem::Segment(_) => {}
                    TreeItem::Call(call) => walk(&call.body, out),
                    TreeItem::Loop(lp) => {
                        out.push(lp.id.clone());
                        walk(&lp.body, out);
                    }
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.items, &mut out);
        out
    }

    /// Check every structural invariant, reporting the first violation.
    pub fn validate(&self) -> Result<(), TreeError> {
        let mut call_refs = BTreeSet::new();
        let mut loop_ids = BTreeSet::new();
        validate_items(&self.items, &mut call_refs, &mut loop_ids)
    }
}

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate call site {re}")]
    DuplicateCallSite { re: StaticRef },
    #[error("duplicate loop id {id:?}")]
    DuplicateLoopId { id: String },
    #[error("negative or non-finite time in {context}: {field} = {value}")]
    BadTime {
        context: String,
        field: &'static str,
        value: f64,
    },
    #[error("negative byte count in {context}: {field} = {value}")]
    NegativeBytes {
        context: String,
        field: &'static str,
        value: i64,
    },
    #[error("bad identifier in {context}: {value:?} (must be a non-empty token without whitespace)")]
    BadIdentifier { context: String, value: String },
    #[error("loop {id:?} must have at least one iteration")]
    ZeroIterations { id: String },
}

fn check_time(context: &str, field: &'static str, value: f64) -> Result<(), TreeError> {
    if !value.is_finite() || value < 0.0 {
        return Err(TreeError::BadTime {
            context: context.to_string(),
            field,
            value,
        });
    }
    Ok(())
}

fn check_ident(context: &str, value: &str) -> Result<(), TreeError> {
    if value.is_empty() || value.chars().any(char::is_whitespace) {
        return Err(TreeError::BadIdentifier {
            context: context.to_string(),
            value: value.to_string(),
        });
    }
    Ok(())
}

fn validate_items(
    items: &[TreeItem],
    call_refs: &mut BTreeSet<StaticRef>,
    loop_ids: &mut BTreeSet<String>,
) -> Result<(), TreeError> {
    for item in items {
        match item {
            TreeItem::Segment(seg) => {
                let ctx = format!("segment {:?}", seg.label);
                check_ident(&ctx, &seg.label)?;
                check_time(&ctx, "t_primal", seg.t_primal)?;
                check_time(&ctx, "t_fwd", seg.t_fwd)?;
                check_time(&ctx, "t_bwd", seg.t_bwd)?;
            }
            TreeItem::Call(call) => {
                let ctx = format!("call {}", call.static_ref);
                check_ident(&ctx, &call.static_ref.proc)?;
                check_time(&ctx, "t_snp_write", call.t_snp_write)?;
                check_time(&ctx, "t_snp_read", call.t_snp_read)?;
                if !call_refs.insert(call.static_ref.clone()) {
                    return Err(TreeError::DuplicateCallSite {
                        re: call.static_ref.clone(),
                    });
                }
                validate_items(&call.body, call_refs, loop_ids)?;
            }
            TreeItem::Loop(lp) => {
                let ctx = format!("loop {:?}", lp.id);
                check_ident(&ctx, &lp.id)?;
                check_time(&ctx, "t_snp_write", lp.t_snp_write)?;
                check_time(&ctx, "t_snp_read", lp.t_snp_read)?;
                if lp.iterations == 0 {
                    return Err(TreeError::ZeroIterations { id: lp.id.clone() });
                }
                if !loop_ids.insert(lp.id.clone()) {
                    return Err(TreeError::DuplicateLoopId { id: lp.id.clone() });
                }
                validate_items(&lp.body, call_refs, loop_ids)?;
            }
        }
    }
    Ok(())
}

// -------------------------------------------------------------------------
// Tree document format
// -------------------------------------------------------------------------
//
// Raw mirror of the on-disk schema. Byte counts are read as i64 so that a
// negative value is reported as a domain error instead of a serde type
// mismatch.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTree {
    name: String,
    items: Vec<RawItem>,
}

#[derive(Debug, Serialize, Deserialize)]
enum RawItem {
    #[serde(rename = "seg")]
    Seg(RawSeg),
    #[serde(rename = "call")]
    Call(RawCall),
    #[serde(rename = "loop")]
    Loop(RawLoop),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSeg {
    label: String,
    t_primal: f64,
    t_fwd: f64,
    t_bwd: f64,
    tape_bytes: i64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCall {
    proc: String,
    site: u32,
    snapshot_bytes: i64,
    t_snp_write: f64,
    t_snp_read: f64,
    items: Vec<RawItem>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLoop {
    id: String,
    iterations: u64,
    step_snapshot_bytes: i64,
    t_snp_write: f64,
    t_snp_read: f64,
    items: Vec<RawItem>,
}

fn check_bytes(context: &str, field: &'static str, value: i64) -> Result<u64, TreeError> {
    u64::try_from(value).map_err(|_| TreeError::NegativeBytes {
        context: context.to_string(),
        field,
        value,
    })
}

fn lower_items(raw: Vec<RawItem>) -> Result<Vec<TreeItem>, TreeError> {
    raw.into_iter()
        .map(|item| {
            Ok(match item {
                RawItem::Seg(seg) => {
                    let ctx = format!("segment {:?}", seg.label);
                    TreeItem::Segment(Segment {
                        tape_bytes: check_bytes(&ctx, "tape_bytes", seg.tape_bytes)?,
                        label: seg.label,
                        t_primal: seg.t_primal,
                        t_fwd: seg.t_fwd,
                        t_bwd: seg.t_bwd,
                    })
                }
                RawItem::Call(call) => {
                    let ctx = format!("call {}@{}", call.proc, call.site);
                    TreeItem::Call(CallNode {
                        snapshot_bytes: check_bytes(&ctx, "snapshot_bytes", call.snapshot_bytes)?,
                        static_ref: StaticRef::sited(call.proc, call.site),
                        t_snp_write: call.t_snp_write,
                        t_snp_read: call.t_snp_read,
                        body: lower_items(call.items)?,
                    })
                }
                RawItem::Loop(lp) => {
                    let ctx = format!("loop {:?}", lp.id);
                    TreeItem::Loop(LoopNode {
                        step_snapshot_bytes: check_bytes(&ctx, "step_snapshot_bytes", lp.step_snapshot_bytes)?,
                        id: lp.id,
                        iterations: lp.iterations,
                        t_snp_write: lp.t_snp_write,
                        t_snp_read: lp.t_snp_read,
                        body: lower_items(lp.items)?,
                    })
                }
            })
        })
        .collect()
}

fn raise_items(items: &[TreeItem]) -> Vec<RawItem> {
    items
        .iter()
        .map(|item| match item {
            TreeItem::Segment(seg) => RawItem::Seg(RawSeg {
                label: seg.label.clone(),
                t_primal: seg.t_primal,
                t_fwd: seg.t_fwd,
                t_bwd: seg.t_bwd,
                tape_bytes: seg.tape_bytes as i64,
            }),
            TreeItem::Call(call) => RawItem::Call(RawCall {
                proc: call.static_ref.proc.clone(),
                site: call.static_ref.site.expect("call refs always carry a site"),
                snapshot_bytes: call.snapshot_bytes as i64,
                t_snp_write: call.t_snp_write,
                t_snp_read: call.t_snp_read,
                items: raise_items(&call.body),
            }),
            TreeItem::Loop(lp) => RawItem::Loop(RawLoop {
                id: lp.id.clone(),
                iterations: lp.iterations,
                step_snapshot_bytes: lp.step_snapshot_bytes as i64,
                t_snp_write: lp.t_snp_write,
                t_snp_read: lp.t_snp_read,
                items: raise_items(&lp.body),
            }),
        })
        .collect()
}

/// Parse a tree document, verifying every structural invariant.
pub fn parse_tree(doc: &str) -> Result<CallTree, TreeError> {
    let raw: RawTree = serde_json::from_str(doc).map_err(|e| TreeError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let tree = CallTree {
        name: raw.name,
        items: lower_items(raw.items)?,
    };
    tree.validate()?;
    Ok(tree)
}

/// Serialize a tree back to its document form. `parse_tree` on the output
/// yields an equal tree.
pub fn serialize_tree(tree: &CallTree) -> String {
    let raw = RawTree {
        name: tree.name.clone(),
        items: raise_items(&tree.items),
    };
    let mut out = serde_json::to_string_pretty(&raw).expect("tree serialization cannot fail");
    out.push('\n');
    out
}

// -------------------------------------------------------------------------
// Checkpointing configuration
// -------------------------------------------------------------------------

/// Which checkpoints are inhibited and which loops run binomially.
/// Calls are checkpointed by default; a call is inhibited when either its
/// exact (proc, site) ref or its site-less proc ref is listed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CheckpointConfig {
    pub inhibited: BTreeSet<StaticRef>,
    pub binomial: BTreeMap<String, u64>,
}

impl CheckpointConfig {
    pub fn is_active(&self, re: &StaticRef) -> bool {
        !self.inhibited.contains(re) && !self.inhibited.contains(&re.widened())
    }

    /// Copy with one more ref inhibited.
    pub fn with_inhibited(&self, re: StaticRef) -> CheckpointConfig {
        let mut next = self.clone();
        next.inhibited.insert(re);
        next
    }

    /// Inhibited refs as a `;`-joined token list (CSV cell form).
    pub fn inhibited_tokens(&self) -> String {
        let tokens: Vec<String> = self.inhibited.iter().map(|r| r.to_string()).collect();
        tokens.join(";")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: unknown directive {directive:?}")]
    UnknownDirective { line: usize, directive: String },
    #[error("line {line}: expected {expected}")]
    MalformedLine { line: usize, expected: &'static str },
    #[error("line {line}: malformed checkpoint ref: {source}")]
    MalformedRef {
        line: usize,
        #[source]
        source: RefParseError,
    },
    #[error("line {line}: binomial capacity must be a positive integer, got {value:?}")]
    BadCapacity { line: usize, value: String },
    #[error("line {line}: duplicate binomial entry for loop {id:?}")]
    DuplicateBinomial { line: usize, id: String },
}

/// Parse a line-oriented config document: `inhibit NAME`, `inhibit NAME@LINE`,
/// `binomial LOOPID D`; `#` starts a comment, blank lines are ignored.
pub fn parse_config(doc: &str) -> Result<CheckpointConfig, ConfigError> {
    let mut config = CheckpointConfig::default();
    for (idx, raw_line) in doc.lines().enumerate() {
        let line = idx + 1;
        let text = raw_line.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        let mut words = text.split_whitespace();
        let directive = words.next().expect("non-empty line has a first word");
        match directive {
            "inhibit" => {
                let (Some(token), None) = (words.next(), words.next()) else {
                    return Err(ConfigError::MalformedLine {
                        line,
                        expected: "inhibit NAME or inhibit NAME@LINE",
                    });
                };
                let re: StaticRef = token
                    .parse()
                    .map_err(|source| ConfigError::MalformedRef { line, source })?;
                config.inhibited.insert(re);
            }
            "binomial" => {
                let (Some(id), Some(cap), None) = (words.next(), words.next(), words.next()) else {
                    return Err(ConfigError::MalformedLine {
                        line,
                        expected: "binomial LOOPID D",
                    });
                };
                let capacity: u64 = cap.parse().unwrap_or(0);
                if capacity < 1 {
                    return Err(ConfigError::BadCapacity {
                        line,
                        value: cap.to_string(),
                    });
                }
                if config.binomial.insert(id.to_string(), capacity).is_some() {
                    return Err(ConfigError::DuplicateBinomial {
                        line,
                        id: id.to_string(),
                    });
                }
            }
            other => {
                return Err(ConfigError::UnknownDirective {
                    line,
                    directive: other.to_string(),
                });
            }
        }
    }
    Ok(config)
}

// -------------------------------------------------------------------------
// Synthetic tree generation
// -------------------------------------------------------------------------

/// Sampling ranges for generated costs. Times are inclusive float ranges,
/// byte counts inclusive integer ranges. Forward/backward sweep times are
/// derived from `t_primal` via the overhead multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct CostRanges {
    pub t_primal: (f64, f64),
    pub fwd_overhead: (f64, f64),
    pub bwd_factor: (f64, f64),
    pub tape_bytes: (u64, u64),
    pub snapshot_bytes: (u64, u64),
    pub t_snp: (f64, f64),
}

impl Default for CostRanges {
    fn default() -> Self {
        CostRanges {
            t_primal: (0.5, 3.0),
            fwd_overhead: (1.1, 1.8),
            bwd_factor: (0.9, 1.6),
            tape_bytes: (16, 4096),
            snapshot_bytes: (16, 2048),
            t_snp: (0.05, 0.4),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GenError {
    #[error("n_calls must be positive")]
    ZeroCalls,
    #[error("max_depth must be positive")]
    ZeroDepth,
    #[error("empty or negative range for {field}")]
    BadRange { field: &'static str },
}

impl CostRanges {
    fn validate(&self) -> Result<(), GenError> {
        fn check_f(field: &'static str, (lo, hi): (f64, f64)) -> Result<(), GenError> {
            if !(lo.is_finite() && hi.is_finite()) || lo <= 0.0 || hi < lo {
                return Err(GenError::BadRange { field });
            }
            Ok(())
        }
        check_f("t_primal", self.t_primal)?;
        check_f("fwd_overhead", self.fwd_overhead)?;
        check_f("bwd_factor", self.bwd_factor)?;
        check_f("t_snp", self.t_snp)?;
        if self.tape_bytes.1 < self.tape_bytes.0 {
            return Err(GenError::BadRange { field: "tape_bytes" });
        }
        if self.snapshot_bytes.1 < self.snapshot_bytes.0 {
            return Err(GenError::BadRange {
                field: "snapshot_bytes",
            });
        }
        Ok(())
    }
}

struct ProtoBody {
    depth: usize,
    items: Vec<ProtoItem>,
}

enum ProtoItem {
    Seg(Segment),
    Call {
        re: StaticRef,
        snapshot_bytes: u64,
        t_snp_write: f64,
        t_snp_read: f64,
        body: usize,
    },
}

/// Generate a deterministic synthetic tree with exactly `n_calls` call-site
/// checkpoints nested at most `max_depth` deep. Pure in its arguments.
pub fn generate_tree(
    seed: u64,
    n_calls: usize,
    max_depth: usize,
    ranges: &CostRanges,
) -> Result<CallTree, GenError> {
    if n_calls == 0 {
        return Err(GenError::ZeroCalls);
    }
    if max_depth == 0 {
        return Err(GenError::ZeroDepth);
    }
    ranges.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample_f = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| -> f64 {
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        }
    };
    let sample_u = |rng: &mut ChaCha8Rng, (lo, hi): (u64, u64)| -> u64 { rng.random_range(lo..=hi) };

    // Procedure pool smaller than n_calls so some procs recur at several sites.
    let pool_size = n_calls.div_ceil(2).max(1);
    let procs: Vec<String> = (0..pool_size).map(|i| format!("p{i:02}")).collect();

    let mut bodies: Vec<ProtoBody> = vec![ProtoBody {
        depth: 0,
        items: Vec::new(),
    }];
    let mut next_site: u32 = 10;
    for _ in 0..n_calls {
        let open: Vec<usize> = (0..bodies.len())
            .filter(|&b| bodies[b].depth < max_depth)
            .collect();
        let parent = open[rng.random_range(0..open.len())];
        let proc = procs[rng.random_range(0..procs.len())].clone();
        let site = next_site;
        next_site += rng.random_range(1..10u32);
        let body_id = bodies.len();
        let depth = bodies[parent].depth + 1;
        bodies.push(ProtoBody {
            depth,
            items: Vec::new(),
        });
        let call = ProtoItem::Call {
            re: StaticRef::sited(proc, site),
            snapshot_bytes: sample_u(&mut rng, ranges.snapshot_bytes),
            t_snp_write: sample_f(&mut rng, ranges.t_snp),
            t_snp_read: sample_f(&mut rng, ranges.t_snp),
            body: body_id,
        };
        let at = rng.random_range(0..=bodies[parent].items.len());
        bodies[parent].items.insert(at, call);
    }

    // Every body gets at least one segment so forward sweeps do real work.
    let mut seg_counter = 0usize;
    for body in &mut bodies {
        let n_segs = rng.random_range(1..=2usize);
        for _ in 0..n_segs {
            let t_primal = sample_f(&mut rng, ranges.t_primal);
            let seg = Segment {
                label: format!("s{seg_counter:03}"),
                t_primal,
                t_fwd: t_primal * sample_f(&mut rng, ranges.fwd_overhead),
                t_bwd: t_primal * sample_f(&mut rng, ranges.bwd_factor),
                tape_bytes: sample_u(&mut rng, ranges.tape_bytes),
            };
            seg_counter += 1;
            let at = rng.random_range(0..=body.items.len());
            body.items.insert(at, ProtoItem::Seg(seg));
        }
    }

    fn build(bodies: &[ProtoBody], id: usize) -> Vec<TreeItem> {
        bodies[id]
            .items
            .iter()
            .map(|item| match item {
                ProtoItem::Seg(seg) => TreeItem::Segment(seg.clone()),
                ProtoItem::Call {
                    re,
                    snapshot_bytes,
                    t_snp_write,
                    t_snp_read,
                    body,
                } => TreeItem::Call(CallNode {
                    static_ref: re.clone(),
                    snapshot_bytes: *snapshot_bytes,
                    t_snp_write: *t_snp_write,
                    t_snp_read: *t_snp_read,
                    body: build(bodies, *body),
                }),
            })
            .collect()
    }

    let tree = CallTree {
        name: format!("gen-s{seed}-c{n_calls}"),
        items: build(&bodies, 0),
    };
    debug_assert!(tree.validate().is_ok());
    Ok(tree)
}
