//! Simulator, profiler and schedule optimizer for call-tree checkpointing
//! in stack-based adjoint codes.
//!
//! The crate models an adjoint program as an annotated call tree, replays
//! its round trip exactly under any activation pattern of the call-site
//! checkpoints ([`sim`]), predicts the cost/benefit of inhibiting each
//! checkpoint from a single profiled run ([`profiler`]), and drives greedy
//! improvement, random baselines and exhaustive Pareto search over
//! configurations ([`optimizer`]). Time-stepping loops can additionally run
//! under binomial checkpointing ([`binomial`]).

pub mod binomial;
pub mod model;
pub mod optimizer;
pub mod profiler;
pub mod sim;

pub use binomial::{min_repetition, schedule, step_executions, Schedule, ScheduleSummary};
pub use model::{
    generate_tree, parse_config, parse_tree, serialize_tree, CallNode, CallTree, CheckpointConfig,
    ConfigError, CostRanges, GenError, LoopNode, Segment, StaticRef, TreeError, TreeItem,
};
pub use optimizer::{
    next_suggestions, optimize, pareto, random_configs, ParetoPoint, Strategy, StrategyKind,
    TrajectoryPoint,
};
pub use profiler::{
    categorize, combine, profile, profile_tree, Category, DeltaTriple, FrameStats,
    PendingOccurrence, ProfileError, ProfileReport, Suggestion,
};
pub use sim::{
    capture_events, emit_events, loop_cost, simulate, simulate_primal, AdjointCost, EventKind,
    EventSink, LoopCost, SimError, TraceEvent,
};
