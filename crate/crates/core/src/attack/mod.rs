//! GPS spoofing: the two-stage attack, its ablations, the random baseline,
//! the greedy upper-bound search and closed-loop execution.

mod closed_loop;
mod engine;
mod search;
mod spoof_error;

pub use closed_loop::ClosedLoopOutcome;
pub use engine::{
    fusion_ripper, random_attack, run_baseline, AttackBench, AttackConfig, AttackOutcome, GoalResult,
    OutcomeSummary, RunOptions, Side, SpoofRecord, Strategy,
};
pub use search::{SearchGrid, SearchResult, WindowLog};
pub use spoof_error::{apply_spoof_error, SpoofErrorModel};
