//! Experiment designs and the statistics used to monitor them.

mod assign;
mod def;
mod matching;
mod stats;

pub use assign::{assign_cluster, assign_fixed, schedule_micro, MicroAction};
pub use def::{
    ArmSpec, AssignmentTable, ControlAction, Design, ExperimentDef, ExperimentError, ExperimentStatus,
    IllegalStatusChange, PolicyKind, CONTROL, DEFAULT_CADENCE_DAYS, TREATMENT,
};
pub use matching::{pairwise_match, EXACT_MATCH_LIMIT};
pub use stats::{effect_trend, estimate_daily_diff, flag_significance, DailyEstimate};
