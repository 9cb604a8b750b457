//! Reservation planning: fairness and efficiency of throughput violations,
//! interpolated performance profiles, key-repeat signatures, hill climbing
//! over cache and disk reservations, and elastic redistribution.

mod elastic;
mod hill;
mod metrics;
mod model;

pub use elastic::{elastic_redistribute, slowdown_steps, Elastic};
pub use hill::{
    equal_split, hill_climb, to_plan, Evaluator, HillClimbOptions, Reservation, ReservationPlan, CACHE, DISK,
};
pub use metrics::{d_score, efficiency, j_index, violation, Score, DEFAULT_ALPHA};
pub use model::{match_profile, signature, GridPoint, PerfModel, PerfProfile, GRID};
