//! Exact verification of the generalization bounds on small finite GBMDPs.

mod checks;
mod finite;
mod random;
mod suite;

pub use checks::{
    check_performance_difference, check_occupancy_shift, check_generalization_bound, check_aligned_representation, compose, Inequality, LambdaVariant, LatentTable,
    MixHead, OccupancyShift, BoundOptions, GeneralizationReport, AlignmentReport, TOL,
};
pub use finite::{
    avg_tv, d_pidpi, joint_occupancy, objective, occupancy, optimal_invariant_policy, tv, FiniteGbmdp, JointDist,
    PolicyClass, TabularPolicy, MAX_ACTIONS, MAX_STATES,
};
pub use random::{random_instance, random_policy, InstanceSpec};
pub use suite::{run_suite, CheckRecord, SuiteConfig, SuiteReport};
