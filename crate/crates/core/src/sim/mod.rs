//! Simulation harness: data generators with known conditional laws, true-risk
//! regret accounting against an offline comparator, and empirical diagnostics.
//!
//! Risks are stored as `KL(P_t, forecast)`. The usual expected log-score risk
//! differs from it by the entropy of `P_t`, which does not depend on the
//! forecaster and cancels in every regret.

pub mod comparator;
pub mod diagnostics;
pub mod experiment;
pub mod family;
pub mod generator;

pub use comparator::{comparator_search, Certificate, Comparator, SearchOptions};
pub use diagnostics::{
    check_h2_empirical, check_pathwise_bounds, check_pathwise_bounds_with, BoaBoundForm, BoaTrace, H2Report, OnsTrace,
    PathwiseReport, PathwiseTrace,
};
pub use experiment::{
    run_experiment, ExperimentConfig, ExperimentRun, ExpertSummary, LearnerSpec, RegretRecord, RngKind,
};
pub use family::{FamilySpec, LossEval, RiskModel, Round};
pub use generator::{GeneratorKind, Series, RNG_NAME};
