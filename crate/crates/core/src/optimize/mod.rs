//! Bound formulations for cluster-mean eigenvalue optimization and the MMA loop.

pub mod mma;
pub mod problem;
pub mod run;

pub use mma::{Mma, MmaParams};
pub use problem::{
    report_fractions, volume_constraints, BoundProblem, DesignState, Evaluation, Formulation, ProblemSpec, Spectrum,
};
pub use run::{run, IterationRecord, Observer, RunOutput};
