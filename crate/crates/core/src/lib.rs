//! Approximate controllability of second-order evolution inclusions, computed on
//! a truncated sine basis.
//!
//! The pipeline runs bottom-up: [`space`] holds spectral vectors and operators,
//! [`families`] builds the evolution kernel `S(t,s)`, [`synthesis`] assembles the
//! controllability Gramian and the regularized control law, and [`inclusion`]
//! solves the controlled inclusion (optionally nonlocal and impulsive) by Picard
//! iteration. [`oracle`] holds independent brute-force references, and
//! [`scenario`] plus [`workbench`] drive experiments from TOML files.

pub mod error;
pub mod families;
pub mod inclusion;
pub mod oracle;
pub mod scenario;
pub mod space;
pub mod synthesis;
pub mod workbench;

pub use error::{Error, Result};
pub use families::{
    build_kernel, verify_axioms, DampingProfile, DampingSpec, EvolutionKernel, TimeGrid,
};
pub use inclusion::{
    impulsive_solve, nonlocal_solve, picard_solve, sweep_regularization, ControlProblem,
    ImpulseSpec, MildSolution, NonlocalSpec, SelectionStrategy, SetValuedMap,
};
pub use scenario::{load_scenario, Scenario};
pub use space::{ModeSet, OperatorMatrix, SpectralVector, C64};
pub use synthesis::{assemble_gramian, Gramian, RegularizationParam};
