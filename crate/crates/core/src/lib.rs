//! Simulation of stochastic local intensity loss models: the interacting
//! particle system, the local-intensity baseline, the discrete-factor
//! forward equation, pathwise estimators and a convergence harness.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod convergence;
pub mod discrete;
pub mod error;
pub mod estimators;
pub mod exec;
pub mod factor;
pub mod li;
pub mod model;
pub mod particle;
pub mod rng;

pub use convergence::{ConvergenceStudy, Estimator, RegressionResult, SystemSpec};
pub use discrete::{DiscreteModel, FpOptions, FpState, GeneratorFamily};
pub use error::{Result, SliError};
pub use estimators::{GapConvention, PmfEstimate, ScalarEstimate};
pub use factor::{CirParams, CirScheme, FactorDynamics, FactorState, LogNormalParams, OuDrift};
pub use model::{ClampF, LocalIntensity, ModelParams, SliModel, WeightFn};
pub use particle::{run_system, Algorithm, EngineOptions, InitialLaw, PathRecord, SystemRun};
