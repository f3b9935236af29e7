//! Recovery of sparse vectors from random sinusoidal features.
//!
//! Features are `y = link(D B x) + e` with `link` either `exp(i .)` or
//! `sin(.)`, `B` a `q x n` matrix and `D` a stack of `k` diagonal blocks.
//! [`mf_sparse`] estimates each coordinate of `B x` by matched filtering and
//! then recovers `x` with CoSaMP.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the usual choices.

pub mod baselines;
pub mod embed;
pub mod error;
pub mod harness;
pub mod linmap;
pub mod model;
pub mod pipeline;
pub mod recovery;
pub mod scalar;
pub mod seed;
pub mod spectral;
pub mod transforms;

pub use baselines::{ght, one_step_threshold, GhtConfig, StepRule};
pub use embed::{forward, make_operator, make_structured_operator, synthesize_signal, BlockDist, InnerDist, OperatorSpec};
pub use error::{Error, Result};
pub use harness::{run_experiment, run_image_experiment, Algorithm, ExperimentConfig, ExperimentKind, TrialRecord};
pub use linmap::LinearMap;
pub use model::{BlockDiagonal, FeatureData, FeatureVector, LinkType, SensingOperator, SparseSignal, ToneGrid};
pub use pipeline::{default_params, metrics, mf_sparse, uniform_grid_sparse, MfSparseOutput};
pub use recovery::{cosamp, hard_threshold, CosampConfig};
pub use scalar::Real;

pub type Signal = SparseSignal<f64>;
pub type Signal32 = SparseSignal<f32>;
pub type Operator = SensingOperator<f64>;
pub type Operator32 = SensingOperator<f32>;
pub type Features = FeatureVector<f64>;
pub type Features32 = FeatureVector<f32>;
pub type Grid = ToneGrid<f64>;
pub type Grid32 = ToneGrid<f32>;
