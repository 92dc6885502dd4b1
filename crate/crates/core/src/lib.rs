//! Stochastic optimization of deep canonical correlation analysis with
//! nonlinear orthogonal iterations (NOI), plus linear CCA solvers and the
//! large-minibatch trace-norm baseline (STOL).

pub mod cca;
pub mod data;
pub mod dcca;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod nn;

pub use cca::{AlsState, CcaSolution};
pub use data::{SplitData, SynthSpec};
pub use dcca::{CovTracker, DccaModel, TrainHistory};
pub use error::{Error, Result};
pub use harness::{Algorithm, ExperimentConfig};
pub use linalg::{Matrix, Ridge};
pub use nn::{Gradients, MlpParams, OptimConfig};
