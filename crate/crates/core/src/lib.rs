//! Differentially private training with per-microbatch gradient conditioning.
//!
//! The crate is split along the training pipeline:
//!
//! * [`tensor`] and [`model`]: dense arithmetic plus hand-derived backprop for
//!   logistic regression and a one-hidden-layer perceptron.
//! * [`transform`]: the L2 clip used by classic DP-SGD and the scaled tanh
//!   filter `c * tanh(g / k)`.
//! * [`optimizer`]: Poisson-sampled minibatches, per-microbatch gradients,
//!   Gaussian noise, parameter update.
//! * [`accountant`]: Renyi-DP of the subsampled Gaussian mechanism and the
//!   conversion to `(epsilon, delta)`.
//! * [`data`]: MNIST IDX and CIFAR-10 binary loaders, synthetic Gaussian blobs.
//! * [`experiment`]: sweeps over named training configs, writing CSV metrics
//!   and a JSON manifest.

pub mod accountant;
pub mod data;
pub mod error;
pub mod experiment;
pub mod model;
pub mod optimizer;
pub mod rng;
pub mod tensor;
pub mod transform;

pub use accountant::{PrivacyLedger, RdpCurve};
pub use data::Dataset;
pub use error::{Error, Result};
pub use model::{Activation, Model};
pub use optimizer::{NoiseMode, RunMetrics, StepRecord, TrainConfig};
pub use tensor::Tensor;
pub use transform::GradientTransform;

/// Library version recorded in experiment manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
