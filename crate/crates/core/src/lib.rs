//! Desk-scale multi-label iterated learning.
//!
//! The crate is generic over the floating-point scalar (`f32` for training,
//! `f64` where tests want tight tolerances) and split along the pipeline:
//!
//! * [`tensor`] - dense tensors with reverse-mode autodiff
//! * [`optim`] - SGD with momentum
//! * [`nets`] - MLP / small-CNN builders with interchangeable heads
//! * [`data`] - MNIST IDX ingestion and the synthetic benchmarks
//! * [`schedule`] - losses, pseudo-labeling, and the training schedules
//! * [`metrics`] - multi-label evaluation and report files
//! * [`io`] - binary checkpoint and dataset cache files

pub mod data;
pub mod io;
pub mod metrics;
pub mod nets;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod schedule;
pub mod tensor;

pub use scalar::Scalar;
pub use tensor::{with_no_grad, Tensor, TensorError};

/// Concrete aliases for the common instantiations.
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Network32 = nets::Network<f32>;
pub type Network64 = nets::Network<f64>;
pub type Dataset32 = data::LabeledDataset<f32>;
pub type Dataset64 = data::LabeledDataset<f64>;
