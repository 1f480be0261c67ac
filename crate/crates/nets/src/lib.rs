//! Reverse-mode autodiff over dense f64 tensors and the material,
//! shape-completion and re-identification networks built on it.

pub mod checkpoint;
mod gemm;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod models;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod train;

pub use graph::{Grads, Graph, Var};
pub use models::{MaterialNet, Modality, Network, ReidInput, ReidNet, ShapeNet, ShapeNetDims};
pub use optim::{OptimizerKind, StepDecay, TrainConfig};
pub use params::ParamStore;
pub use tensor::Tensor;
pub use train::{train, EpochSource, Objective, TrainOutcome};
