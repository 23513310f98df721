//! Cooperative-initialization training for small convolutional networks.
//!
//! Training runs in two phases. In phase 1 every activation site computes an
//! equal-weight mixture of several activation functions, so the gradient
//! reaching each layer aggregates all branches. In phase 2 the sites are
//! swapped to a single activation (normally ReLU) and training continues
//! from the phase-1 weights.
//!
//! The crate is self-contained: tensors, a reverse-mode tape, the layer
//! kernels, SGD, dataset loaders and the experiment drivers all live here.

pub mod activations;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod network;
pub mod ops;
pub mod optim;
pub mod tensor;
pub mod trainer;

pub use activations::{Activation, MixedActivation, SlotActivation};
pub use autodiff::{Gradients, Tape, Var};
pub use data::{DatasetPair, Normalization, Split};
pub use error::{Error, Result};
pub use network::{Architecture, InitScheme, Network};
pub use optim::{Sgd, StepSchedule};
pub use tensor::{DType, Scalar, Tensor};
pub use trainer::{
    phase_swap, run_plan, Checkpoint, MetricsRecord, Mode, RunOutput, TrainPlan, Trainer,
};
