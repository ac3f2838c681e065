//! Dense reverse-mode automatic differentiation with support for
//! differentiating through gradients, plus the small neural-network toolkit
//! built on it (MLPs, spectral normalization, Adam, gradient penalty).

mod checkpoint;
mod nn;
mod optim;
mod penalty;
mod tape;
mod tensor;

pub use checkpoint::{TensorArchive, CHECKPOINT_VERSION};
pub use nn::{Activation, Linear, LinearVars, Mlp, MlpVars, SpectralState, SIGMA_FLOOR};
pub use optim::{AdamConfig, AdamState};
pub use penalty::{gradient_penalty, penalty_at};
pub use tape::{bce, mse, Tape, Var, BCE_CLAMP};
pub use tensor::Tensor;
