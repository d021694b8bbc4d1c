//! Permutation-phase defense against adversarial examples.
//!
//! The classifier `h(x) = f(p(sigma(x)))` chains a secret keyed pixel
//! permutation `sigma`, a per-channel 2-D DFT phase extraction `p`, and a
//! dense softmax network `f`. This crate provides the full pipeline —
//! tensors with reverse-mode gradients, dataset loaders, the permutation and
//! phase blocks, training, a white-box / black-box attack battery, random
//! noise baselines, and the ensemble transfer-evaluation protocol.

pub mod attacks;
pub mod datasets;
pub mod ensemble;
pub mod error;
pub mod model;
pub mod noise;
pub mod permutation;
pub mod pixel2phase;
pub mod tensor;
pub mod util;

pub use error::{PpdError, Result};
pub use tensor::{NormKind, Precision, Scalar, Tensor};
