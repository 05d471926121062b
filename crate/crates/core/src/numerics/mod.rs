//! Dense matrices, activation/loss primitives, optimizers, and gradient checking.

pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod paramvec;
pub mod tensor;

use serde::{Deserialize, Serialize};

pub use gradcheck::{grad_check, GradCheckReport};
pub use ops::{cross_entropy, linear, sigmoid, softmax};
pub use optim::{adamw_step, sgd_step, AdamWConfig, OptimizerState};
pub use paramvec::{Dtype, ParamVector};
pub use tensor::Tensor2;

/// Numeric profile. Arithmetic is always carried out in f64; the run profile
/// stores parameters as f32 on disk and rounds them through f32 whenever a
/// model leaves a client or the server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Test,
    Run,
}

impl Profile {
    pub fn dtype(self) -> Dtype {
        match self {
            Profile::Test => Dtype::F64,
            Profile::Run => Dtype::F32,
        }
    }
}
