//! Latent-variable models of token sequences, with the full inference and
//! learning menu: exact enumeration, EM, variational EM, SVI, amortized
//! inference (VAE), score-function / reparameterized / relaxed / importance-
//! weighted gradient estimators, normalizing flows, and wake-sleep. Every
//! stochastic estimator is cross-checkable against enumeration oracles at
//! desk scale.

pub mod dist;
pub mod em;
pub mod estimators;
pub mod exact;
pub mod flows;
pub mod harness;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod training;
pub mod util;
pub mod variational;
pub mod wake_sleep;

pub use rng::Rng;
pub use tensor::{grad_check, no_grad, Optimizer, ParamSet, Tensor};
