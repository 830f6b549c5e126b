//! Networks, the Gaussian policy head, generalized advantage estimation,
//! and the PPO learner, built on a small hand-rolled gradient engine.
//!
//! Everything is generic over the scalar type: training runs in `f32`,
//! while the finite-difference gradient checks exercise the identical code
//! path in `f64`.

pub mod gae;
pub mod mlp;
pub mod ppo;

pub use gae::gae;
pub use mlp::{AdamState, Dense, Mlp, MlpGrads};
pub use ppo::{
    gaussian_entropy, gaussian_log_prob, policy_loss_grads, value_loss_grads, PolicyLossStats,
    PpoConfig, PpoLearner, RolloutBuffer, UpdateStats,
};

/// Scalar type of the network stack.
pub trait Real:
    ndarray::LinalgScalar
    + num_traits::Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn into_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn into_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn into_f64(self) -> f64 {
        self
    }
}
