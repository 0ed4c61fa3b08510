//! Zero-shot reinforcement learning on tabular MDPs with soft
//! forward-backward representations.

pub mod envs;
pub mod inference;
pub mod error;
pub mod knn;
pub mod linalg;
pub mod mdp;
pub mod measures;
pub mod scalar;
pub mod softfb;
pub mod utilities;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mdp = mdp::TabularMdp<f64>;
pub type Policy = mdp::StochasticPolicy<f64>;
pub type Reward = mdp::RewardVector<f64>;
pub type Mat = linalg::Matrix<f64>;
