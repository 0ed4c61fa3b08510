//! Forward-backward representations and the policy families they induce.
//!
//! Two regimes share the [`FbModel`] interface: [`exact::ExactFbModel`]
//! solves the FB fixed point by linear algebra, [`learned::LearnedFbModel`]
//! is trained from an offline dataset.

pub mod embedding;
pub mod exact;
pub mod learned;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::{Policy, Reward};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    /// Greedy on `F(s, ·, z)ᵀ z`, embeddings on the unit sphere.
    Hard,
    /// `softmax(Q^z / (1 - ‖z‖))`, embeddings inside the unit ball.
    Soft,
}

#[derive(Clone, Debug)]
pub struct PolicyOutput {
    pub policy: Policy,
    /// The temperature hit its floor and the greedy policy was used instead.
    pub clamped: bool,
}

/// Unclamped implicit-measure weights `E_{μ0, π_z}[F(s0, a0, z)]ᵀ B(x)`.
#[derive(Clone, Debug, PartialEq)]
pub enum ImplicitWeights {
    /// Over state-action pairs, discounting from `t = 0` (exact regime).
    Pairs(Vec<f64>),
    /// Over next states `s_{t+1}`, already multiplied by `ρ` (learned regime).
    NextStates(Vec<f64>),
}

pub trait FbModel: Sync {
    fn dim(&self) -> usize;
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn discount(&self) -> f64;

    /// `π_z`; in soft mode `z` must already be reparameterised.
    fn policy(&self, z: &[f64], mode: PolicyMode) -> Result<PolicyOutput>;

    /// Backward projection `B R` of a reward.
    fn embed_reward(&self, reward: &Reward) -> Result<Vec<f64>>;

    /// `E_{s0 ~ μ0, a0 ~ π_z}[F(s0, a0, z)]` together with `π_z`.
    fn expected_forward(
        &self,
        z: &[f64],
        mode: PolicyMode,
        mu0: &[f64],
    ) -> Result<(Vec<f64>, PolicyOutput)>;

    /// `fᵀ B(·)` for a forward vector `f`.
    fn backward_weights(&self, f: &[f64]) -> Result<ImplicitWeights>;
}
