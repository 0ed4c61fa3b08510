//! Learned FB regime on tabular states.
//!
//! `F(s, a, z) = W[s, a] ψ(z)` with `ψ` a fixed set of random Fourier
//! features (plus a bias), `B` is a `|S| x d` table and the entropy critic is
//! `Q_H(s, a, z) = h[s, a] · ψ(z)`. Everything is linear in the parameters,
//! so gradients are written out by hand.
//!
//! The learned measure counts visits from `t + 1` without the `(1 - γ)`
//! factor: `F(s, a, z)ᵀ B(s') ρ(s') ≈ Σ_t γ^t Pr(s_{t+1} = s')`.

mod checkpoint;
pub mod loss;
pub mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::linalg::dot;
use crate::mdp::greedy_action;
use crate::scalar::softmax_into;
use crate::softfb::embedding::temperature;
use crate::softfb::{FbModel, ImplicitWeights, PolicyMode, PolicyOutput};
use crate::{Policy, Reward};

pub use train::{train, TrainConfig, TrainLog};

/// Random Fourier features `ψ(z) = [√(2/m) cos(ω_k · z + φ_k)]_k ++ [1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierFeatures {
    d: usize,
    n_features: usize,
    bandwidth: f64,
    seed: u64,
    omega: Vec<f64>,
    phase: Vec<f64>,
}

impl FourierFeatures {
    pub fn new(d: usize, n_features: usize, bandwidth: f64, seed: u64) -> Result<Self> {
        contract(d > 0 && n_features > 0 && bandwidth > 0.0, || {
            "feature dimensions and bandwidth must be positive".into()
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let omega = (0..n_features * d)
            .map(|_| rng.sample::<f64, _>(StandardNormal) / bandwidth)
            .collect();
        let phase = (0..n_features)
            .map(|_| rng.gen::<f64>() * std::f64::consts::TAU)
            .collect();
        Ok(Self {
            d,
            n_features,
            bandwidth,
            seed,
            omega,
            phase,
        })
    }

    /// Length of `ψ(z)`, bias included.
    pub fn len(&self) -> usize {
        self.n_features + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn eval(&self, z: &[f64]) -> Vec<f64> {
        let amp = (2.0 / self.n_features as f64).sqrt();
        let mut out: Vec<f64> = self
            .omega
            .chunks(self.d)
            .zip(&self.phase)
            .map(|(w, &p)| amp * (dot(w, z) + p).cos())
            .collect();
        out.push(1.0);
        out
    }
}

/// Trainable parameters, flat and row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FbParams {
    /// `|S||A|` blocks of `d x p`.
    pub w: Vec<f64>,
    /// `|S|` rows of length `d`.
    pub b: Vec<f64>,
    /// `|S||A|` rows of length `p`.
    pub h: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnedFbModel {
    n_states: usize,
    n_actions: usize,
    d: usize,
    gamma: f64,
    mode: PolicyMode,
    features: FourierFeatures,
    params: FbParams,
    rho: Vec<f64>,
}

/// Shape and initialisation of a fresh model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub d: usize,
    pub n_features: usize,
    pub bandwidth: f64,
    pub feature_seed: u64,
    pub init_seed: u64,
    pub forward_init_std: f64,
    pub mode: PolicyMode,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            d: 8,
            n_features: 64,
            bandwidth: 1.0,
            feature_seed: 0,
            init_seed: 0,
            forward_init_std: 0.01,
            mode: PolicyMode::Soft,
        }
    }
}

impl LearnedFbModel {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        rho: Vec<f64>,
        spec: &ModelSpec,
    ) -> Result<Self> {
        contract(gamma > 0.0 && gamma < 1.0, || format!("discount {gamma} outside (0, 1)"))?;
        if rho.len() != n_states {
            return Err(Error::Dimension(format!(
                "data distribution has {} entries for {n_states} states",
                rho.len()
            )));
        }
        let total: f64 = rho.iter().sum();
        contract(
            rho.iter().all(|&x| x >= 0.0) && (total - 1.0).abs() <= 1e-12,
            || "data distribution is not a probability vector".into(),
        )?;
        let features =
            FourierFeatures::new(spec.d, spec.n_features, spec.bandwidth, spec.feature_seed)?;
        let p = features.len();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
        let n_pairs = n_states * n_actions;
        let w = (0..n_pairs * spec.d * p)
            .map(|_| spec.forward_init_std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let b_scale = 1.0 / (spec.d as f64).sqrt();
        let b = (0..n_states * spec.d)
            .map(|_| b_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(Self {
            n_states,
            n_actions,
            d: spec.d,
            gamma,
            mode: spec.mode,
            features,
            params: FbParams {
                w,
                b,
                h: vec![0.0; n_pairs * p],
            },
            rho,
        })
    }

    pub fn mode(&self) -> PolicyMode {
        self.mode
    }

    pub fn features(&self) -> &FourierFeatures {
        &self.features
    }

    pub fn params(&self) -> &FbParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut FbParams {
        &mut self.params
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    /// Length of one `W[s, a]` block.
    pub fn block_len(&self) -> usize {
        self.d * self.features.len()
    }

    pub fn backward_row(&self, s: usize) -> &[f64] {
        &self.params.b[s * self.d..(s + 1) * self.d]
    }

    /// `F(s, a, z)` given `ψ(z)`.
    pub fn forward_with(&self, params: &FbParams, pair: usize, psi: &[f64]) -> Vec<f64> {
        let block = &params.w[pair * self.block_len()..(pair + 1) * self.block_len()];
        block.chunks(psi.len()).map(|row| dot(row, psi)).collect()
    }

    pub fn forward(&self, s: usize, a: usize, z: &[f64]) -> Vec<f64> {
        let psi = self.features.eval(z);
        self.forward_with(&self.params, s * self.n_actions + a, &psi)
    }

    pub fn critic_with(&self, params: &FbParams, pair: usize, psi: &[f64]) -> f64 {
        let p = psi.len();
        dot(&params.h[pair * p..(pair + 1) * p], psi)
    }

    pub fn critic(&self, s: usize, a: usize, z: &[f64]) -> f64 {
        let psi = self.features.eval(z);
        self.critic_with(&self.params, s * self.n_actions + a, &psi)
    }

    /// `π_z(· | s)` under `params`; `zpsi` is `z ⊗ ψ(z)` flattened, so that
    /// `F(s, a, z)ᵀ z = W[s, a] · zpsi`.
    pub(crate) fn policy_row_with(
        &self,
        params: &FbParams,
        s: usize,
        z: &[f64],
        psi: &[f64],
        zpsi: &[f64],
        mode: PolicyMode,
        out: &mut [f64],
    ) -> bool {
        let na = self.n_actions;
        let bl = self.block_len();
        let q_r = |a: usize| {
            let pair = s * na + a;
            dot(&params.w[pair * bl..(pair + 1) * bl], zpsi)
        };
        let (tau, clamped) = temperature(z);
        let greedy = mode == PolicyMode::Hard || clamped;
        if greedy {
            let q: Vec<f64> = (0..na).map(q_r).collect();
            out.fill(0.0);
            out[greedy_action(&q)] = 1.0;
        } else {
            let logits: Vec<f64> = (0..na)
                .map(|a| q_r(a) / tau + self.critic_with(params, s * na + a, psi))
                .collect();
            softmax_into(&logits, out);
        }
        clamped && mode == PolicyMode::Soft
    }

    pub(crate) fn zpsi(z: &[f64], psi: &[f64]) -> Vec<f64> {
        z.iter().flat_map(|&zi| psi.iter().map(move |&p| zi * p)).collect()
    }

    fn check_z(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.d {
            return Err(Error::Dimension(format!(
                "embedding has {} components, model dimension is {}",
                z.len(),
                self.d
            )));
        }
        contract(z.iter().all(|x| x.is_finite()), || "embedding is not finite".into())
    }
}

impl FbModel for LearnedFbModel {
    fn dim(&self) -> usize {
        self.d
    }

    fn n_states(&self) -> usize {
        self.n_states
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn discount(&self) -> f64 {
        self.gamma
    }

    fn policy(&self, z: &[f64], mode: PolicyMode) -> Result<PolicyOutput> {
        self.check_z(z)?;
        let psi = self.features.eval(z);
        let zpsi = Self::zpsi(z, &psi);
        let na = self.n_actions;
        let mut probs = vec![0.0; self.n_pairs()];
        let mut clamped = false;
        for s in 0..self.n_states {
            clamped |= self.policy_row_with(
                &self.params,
                s,
                z,
                &psi,
                &zpsi,
                mode,
                &mut probs[s * na..(s + 1) * na],
            );
        }
        Ok(PolicyOutput {
            policy: Policy::from_normalized(self.n_states, na, probs),
            clamped,
        })
    }

    /// `Σ_s ρ(s) B(s) R(s)`; the backward map only sees states.
    fn embed_reward(&self, reward: &Reward) -> Result<Vec<f64>> {
        if reward.support != crate::mdp::Support::State || reward.values.len() != self.n_states {
            return Err(Error::Dimension(
                "the learned backward map needs a state reward".into(),
            ));
        }
        let mut out = vec![0.0; self.d];
        for s in 0..self.n_states {
            let k = self.rho[s] * reward.values[s];
            for (o, &b) in out.iter_mut().zip(self.backward_row(s)) {
                *o += k * b;
            }
        }
        Ok(out)
    }

    fn expected_forward(
        &self,
        z: &[f64],
        mode: PolicyMode,
        mu0: &[f64],
    ) -> Result<(Vec<f64>, PolicyOutput)> {
        let out = self.policy(z, mode)?;
        let psi = self.features.eval(z);
        let mut f = vec![0.0; self.d];
        for (s, &m) in mu0.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for a in 0..self.n_actions {
                let w = m * out.policy.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                let fa = self.forward_with(&self.params, s * self.n_actions + a, &psi);
                for (o, x) in f.iter_mut().zip(fa) {
                    *o += w * x;
                }
            }
        }
        Ok((f, out))
    }

    fn backward_weights(&self, f: &[f64]) -> Result<ImplicitWeights> {
        if f.len() != self.d {
            return Err(Error::Dimension("forward vector has the wrong length".into()));
        }
        Ok(ImplicitWeights::NextStates(
            (0..self.n_states)
                .map(|s| dot(f, self.backward_row(s)) * self.rho[s])
                .collect(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(mode: PolicyMode) -> LearnedFbModel {
        let spec = ModelSpec {
            d: 3,
            n_features: 8,
            forward_init_std: 0.5,
            mode,
            ..ModelSpec::default()
        };
        LearnedFbModel::new(2, 3, 0.9, vec![0.25, 0.75], &spec).unwrap()
    }

    #[test]
    fn features_are_seeded_and_biased() {
        let a = FourierFeatures::new(3, 16, 1.0, 9).unwrap();
        let b = FourierFeatures::new(3, 16, 1.0, 9).unwrap();
        assert_eq!(a, b);
        let psi = a.eval(&[0.1, -0.2, 0.3]);
        assert_eq!(psi.len(), 17);
        assert_eq!(psi[16], 1.0);
        assert!(psi[..16].iter().all(|x| x.abs() <= (2.0f64 / 16.0).sqrt()));
    }

    #[test]
    fn soft_policy_matches_formula() {
        let m = tiny(PolicyMode::Soft);
        let z = [0.2, -0.1, 0.3];
        let pi = m.policy(&z, PolicyMode::Soft).unwrap().policy;
        let tau = 1.0 - crate::linalg::norm(&z);
        for s in 0..2 {
            let q: Vec<f64> = (0..3)
                .map(|a| dot(&m.forward(s, a, &z), &z) + tau * m.critic(s, a, &z))
                .collect();
            let logits: Vec<f64> = q.iter().map(|x| x / tau).collect();
            let mut expected = vec![0.0; 3];
            softmax_into(&logits, &mut expected);
            for a in 0..3 {
                assert!((pi.prob(s, a) - expected[a]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hard_and_clamped_policies_are_one_hot() {
        let m = tiny(PolicyMode::Hard);
        let hard = m.policy(&[0.6, 0.0, 0.8], PolicyMode::Hard).unwrap();
        assert!(!hard.clamped);
        let clamped = m.policy(&[0.6, 0.0, 0.8], PolicyMode::Soft).unwrap();
        assert!(clamped.clamped);
        assert_eq!(hard.policy, clamped.policy);
        assert!(hard.policy.probs().iter().all(|&p| p == 0.0 || p == 1.0));
    }

    #[test]
    fn embed_reward_is_rho_weighted() {
        let m = tiny(PolicyMode::Soft);
        let br = m.embed_reward(&Reward::state(vec![1.0, 0.0])).unwrap();
        for (i, x) in br.iter().enumerate() {
            assert!((x - 0.25 * m.backward_row(0)[i]).abs() < 1e-15);
        }
        assert!(m.embed_reward(&Reward::state_action(vec![0.0; 6])).is_err());
    }
}
