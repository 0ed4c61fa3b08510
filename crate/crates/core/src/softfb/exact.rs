//! Exact FB regime: for a given backward matrix `B` over state-action pairs
//! and an embedding `z`, solve the joint fixed point
//! `F_zᵀ = M^{π_z} B⁺`, `π_z = softmax(Q^z / (1 - ‖z‖))` by policy iteration.
//!
//! `F_zᵀ z` is in the `(1 - γ)`-normalised units of the successor measure,
//! so it is divided by `1 - γ` before being combined with the entropy
//! critic. With that scaling `π_z` is the maximum-entropy optimal policy for
//! the reward `B⁺ z / (1 - ‖z‖)`.

use crate::error::{contract, Error, Result};
use crate::linalg::{dot, Matrix};
use crate::mdp::{
    greedy_action, successor_measure, RewardVector, StochasticPolicy, SuccessorMeasure,
    TabularMdp,
};
use crate::scalar::{softmax_into, Scalar};
use crate::softfb::embedding::{temperature, unreparameterize};
use crate::softfb::{FbModel, ImplicitWeights, PolicyMode, PolicyOutput};
use crate::Reward;

/// Singular values of `B` at or below this count as rank deficiency.
pub const RANK_TOL: f64 = 1e-8;
/// Cutoff used when forming `B⁺`.
pub const PINV_CUTOFF: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct ExactFbModel<T> {
    mdp: TabularMdp<T>,
    backward: Matrix<T>,
    backward_pinv: Matrix<T>,
    tol: T,
    max_iter: usize,
}

/// One member of the exact policy family.
#[derive(Clone, Debug)]
pub struct ExactSlice<T> {
    /// `F_zᵀ`, one row per state-action pair.
    pub forward_t: Matrix<T>,
    pub policy: StochasticPolicy<T>,
    pub measure: SuccessorMeasure<T>,
    /// Soft (or, in hard mode, plain) Q-values of `π_z` for the reward `B⁺ z`.
    pub q: Vec<T>,
    pub iterations: usize,
    pub clamped: bool,
    /// `d < |S||A|`: `F_zᵀ B` only approximates the successor measure.
    pub approximate: bool,
}

impl<T: Scalar> ExactFbModel<T> {
    /// `backward` is `d x |S||A|` and must have full row rank.
    pub fn new(mdp: TabularMdp<T>, backward: Matrix<T>) -> Result<Self> {
        if backward.cols() != mdp.n_pairs() {
            return Err(Error::Dimension(format!(
                "B has {} columns for {} state-action pairs",
                backward.cols(),
                mdp.n_pairs()
            )));
        }
        contract(backward.rows() <= backward.cols(), || {
            "B cannot have more rows than state-action pairs".into()
        })?;
        let sv = backward.singular_values()?;
        let smallest = sv.last().copied().unwrap_or(T::zero());
        contract(smallest > T::lit(RANK_TOL), || {
            format!("B is rank deficient (smallest singular value {smallest})")
        })?;
        let backward_pinv = backward.pseudo_inverse(T::lit(PINV_CUTOFF))?;
        Ok(Self {
            mdp,
            backward,
            backward_pinv,
            tol: T::lit(1e-12),
            max_iter: 1000,
        })
    }

    /// `B = I`, so that embeddings are rewards over pairs.
    pub fn identity(mdp: TabularMdp<T>) -> Result<Self> {
        let n = mdp.n_pairs();
        Self::new(mdp, Matrix::identity(n))
    }

    pub fn with_tolerance(mut self, tol: T, max_iter: usize) -> Self {
        self.tol = tol;
        self.max_iter = max_iter;
        self
    }

    pub fn mdp(&self) -> &TabularMdp<T> {
        &self.mdp
    }

    pub fn backward(&self) -> &Matrix<T> {
        &self.backward
    }

    pub fn dim(&self) -> usize {
        self.backward.rows()
    }

    /// Reward over pairs that `z` encodes: `B⁺ z`.
    pub fn decode(&self, z: &[T]) -> Result<Vec<T>> {
        self.backward_pinv.mul_vec(z)
    }

    pub fn fixed_point(&self, z: &[T], mode: PolicyMode) -> Result<ExactSlice<T>> {
        if z.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "embedding has {} components, model dimension is {}",
                z.len(),
                self.dim()
            )));
        }
        contract(z.iter().all(|x| x.is_finite()), || "embedding is not finite".into())?;
        let (_, clamped) = temperature(z);
        let (policy, q, iterations) = match mode {
            PolicyMode::Soft if !clamped => {
                let reward = self.decode(&unreparameterize(z))?;
                self.soft_policy_iteration(&reward)?
            }
            _ => {
                let reward = self.decode(z)?;
                self.hard_policy_iteration(&reward)?
            }
        };
        let measure = successor_measure(&self.mdp, &policy)?;
        let forward_t = measure.sa_matrix.matmul(&self.backward_pinv)?;
        Ok(ExactSlice {
            forward_t,
            policy,
            measure,
            q,
            iterations,
            clamped: clamped && mode == PolicyMode::Soft,
            approximate: self.dim() < self.mdp.n_pairs(),
        })
    }

    /// Soft Q of `π` for reward `r`:
    /// `Q = M (r + γ P H_π) / (1 - γ)`, with `M` the normalised measure.
    fn soft_q(&self, policy: &StochasticPolicy<T>, reward: &[T]) -> Result<Vec<T>> {
        let mdp = &self.mdp;
        let gamma = mdp.discount();
        let h = policy.entropies();
        let target: Vec<T> = (0..mdp.n_states())
            .flat_map(|s| (0..mdp.n_actions()).map(move |a| (s, a)))
            .map(|(s, a)| reward[mdp.pair(s, a)] + gamma * dot(mdp.next_dist(s, a), &h))
            .collect();
        let m = successor_measure(mdp, policy)?;
        let scale = T::one() / (T::one() - gamma);
        Ok(m.sa_matrix.mul_vec(&target)?.into_iter().map(|x| x * scale).collect())
    }

    fn soft_policy_iteration(&self, reward: &[T]) -> Result<(StochasticPolicy<T>, Vec<T>, usize)> {
        let (ns, na) = (self.mdp.n_states(), self.mdp.n_actions());
        let mut policy = StochasticPolicy::uniform(ns, na);
        let mut change = T::infinity();
        for it in 1..=self.max_iter {
            let q = self.soft_q(&policy, reward)?;
            let mut probs = vec![T::zero(); ns * na];
            for (qr, pr) in q.chunks(na).zip(probs.chunks_mut(na)) {
                softmax_into(qr, pr);
            }
            let next = StochasticPolicy::from_normalized(ns, na, probs);
            change = next.max_tv(&policy);
            policy = next;
            if change <= self.tol {
                let q = self.soft_q(&policy, reward)?;
                return Ok((policy, q, it));
            }
        }
        Err(Error::NonConvergence {
            what: "exact soft fixed point",
            iterations: self.max_iter,
            residual: change.as_f64(),
        })
    }

    fn hard_policy_iteration(&self, reward: &[T]) -> Result<(StochasticPolicy<T>, Vec<T>, usize)> {
        let (ns, na) = (self.mdp.n_states(), self.mdp.n_actions());
        let mut actions: Vec<usize> = reward.chunks(na).map(greedy_action).collect();
        for it in 1..=self.max_iter {
            let policy = StochasticPolicy::deterministic(na, &actions)?;
            let m = successor_measure(&self.mdp, &policy)?;
            let q = m.sa_matrix.mul_vec(reward)?;
            let mut changed = false;
            for s in 0..ns {
                let row = &q[s * na..(s + 1) * na];
                let best = greedy_action(row);
                let margin = T::epsilon() * T::lit(64.0) * (T::one() + row[best].abs());
                if row[best] > row[actions[s]] + margin {
                    actions[s] = best;
                    changed = true;
                }
            }
            if !changed {
                return Ok((policy, q, it));
            }
        }
        Err(Error::NonConvergence {
            what: "exact hard policy iteration",
            iterations: self.max_iter,
            residual: f64::NAN,
        })
    }
}

/// Free-function form of [`ExactFbModel::fixed_point`].
pub fn exact_fixed_point<T: Scalar>(
    mdp: &TabularMdp<T>,
    backward: &Matrix<T>,
    z: &[T],
    mode: PolicyMode,
    tol: T,
) -> Result<ExactSlice<T>> {
    ExactFbModel::new(mdp.clone(), backward.clone())?
        .with_tolerance(tol, 1000)
        .fixed_point(z, mode)
}

impl FbModel for ExactFbModel<f64> {
    fn dim(&self) -> usize {
        self.backward.rows()
    }

    fn n_states(&self) -> usize {
        self.mdp.n_states()
    }

    fn n_actions(&self) -> usize {
        self.mdp.n_actions()
    }

    fn discount(&self) -> f64 {
        self.mdp.discount()
    }

    fn policy(&self, z: &[f64], mode: PolicyMode) -> Result<PolicyOutput> {
        let slice = self.fixed_point(z, mode)?;
        Ok(PolicyOutput {
            policy: slice.policy,
            clamped: slice.clamped,
        })
    }

    fn embed_reward(&self, reward: &Reward) -> Result<Vec<f64>> {
        let r = reward.per_pair(self.mdp.n_states(), self.mdp.n_actions())?;
        self.backward.mul_vec(&r)
    }

    fn expected_forward(
        &self,
        z: &[f64],
        mode: PolicyMode,
        mu0: &[f64],
    ) -> Result<(Vec<f64>, PolicyOutput)> {
        let slice = self.fixed_point(z, mode)?;
        let nu: Vec<f64> = (0..self.mdp.n_pairs())
            .map(|i| {
                let (s, a) = (i / self.mdp.n_actions(), i % self.mdp.n_actions());
                mu0[s] * slice.policy.prob(s, a)
            })
            .collect();
        let f = slice.forward_t.vec_mul(&nu)?;
        Ok((
            f,
            PolicyOutput {
                policy: slice.policy,
                clamped: slice.clamped,
            },
        ))
    }

    fn backward_weights(&self, f: &[f64]) -> Result<ImplicitWeights> {
        Ok(ImplicitWeights::Pairs(self.backward.vec_mul(f)?))
    }
}

/// Reward vector whose embedding under `B = I` is `z`; handy in tests and demos.
pub fn pair_reward(values: Vec<f64>) -> RewardVector<f64> {
    RewardVector::state_action(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_counterexample, make_random_mdp};
    use crate::linalg::{l1_distance, norm};
    use crate::mdp::{maxent_return, soft_value_iteration, SolverOptions};
    use crate::scalar::entropy;
    use crate::softfb::embedding::reparameterize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_invertible(n: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
        let mut b = Matrix::identity(n);
        for i in 0..n {
            for j in 0..n {
                b[(i, j)] += 0.3 * (rng.gen::<f64>() - 0.5);
            }
        }
        b
    }

    #[test]
    fn identity_backward_recovers_soft_oracle() {
        let mdp = make_random_mdp::<f64>(3, 2, 0.8, 11).unwrap();
        let model = ExactFbModel::identity(mdp.clone()).unwrap();
        let r = vec![0.5, -1.0, 2.0, 0.1, 0.0, 1.2];
        let slice = model.fixed_point(&reparameterize(&r), PolicyMode::Soft).unwrap();
        let oracle =
            soft_value_iteration(&mdp, &pair_reward(r.clone()), &SolverOptions::default()).unwrap();
        assert!(slice.policy.max_tv(&oracle.policy) < 1e-6);
        for (a, b) in slice.q.iter().zip(&oracle.q) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn origin_gives_max_entropy_policy() {
        let mdp = make_random_mdp::<f64>(3, 3, 0.7, 4).unwrap();
        let model = ExactFbModel::identity(mdp.clone()).unwrap();
        let slice = model.fixed_point(&[0.0; 9], PolicyMode::Soft).unwrap();
        let oracle =
            soft_value_iteration(&mdp, &pair_reward(vec![0.0; 9]), &SolverOptions::default())
                .unwrap();
        let m = successor_measure(&mdp, &oracle.policy).unwrap();
        assert!(slice.measure.sa_matrix.max_abs_diff(&m.sa_matrix) < 1e-6);
    }

    #[test]
    fn single_state_origin_is_uniform() {
        let model = ExactFbModel::identity(make_counterexample(0.5).unwrap()).unwrap();
        let out = model.policy(&[0.0, 0.0], PolicyMode::Soft).unwrap();
        assert!((out.policy.prob(0, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn counterexample_hard_mode() {
        let model = ExactFbModel::identity(make_counterexample(0.5).unwrap()).unwrap();
        let a0 = model.fixed_point(&[2.0, 1.0], PolicyMode::Hard).unwrap();
        assert_eq!(a0.policy.prob(0, 0), 1.0);
        let expected = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        assert!(a0.measure.sa_matrix.max_abs_diff(&expected) < 1e-12);
        let a1 = model.fixed_point(&[1.0, 2.0], PolicyMode::Hard).unwrap();
        let expected = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.0, 1.0]]).unwrap();
        assert!(a1.measure.sa_matrix.max_abs_diff(&expected) < 1e-12);
        // ties go to the lowest index
        let tie = model.fixed_point(&[1.0, 1.0], PolicyMode::Hard).unwrap();
        assert_eq!(tie.policy.prob(0, 0), 1.0);
    }

    #[test]
    fn entropy_decreases_with_norm() {
        let model = ExactFbModel::identity(make_counterexample(0.5).unwrap()).unwrap();
        let u = [0.8, 0.6];
        let entropies: Vec<f64> = [0.25, 0.5, 0.75]
            .iter()
            .map(|&n| {
                let z = [u[0] * n, u[1] * n];
                entropy(model.policy(&z, PolicyMode::Soft).unwrap().policy.row(0))
            })
            .collect();
        assert!(entropies[0] > entropies[1] && entropies[1] > entropies[2]);
    }

    #[test]
    fn clamped_temperature_falls_back_to_greedy() {
        let model = ExactFbModel::identity(make_counterexample(0.5).unwrap()).unwrap();
        let out = model.policy(&[0.6, 0.8], PolicyMode::Soft).unwrap();
        assert!(out.clamped);
        assert_eq!(out.policy.prob(0, 1), 1.0);
    }

    #[test]
    fn invertible_backward_matches_maxent_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..5 {
            let mdp = make_random_mdp::<f64>(3, 2, 0.9, seed).unwrap();
            let b = random_invertible(6, &mut rng);
            let model = ExactFbModel::new(mdp.clone(), b.clone()).unwrap();
            let r: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let z = reparameterize(&b.mul_vec(&r).unwrap());
            let slice = model.fixed_point(&z, PolicyMode::Soft).unwrap();
            let reward = pair_reward(r);
            let opt = soft_value_iteration(&mdp, &reward, &SolverOptions::default()).unwrap();
            let got = maxent_return(&mdp, &slice.policy, &reward).unwrap();
            let best = maxent_return(&mdp, &opt.policy, &reward).unwrap();
            assert!((got - best).abs() < 1e-8);
            // F_zᵀ B reproduces the measure when B is square
            let implied = slice.forward_t.matmul(&b).unwrap();
            assert!(implied.max_abs_diff(&slice.measure.sa_matrix) < 1e-9);
        }
    }

    #[test]
    fn smooth_in_the_embedding() {
        let mdp = make_random_mdp::<f64>(3, 2, 0.8, 2).unwrap();
        let model = ExactFbModel::identity(mdp).unwrap();
        let z = reparameterize(&[0.4, -0.2, 0.9, 0.1, -0.5, 0.3]);
        let u: Vec<f64> = {
            let raw = [1.0, 2.0, -1.0, 0.5, 0.0, -0.3];
            let n = norm(&raw);
            raw.iter().map(|x| x / n).collect()
        };
        let m0 = model.fixed_point(&z, PolicyMode::Soft).unwrap().measure.marginal;
        let slope = |delta: f64| {
            let zp: Vec<f64> = z.iter().zip(&u).map(|(a, b)| a + delta * b).collect();
            let m = model.fixed_point(&zp, PolicyMode::Soft).unwrap().measure.marginal;
            l1_distance(&m, &m0) / delta
        };
        let (s3, s4) = (slope(1e-3), slope(1e-4));
        assert!(s3.is_finite() && s3 < 1e3);
        assert!((0.5..=2.0).contains(&(s3 / s4)));
    }

    #[test]
    fn rank_deficient_backward_is_rejected() {
        let mdp = make_counterexample::<f64>(0.5).unwrap();
        let b = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        assert!(matches!(ExactFbModel::new(mdp, b), Err(Error::Contract(_))));
    }

    #[test]
    fn low_dimensional_backward_is_flagged() {
        let mdp = make_counterexample::<f64>(0.5).unwrap();
        let b = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let model = ExactFbModel::new(mdp, b).unwrap();
        assert!(model.fixed_point(&[0.3], PolicyMode::Soft).unwrap().approximate);
    }

    #[test]
    fn single_precision_fixed_point() {
        let mdp = make_counterexample::<f32>(0.5).unwrap();
        let model = ExactFbModel::identity(mdp).unwrap().with_tolerance(1e-6, 1000);
        let out = model.fixed_point(&[0.0, 0.0], PolicyMode::Soft).unwrap();
        assert!((out.policy.prob(0, 0) - 0.5).abs() < 1e-6);
    }
}
