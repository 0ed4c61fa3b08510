//! Training losses and their analytic gradients.
//!
//! Targets (policy at the next state, target-network forward and critic
//! values) are computed once per batch by [`compute_targets`], so each loss
//! is a pure function of the live parameters.

use crate::error::{contract, Result};
use crate::linalg::dot;
use crate::softfb::learned::{FbParams, LearnedFbModel};

/// Floor applied to probabilities inside `log π`.
pub const LOG_PROB_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    /// State drawn from `ρ` for the off-diagonal Bellman term.
    pub goal: usize,
    pub z: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SampleTargets {
    pub psi: Vec<f64>,
    /// `Σ_{a'} π_z(a'|s') F̄(s', a', z)`.
    pub f_bar: Vec<f64>,
    /// `B̄(goal)`.
    pub b_bar_goal: Vec<f64>,
    /// `Σ_{a'} π_z(a'|s') (Q̄_H(s', a', z) - log π_z(a'|s'))`.
    pub q_bar: f64,
}

#[derive(Clone, Debug)]
pub struct BatchTargets {
    pub items: Vec<SampleTargets>,
}

/// Sparse gradient over fixed-length parameter rows.
#[derive(Clone, Debug, Default)]
pub struct RowGrads {
    pub rows: Vec<(usize, Vec<f64>)>,
}

impl RowGrads {
    fn slot(&mut self, row: usize, len: usize) -> &mut Vec<f64> {
        let pos = match self.rows.iter().position(|(r, _)| *r == row) {
            Some(p) => p,
            None => {
                self.rows.push((row, vec![0.0; len]));
                self.rows.len() - 1
            }
        };
        &mut self.rows[pos].1
    }

    /// Adds `k · (u ⊗ v)` to `row`.
    fn add_outer(&mut self, row: usize, k: f64, u: &[f64], v: &[f64]) {
        let g = self.slot(row, u.len() * v.len());
        for (i, &ui) in u.iter().enumerate() {
            let c = k * ui;
            for (gj, &vj) in g[i * v.len()..(i + 1) * v.len()].iter_mut().zip(v) {
                *gj += c * vj;
            }
        }
    }

    fn add_scaled(&mut self, row: usize, k: f64, v: &[f64]) {
        let g = self.slot(row, v.len());
        for (gj, &vj) in g.iter_mut().zip(v) {
            *gj += k * vj;
        }
    }

    pub fn get(&self, row: usize) -> Option<&[f64]> {
        self.rows.iter().find(|(r, _)| *r == row).map(|(_, g)| g.as_slice())
    }
}

#[derive(Clone, Debug)]
pub struct FbGrad {
    pub w: RowGrads,
    /// Dense over `B`, `|S| x d`.
    pub b: Vec<f64>,
}

pub fn compute_targets(
    model: &LearnedFbModel,
    target: &FbParams,
    batch: &[Sample],
) -> Result<BatchTargets> {
    contract(!batch.is_empty(), || "empty batch".into())?;
    let na = model.n_actions;
    let d = model.d;
    let mut pi = vec![0.0; na];
    let items = batch
        .iter()
        .map(|smp| {
            let psi = model.features.eval(&smp.z);
            let zpsi = LearnedFbModel::zpsi(&smp.z, &psi);
            model.policy_row_with(
                &model.params,
                smp.s_next,
                &smp.z,
                &psi,
                &zpsi,
                model.mode,
                &mut pi,
            );
            let mut f_bar = vec![0.0; d];
            let mut q_bar = 0.0;
            for (a, &p) in pi.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let pair = smp.s_next * na + a;
                let f = model.forward_with(target, pair, &psi);
                for (o, x) in f_bar.iter_mut().zip(f) {
                    *o += p * x;
                }
                q_bar += p * (model.critic_with(target, pair, &psi) - p.max(LOG_PROB_FLOOR).ln());
            }
            SampleTargets {
                b_bar_goal: target.b[smp.goal * d..(smp.goal + 1) * d].to_vec(),
                psi,
                f_bar,
                q_bar,
            }
        })
        .collect();
    Ok(BatchTargets { items })
}

/// `mean[(F(s,a,z)ᵀB(g) - γ f̄ᵀ B̄(g))² - 2 F(s,a,z)ᵀ B(s')]`.
pub fn fb_loss(
    model: &LearnedFbModel,
    batch: &[Sample],
    targets: &BatchTargets,
) -> Result<(f64, FbGrad)> {
    contract(!batch.is_empty() && batch.len() == targets.items.len(), || {
        "batch and targets must be nonempty and aligned".into()
    })?;
    let d = model.d;
    let inv_n = 1.0 / batch.len() as f64;
    let b = &model.params.b;
    let mut grad = FbGrad {
        w: RowGrads::default(),
        b: vec![0.0; b.len()],
    };
    let mut loss = 0.0;
    for (smp, t) in batch.iter().zip(&targets.items) {
        let pair = smp.s * model.n_actions + smp.a;
        let f = model.forward_with(&model.params, pair, &t.psi);
        let b_goal = &b[smp.goal * d..(smp.goal + 1) * d];
        let b_next = &b[smp.s_next * d..(smp.s_next + 1) * d];
        let delta = dot(&f, b_goal) - model.gamma * dot(&t.f_bar, &t.b_bar_goal);
        loss += inv_n * (delta * delta - 2.0 * dot(&f, b_next));
        let df: Vec<f64> = b_goal
            .iter()
            .zip(b_next)
            .map(|(&bg, &bn)| inv_n * (2.0 * delta * bg - 2.0 * bn))
            .collect();
        grad.w.add_outer(pair, 1.0, &df, &t.psi);
        for i in 0..d {
            grad.b[smp.goal * d + i] += inv_n * 2.0 * delta * f[i];
            grad.b[smp.s_next * d + i] -= inv_n * 2.0 * f[i];
        }
    }
    Ok((loss, grad))
}

/// `mean[(Q_H(s,a,z) - γ q̄)²]`.
pub fn critic_loss(
    model: &LearnedFbModel,
    batch: &[Sample],
    targets: &BatchTargets,
) -> Result<(f64, RowGrads)> {
    contract(!batch.is_empty() && batch.len() == targets.items.len(), || {
        "batch and targets must be nonempty and aligned".into()
    })?;
    let inv_n = 1.0 / batch.len() as f64;
    let mut grad = RowGrads::default();
    let mut loss = 0.0;
    for (smp, t) in batch.iter().zip(&targets.items) {
        let pair = smp.s * model.n_actions + smp.a;
        let delta = model.critic_with(&model.params, pair, &t.psi) - model.gamma * t.q_bar;
        loss += inv_n * delta * delta;
        grad.add_scaled(pair, inv_n * 2.0 * delta, &t.psi);
    }
    Ok((loss, grad))
}

/// `‖Σ_s ρ(s) B(s) B(s)ᵀ - I‖²_F` and its gradient `4 ρ(s) (C - I) B(s)`.
pub fn ortho_loss(model: &LearnedFbModel) -> (f64, Vec<f64>) {
    let d = model.d;
    let b = &model.params.b;
    let mut c = vec![0.0; d * d];
    for (s, &r) in model.rho.iter().enumerate() {
        if r == 0.0 {
            continue;
        }
        let row = &b[s * d..(s + 1) * d];
        for i in 0..d {
            for j in 0..d {
                c[i * d + j] += r * row[i] * row[j];
            }
        }
    }
    for i in 0..d {
        c[i * d + i] -= 1.0;
    }
    let loss = c.iter().map(|x| x * x).sum();
    let mut grad = vec![0.0; b.len()];
    for (s, &r) in model.rho.iter().enumerate() {
        if r == 0.0 {
            continue;
        }
        let row = &b[s * d..(s + 1) * d];
        for i in 0..d {
            grad[s * d + i] = 4.0 * r * dot(&c[i * d..(i + 1) * d], row);
        }
    }
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::softfb::learned::ModelSpec;
    use crate::softfb::{FbModel, PolicyMode};

    fn model() -> LearnedFbModel {
        let spec = ModelSpec {
            d: 2,
            n_features: 4,
            forward_init_std: 0.3,
            ..ModelSpec::default()
        };
        LearnedFbModel::new(2, 2, 0.5, vec![0.5, 0.5], &spec).unwrap()
    }

    #[test]
    fn single_transition_matches_hand_expansion() {
        let m = model();
        let batch = vec![Sample {
            s: 0,
            a: 1,
            s_next: 1,
            goal: 0,
            z: vec![0.1, 0.2],
        }];
        let t = compute_targets(&m, &m.params().clone(), &batch).unwrap();
        let (loss, _) = fb_loss(&m, &batch, &t).unwrap();
        let f = m.forward(0, 1, &[0.1, 0.2]);
        let delta = dot(&f, m.backward_row(0)) - 0.5 * dot(&t.items[0].f_bar, m.backward_row(0));
        let expected = delta * delta - 2.0 * dot(&f, m.backward_row(1));
        assert!((loss - expected).abs() < 1e-14);
    }

    #[test]
    fn ortho_examples() {
        let mut m = model();
        m.params_mut().b = vec![0.0; 4];
        assert_eq!(ortho_loss(&m).0, 2.0);
        // rows √2 e_i with ρ = ½ each are ρ-orthonormal
        let r = 2f64.sqrt();
        m.params_mut().b = vec![r, 0.0, 0.0, r];
        assert!(ortho_loss(&m).0 < 1e-28);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let m = model();
        assert!(compute_targets(&m, m.params(), &[]).is_err());
    }

    #[test]
    fn hard_targets_use_greedy_action() {
        let spec = ModelSpec {
            d: 2,
            n_features: 4,
            forward_init_std: 0.3,
            mode: PolicyMode::Hard,
            ..ModelSpec::default()
        };
        let m = LearnedFbModel::new(2, 2, 0.5, vec![0.5, 0.5], &spec).unwrap();
        let batch = vec![Sample {
            s: 0,
            a: 0,
            s_next: 1,
            goal: 1,
            z: vec![0.6, 0.8],
        }];
        let t = compute_targets(&m, m.params(), &batch).unwrap();
        // one-hot policy: the entropy term vanishes
        let out = m.policy(&[0.6, 0.8], PolicyMode::Hard).unwrap();
        let a = out.policy.row(1).iter().position(|&p| p == 1.0).unwrap();
        let psi = m.features().eval(&[0.6, 0.8]);
        assert!((t.items[0].q_bar - m.critic_with(m.params(), 2 + a, &psi)).abs() < 1e-15);
    }
}
