//! Mini-batch SGD with momentum and Polyak-averaged targets.
//!
//! A step touches only the `W` and `h` rows of the pairs in the batch, but
//! momentum and Polyak averaging still move every other row. Those idle
//! steps are applied lazily in closed form when a row is next read, which
//! gives the same trajectory as the dense update at a fraction of the cost.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::measures::TransitionDataset;
use crate::softfb::embedding::{sample_ball, sample_sphere};
use crate::softfb::learned::loss::{compute_targets, critic_loss, fb_loss, ortho_loss, Sample};
use crate::softfb::learned::{FbParams, LearnedFbModel};
use crate::softfb::PolicyMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub polyak: f64,
    pub ortho_coef: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 50_000,
            batch_size: 8,
            lr: 1e-3,
            momentum: 0.9,
            polyak: 0.01,
            ortho_coef: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        contract(self.batch_size > 0, || "batch size must be positive".into())?;
        contract(self.lr > 0.0 && self.lr.is_finite(), || "learning rate must be positive".into())?;
        contract((0.0..1.0).contains(&self.momentum), || "momentum must lie in [0, 1)".into())?;
        contract(self.polyak > 0.0 && self.polyak <= 1.0, || {
            "Polyak coefficient must lie in (0, 1]".into()
        })?;
        contract(self.ortho_coef >= 0.0, || "orthonormality weight must be nonnegative".into())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub fb: Vec<f64>,
    pub ortho: Vec<f64>,
    pub critic: Vec<f64>,
}

/// Closed-form effect of `k` gradient-free steps, indexed by `k`.
struct IdleTables {
    /// `β^k`
    decay: Vec<f64>,
    /// `Σ_{i=1..k} β^i`
    moved: Vec<f64>,
    /// `(1 - τ)^k`
    keep: Vec<f64>,
    /// `τ Σ_{j=1..k} (1 - τ)^{k-j} moved_j`
    lagged: Vec<f64>,
}

impl IdleTables {
    fn new(max_k: usize, beta: f64, tau: f64) -> Self {
        let mut t = Self {
            decay: vec![1.0],
            moved: vec![0.0],
            keep: vec![1.0],
            lagged: vec![0.0],
        };
        for k in 1..=max_k {
            let decay = t.decay[k - 1] * beta;
            let moved = t.moved[k - 1] + decay;
            t.decay.push(decay);
            t.moved.push(moved);
            t.keep.push(t.keep[k - 1] * (1.0 - tau));
            t.lagged.push((1.0 - tau) * t.lagged[k - 1] + tau * moved);
        }
        t
    }

    fn idle(&self, k: usize, lr: f64, theta: &mut [f64], vel: &mut [f64], targ: &mut [f64]) {
        if k == 0 {
            return;
        }
        let (decay, moved, keep, lagged) = (self.decay[k], self.moved[k], self.keep[k], self.lagged[k]);
        for ((th, v), tg) in theta.iter_mut().zip(vel.iter_mut()).zip(targ.iter_mut()) {
            let (th0, v0) = (*th, *v);
            *tg = keep * *tg + (1.0 - keep) * th0 - lr * lagged * v0;
            *th = th0 - lr * moved * v0;
            *v = decay * v0;
        }
    }
}

fn momentum_step(
    beta: f64,
    lr: f64,
    tau: f64,
    theta: &mut [f64],
    vel: &mut [f64],
    targ: &mut [f64],
    grad: &[f64],
) {
    for (((th, v), tg), &g) in theta.iter_mut().zip(vel.iter_mut()).zip(targ.iter_mut()).zip(grad) {
        *v = beta * *v + g;
        *th -= lr * *v;
        *tg = (1.0 - tau) * *tg + tau * *th;
    }
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    tables: IdleTables,
    target: FbParams,
    vel: FbParams,
    /// Step each pair's `W` and `h` rows are current at.
    last: Vec<usize>,
}

impl Trainer<'_> {
    fn sync_pair(&mut self, model: &mut LearnedFbModel, pair: usize, now: usize) {
        let k = now - self.last[pair];
        if k == 0 {
            return;
        }
        let bl = model.block_len();
        let p = model.features.len();
        let w = pair * bl..(pair + 1) * bl;
        let h = pair * p..(pair + 1) * p;
        let lr = self.cfg.lr;
        self.tables.idle(
            k,
            lr,
            &mut model.params.w[w.clone()],
            &mut self.vel.w[w.clone()],
            &mut self.target.w[w],
        );
        self.tables.idle(
            k,
            lr,
            &mut model.params.h[h.clone()],
            &mut self.vel.h[h.clone()],
            &mut self.target.h[h],
        );
        self.last[pair] = now;
    }
}

fn sample_batch(
    rng: &mut ChaCha8Rng,
    dataset: &TransitionDataset,
    d: usize,
    mode: PolicyMode,
    n: usize,
) -> Vec<Sample> {
    let ts = &dataset.transitions;
    (0..n)
        .map(|_| {
            let t = ts[rng.gen_range(0..ts.len())];
            let z = match mode {
                PolicyMode::Soft => sample_ball(rng, d),
                PolicyMode::Hard => sample_sphere(rng, d),
            };
            // ρ counts both ends of every transition
            let g = rng.gen_range(0..2 * ts.len());
            let goal = if g < ts.len() {
                ts[g].s
            } else {
                ts[g - ts.len()].s_next
            };
            Sample {
                s: t.s,
                a: t.a,
                s_next: t.s_next,
                goal,
                z,
            }
        })
        .collect()
}

/// Trains `model` on `dataset`; `z` is drawn from the ball in soft mode and
/// from the sphere in hard mode.
pub fn train(
    mut model: LearnedFbModel,
    dataset: &TransitionDataset,
    cfg: &TrainConfig,
) -> Result<(LearnedFbModel, TrainLog)> {
    cfg.validate()?;
    contract(!dataset.transitions.is_empty(), || "empty dataset".into())?;
    if dataset.n_states != model.n_states || dataset.n_actions != model.n_actions {
        return Err(Error::Dimension(
            "dataset and model disagree on state/action counts".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tr = Trainer {
        cfg,
        tables: IdleTables::new(cfg.steps, cfg.momentum, cfg.polyak),
        target: model.params.clone(),
        vel: FbParams {
            w: vec![0.0; model.params.w.len()],
            b: vec![0.0; model.params.b.len()],
            h: vec![0.0; model.params.h.len()],
        },
        last: vec![0; model.n_pairs()],
    };
    let mut log = TrainLog::default();
    let na = model.n_actions;
    let (bl, p) = (model.block_len(), model.features.len());
    let zeros_h = vec![0.0; p];
    for step in 1..=cfg.steps {
        let batch = sample_batch(&mut rng, dataset, model.d, model.mode, cfg.batch_size);
        for smp in &batch {
            tr.sync_pair(&mut model, smp.s * na + smp.a, step - 1);
            for a in 0..na {
                tr.sync_pair(&mut model, smp.s_next * na + a, step - 1);
            }
        }
        let targets = compute_targets(&model, &tr.target, &batch)?;
        let (fb, g_fb) = fb_loss(&model, &batch, &targets)?;
        let (critic, g_h) = critic_loss(&model, &batch, &targets)?;
        let (ortho, g_ortho) = ortho_loss(&model);
        if !(fb.is_finite() && critic.is_finite() && ortho.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step,
                fb,
                ortho,
                critic,
            });
        }
        log.fb.push(fb);
        log.ortho.push(ortho);
        log.critic.push(critic);

        let (beta, lr, tau) = (cfg.momentum, cfg.lr, cfg.polyak);
        // the FB and critic gradients touch the same pairs
        for (pair, gw) in &g_fb.w.rows {
            let gh = g_h.get(*pair).unwrap_or(&zeros_h);
            let w = pair * bl..(pair + 1) * bl;
            let h = pair * p..(pair + 1) * p;
            momentum_step(
                beta,
                lr,
                tau,
                &mut model.params.w[w.clone()],
                &mut tr.vel.w[w.clone()],
                &mut tr.target.w[w],
                gw,
            );
            momentum_step(
                beta,
                lr,
                tau,
                &mut model.params.h[h.clone()],
                &mut tr.vel.h[h.clone()],
                &mut tr.target.h[h],
                gh,
            );
            tr.last[*pair] = step;
        }
        let g_b: Vec<f64> = g_fb
            .b
            .iter()
            .zip(&g_ortho)
            .map(|(a, b)| a + cfg.ortho_coef * b)
            .collect();
        momentum_step(
            beta,
            lr,
            tau,
            &mut model.params.b,
            &mut tr.vel.b,
            &mut tr.target.b,
            &g_b,
        );
    }
    for pair in 0..model.n_pairs() {
        tr.sync_pair(&mut model, pair, cfg.steps);
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn idle_tables_match_dense_steps() {
        let (beta, lr, tau) = (0.9, 0.05, 0.01);
        let tables = IdleTables::new(40, beta, tau);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut theta: Vec<f64> = (0..5).map(|_| rng.gen()).collect();
        let mut vel: Vec<f64> = (0..5).map(|_| rng.gen()).collect();
        let mut targ: Vec<f64> = (0..5).map(|_| rng.gen()).collect();
        let (mut t2, mut v2, mut g2) = (theta.clone(), vel.clone(), targ.clone());
        let zero = vec![0.0; 5];
        for _ in 0..37 {
            momentum_step(beta, lr, tau, &mut t2, &mut v2, &mut g2, &zero);
        }
        tables.idle(37, lr, &mut theta, &mut vel, &mut targ);
        for i in 0..5 {
            assert!((theta[i] - t2[i]).abs() < 1e-12);
            assert!((vel[i] - v2[i]).abs() < 1e-12);
            assert!((targ[i] - g2[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            momentum: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
