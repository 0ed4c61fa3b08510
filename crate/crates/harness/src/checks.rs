//! Invariant suites run by `softfb selfcheck` and the acceptance test. Each
//! returns a [`CheckOutcome`] with its measurements as CSV; wall-clock
//! budgets count towards pass/fail.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softfb::envs::{grid_env, make_random_mdp, Environment};
use softfb::inference::derive_seed;
use softfb::linalg::{l1_distance, Matrix};
use softfb::mdp::{
    hard_value_iteration, interpolate_policy, marginals, maxent_return, soft_value_iteration,
    RewardVector, SolverOptions, Support,
};
use softfb::measures::{
    collect_dataset, exact_measure, implicit_measure, ExplicitConfig, ExplicitMeasureModel,
    MeasureKind, TransitionDataset,
};
use softfb::softfb::embedding::{reparameterize, sample_ball, sample_sphere};
use softfb::softfb::exact::{exact_fixed_point, ExactFbModel};
use softfb::softfb::learned::loss::{compute_targets, critic_loss, fb_loss, ortho_loss, Sample};
use softfb::softfb::learned::{LearnedFbModel, ModelSpec, TrainConfig};
use softfb::softfb::{FbModel, PolicyMode};
use softfb::utilities::{brute_force_optimum, preset, ScoreNormalizer, Utility, UtilityObjective};
use softfb::{Mdp, Policy};

use crate::config::{Algorithm, ExperimentConfig, Regime};
use crate::counterexample;
use crate::experiment::{run_experiment, train_learned};
use crate::output::csv_bytes;
use crate::{HarnessError, Result};

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub csv: Vec<u8>,
    pub elapsed: Duration,
    pub budget: Duration,
}

impl CheckOutcome {
    fn new(
        id: u32,
        name: &'static str,
        ok: bool,
        detail: String,
        csv: Vec<u8>,
        start: Instant,
        budget: Duration,
    ) -> Self {
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let detail = if in_time {
            detail
        } else {
            format!("{detail}; over budget")
        };
        Self {
            id,
            name,
            passed: ok && in_time,
            detail,
            csv,
            elapsed,
            budget,
        }
    }

    /// `[PASS] 3 name: detail (1.2 s / 120 s)`.
    pub fn line(&self) -> String {
        format!(
            "[{}] {} {}: {} ({:.2} s / {} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs()
        )
    }
}

fn rt(e: softfb::Error) -> HarnessError {
    HarnessError::runtime(e)
}

fn fmt(x: f64) -> String {
    x.to_string()
}

pub const FIXED_POINT_TOL: f64 = 1e-5;

/// Soft FB recovers the maximum-entropy optimum: on random MDPs with an
/// invertible random `B`, the policy at `z = reparameterize(B R)` matches
/// soft value iteration in maximum-entropy return.
pub fn maxent_fixed_point(seed: u64) -> Result<CheckOutcome> {
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for m in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, m));
        let ns = rng.gen_range(2..=5);
        let na = rng.gen_range(2..=3);
        let mdp = make_random_mdp(ns, na, 0.8, rng.gen()).map_err(rt)?;
        let d = ns * na;
        let backward = loop {
            let data: Vec<f64> = (0..d * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b = Matrix::from_vec(d, d, data).map_err(rt)?;
            if ExactFbModel::new(mdp.clone(), b.clone()).is_ok() {
                break b;
            }
        };
        for k in 0..5 {
            let r: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let reward = RewardVector::state_action(r.clone());
            let z = reparameterize(&backward.mul_vec(&r).map_err(rt)?);
            let slice = exact_fixed_point(&mdp, &backward, &z, PolicyMode::Soft, 1e-12).map_err(rt)?;
            let j_fb = maxent_return(&mdp, &slice.policy, &reward).map_err(rt)?;
            let opt = soft_value_iteration(&mdp, &reward, &SolverOptions::default()).map_err(rt)?;
            let j_opt = maxent_return(&mdp, &opt.policy, &reward).map_err(rt)?;
            let err = (j_fb - j_opt).abs();
            worst = worst.max(err);
            rows.push(vec![
                m.to_string(),
                k.to_string(),
                ns.to_string(),
                na.to_string(),
                fmt(j_fb),
                fmt(j_opt),
                fmt(err),
            ]);
        }
    }
    let n = rows.len();
    let csv = csv_bytes(
        &["mdp", "reward", "n_states", "n_actions", "j_fb", "j_opt", "abs_error"],
        rows,
    )?;
    Ok(CheckOutcome::new(
        1,
        "maxent fixed point",
        worst <= FIXED_POINT_TOL,
        format!("{n} rewards, max |J_fb - J*| = {worst:.3e} (tol {FIXED_POINT_TOL:e})"),
        csv,
        start,
        Duration::from_secs(30),
    ))
}

pub fn counterexample_check(seed: u64) -> Result<CheckOutcome> {
    let start = Instant::now();
    let r = counterexample::run(seed)?;
    Ok(CheckOutcome::new(
        2,
        "counterexample",
        r.passed(),
        format!(
            "matrix max error {:.3e} (tol {:e}), hard entropy max {} over {} z, soft entropy at 0 = {:.12} (log 2 = {:.12})",
            r.matrix_error,
            counterexample::MATRIX_TOL,
            r.hard_entropy_max,
            r.hard_directions,
            r.soft_entropy_at_zero,
            std::f64::consts::LN_2
        ),
        r.to_csv()?,
        start,
        Duration::from_secs(1),
    ))
}

pub const INTERPOLATION_ALPHAS: [f64; 5] = [1.0, 0.5, 0.2, 0.1, 0.05];
pub const INTERPOLATION_GAP: f64 = 0.05;
pub const CERTIFICATE_TV: f64 = 1e-6;
const BRUTE_RESOLUTION: usize = 51;

fn robust_objective(mdp: &Mdp, rng: &mut ChaCha8Rng) -> Result<UtilityObjective> {
    let n = mdp.n_pairs();
    let rewards = (0..3)
        .map(|_| (0..n).map(|_| rng.gen::<f64>()).collect())
        .collect();
    let obj = UtilityObjective {
        name: "robust_min".into(),
        utility: Utility::RobustMin { rewards },
        support: Support::StateAction,
        n_states: mdp.n_states(),
        n_actions: mdp.n_actions(),
        layout: None,
        normalizer: ScoreNormalizer::new(0.0, 1.0).map_err(rt)?,
    };
    obj.validate().map_err(rt)?;
    Ok(obj)
}

/// Soft policies get arbitrarily close to any general-utility optimum:
/// mixing the brute-force optimum with uniform noise gives policies that
/// are each a maximum-entropy optimum (for `R = log π_α`), and the sweep
/// approaches the optimal value.
pub fn gu_interpolation(seed: u64) -> Result<CheckOutcome> {
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut ok = true;
    let mut worst_gap: f64 = 0.0;
    let mut worst_tv: f64 = 0.0;
    for m in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed ^ 0x42, m));
        let ns = rng.gen_range(2..=3);
        let mdp = make_random_mdp(ns, 2, 0.9, rng.gen()).map_err(rt)?;
        let env = Environment {
            name: format!("tiny{m}"),
            mdp: mdp.clone(),
            layout: None,
        };
        let objectives = [preset("entropy", &env).map_err(rt)?, robust_objective(&mdp, &mut rng)?];
        for obj in &objectives {
            let brute = brute_force_optimum(obj, &mdp, BRUTE_RESOLUTION).map_err(rt)?;
            let mut best = f64::NEG_INFINITY;
            for &alpha in &INTERPOLATION_ALPHAS {
                let pi = interpolate_policy(&brute.policy, alpha).map_err(rt)?;
                let log_pi: Vec<f64> = pi.probs().iter().map(|p| p.ln()).collect();
                let cert = soft_value_iteration(
                    &mdp,
                    &RewardVector::state_action(log_pi),
                    &SolverOptions::default(),
                )
                .map_err(rt)?;
                let tv = cert.policy.max_tv(&pi);
                let score = obj.score(obj.exact_eval(&marginals(&mdp, &pi).map_err(rt)?).map_err(rt)?);
                best = best.max(score);
                worst_tv = worst_tv.max(tv);
                ok &= tv <= CERTIFICATE_TV;
                rows.push(vec![
                    m.to_string(),
                    obj.name.clone(),
                    fmt(alpha),
                    fmt(score),
                    fmt(brute.score),
                    fmt(brute.score - score),
                    fmt(tv),
                ]);
            }
            let gap = brute.score - best;
            worst_gap = worst_gap.max(gap);
            ok &= gap <= INTERPOLATION_GAP;
        }
    }
    let csv = csv_bytes(
        &["mdp", "objective", "alpha", "score", "brute_force", "gap", "certificate_tv"],
        rows,
    )?;
    Ok(CheckOutcome::new(
        3,
        "general-utility interpolation",
        ok,
        format!(
            "worst gap to brute force {worst_gap:.4} (tol {INTERPOLATION_GAP}), worst certificate TV {worst_tv:.2e} (tol {CERTIFICATE_TV:e})"
        ),
        csv,
        start,
        Duration::from_secs(120),
    ))
}

pub const LEMMA_ALPHAS: [f64; 3] = [0.05, 0.2, 0.5];

/// `‖𝕄^{π*} - 𝕄^{π_α}‖₁ ≤ 2α / (1 - γ)` for uniform mixing.
pub fn simulation_lemma(seed: u64) -> Result<CheckOutcome> {
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut violations = 0;
    let mut worst_ratio: f64 = 0.0;
    for m in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed ^ 0x51, m));
        let ns = rng.gen_range(2..=6);
        let na = rng.gen_range(2..=4);
        let gamma = rng.gen_range(0.5..0.95);
        let mdp = make_random_mdp(ns, na, gamma, rng.gen()).map_err(rt)?;
        let r: Vec<f64> = (0..ns * na).map(|_| rng.gen()).collect();
        let opt = hard_value_iteration(&mdp, &RewardVector::state_action(r), &SolverOptions::default())
            .map_err(rt)?;
        let m_opt = marginals(&mdp, &opt.policy).map_err(rt)?;
        for &alpha in &LEMMA_ALPHAS {
            let pi = interpolate_policy(&opt.policy, alpha).map_err(rt)?;
            let m_alpha = marginals(&mdp, &pi).map_err(rt)?;
            let dist = l1_distance(&m_opt.state_action, &m_alpha.state_action);
            let bound = 2.0 * alpha / (1.0 - gamma);
            if dist > bound {
                violations += 1;
            }
            worst_ratio = worst_ratio.max(dist / bound);
            rows.push(vec![m.to_string(), fmt(gamma), fmt(alpha), fmt(dist), fmt(bound)]);
        }
    }
    let n = rows.len();
    let csv = csv_bytes(&["mdp", "gamma", "alpha", "l1", "bound"], rows)?;
    Ok(CheckOutcome::new(
        4,
        "simulation lemma",
        violations == 0,
        format!("{violations} violations in {n} cases, largest l1/bound {worst_ratio:.3}"),
        csv,
        start,
        Duration::from_secs(10),
    ))
}

/// A trained grid model with its data and explicit measure model.
pub struct LearnedGrid {
    pub env: Environment,
    pub dataset: TransitionDataset,
    pub model: LearnedFbModel,
    pub explicit: ExplicitMeasureModel,
    pub train_time: Duration,
}

impl LearnedGrid {
    pub fn checkpoint(&self) -> Vec<u8> {
        self.model.to_bytes()
    }
}

pub const GRID_STEPS: usize = 50_000;

/// 9x9 grid, 20k uniform-behaviour transitions, `d = 8`, soft mode.
pub fn train_learned_grid(seed: u64, steps: usize) -> Result<LearnedGrid> {
    let start = Instant::now();
    let env = grid_env(9, softfb::envs::DEFAULT_GAMMA).map_err(rt)?;
    let (ns, na) = (env.mdp.n_states(), env.mdp.n_actions());
    let dataset =
        collect_dataset(&env.mdp, &Policy::uniform(ns, na), 20_000, 2, seed, &env.name).map_err(rt)?;
    let train_cfg = TrainConfig {
        steps,
        ..TrainConfig::default()
    };
    let model = train_learned(&env, &dataset, &ModelSpec::default(), &train_cfg, seed).map_err(rt)?;
    let explicit = ExplicitMeasureModel::fit(&dataset, env.mdp.discount(), ExplicitConfig::default())
        .map_err(rt)?;
    Ok(LearnedGrid {
        env,
        dataset,
        model,
        explicit,
        train_time: start.elapsed(),
    })
}

pub const FIDELITY_TV: f64 = 0.05;

/// Explicit measures of held-out `π_z` are close to the truth, and closer
/// on average than the implicit ones.
pub fn learned_fidelity(grid: &LearnedGrid, seed: u64) -> Result<CheckOutcome> {
    let start = Instant::now();
    let mdp = &grid.env.mdp;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xf1de));
    let mut rows = Vec::new();
    let (mut sum_exp, mut sum_imp, mut worst_tv) = (0.0, 0.0, 0.0f64);
    for k in 0..10 {
        let z = sample_ball(&mut rng, grid.model.dim());
        let pi = grid.model.policy(&z, PolicyMode::Soft).map_err(rt)?.policy;
        let truth = exact_measure(mdp, &pi).map_err(rt)?;
        let exp = grid.explicit.estimate(&pi, mdp.initial_dist()).map_err(rt)?;
        let imp = implicit_measure(&grid.model, &z, PolicyMode::Soft, mdp).map_err(rt)?;
        let l1_exp = l1_distance(&exp.state_marginal, &truth.state_marginal);
        let l1_imp = l1_distance(&imp.state_marginal, &truth.state_marginal);
        sum_exp += l1_exp;
        sum_imp += l1_imp;
        worst_tv = worst_tv.max(0.5 * l1_exp);
        rows.push(vec![
            k.to_string(),
            fmt(softfb::linalg::norm(&z)),
            fmt(0.5 * l1_exp),
            fmt(l1_exp),
            fmt(l1_imp),
            imp.clamped.to_string(),
        ]);
    }
    let (mean_exp, mean_imp) = (sum_exp / 10.0, sum_imp / 10.0);
    let csv = csv_bytes(
        &["z_index", "z_norm", "explicit_tv", "explicit_l1", "implicit_l1", "implicit_clamped"],
        rows,
    )?;
    let ok = worst_tv <= FIDELITY_TV && mean_exp <= mean_imp;
    let mut out = CheckOutcome::new(
        5,
        "learned fidelity",
        ok,
        format!(
            "explicit max TV {worst_tv:.3e} (tol {FIDELITY_TV}), mean L1 explicit {mean_exp:.3e} vs implicit {mean_imp:.4}, training {:.1} s",
            grid.train_time.as_secs_f64()
        ),
        csv,
        start,
        Duration::from_secs(300),
    );
    // training is part of this criterion's budget
    out.elapsed += grid.train_time;
    if out.elapsed > out.budget && out.passed {
        out.passed = false;
        out.detail.push_str("; over budget");
    }
    Ok(out)
}

pub const GRAD_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;

fn rel_err(a: f64, fd: f64) -> f64 {
    (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6)
}

fn random_point(k: u64) -> Result<(LearnedFbModel, Vec<Sample>, softfb::softfb::learned::FbParams)> {
    let (ns, na) = (4, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(0x9ad, k));
    let mut rho: Vec<f64> = (0..ns).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = rho.iter().sum();
    rho.iter_mut().for_each(|r| *r /= total);
    let rho_sum: f64 = rho.iter().sum();
    rho[0] += 1.0 - rho_sum;
    let spec = ModelSpec {
        d: 3,
        n_features: 8,
        feature_seed: k,
        init_seed: k,
        forward_init_std: 0.5,
        mode: if k % 2 == 0 { PolicyMode::Soft } else { PolicyMode::Hard },
        ..ModelSpec::default()
    };
    let mut model = LearnedFbModel::new(ns, na, 0.7, rho, &spec).map_err(rt)?;
    for h in &mut model.params_mut().h {
        *h = rng.gen_range(-1.0..1.0);
    }
    let mut target = model.params().clone();
    for x in target.w.iter_mut().chain(&mut target.b).chain(&mut target.h) {
        *x += 0.1 * rng.gen_range(-1.0..1.0);
    }
    let batch = (0..4)
        .map(|_| Sample {
            s: rng.gen_range(0..ns),
            a: rng.gen_range(0..na),
            s_next: rng.gen_range(0..ns),
            goal: rng.gen_range(0..ns),
            z: if spec.mode == PolicyMode::Soft {
                sample_ball(&mut rng, spec.d)
            } else {
                sample_sphere(&mut rng, spec.d)
            },
        })
        .collect();
    Ok((model, batch, target))
}

#[derive(Clone, Copy)]
enum Block {
    W,
    B,
    H,
}

fn block(model: &mut LearnedFbModel, b: Block) -> &mut Vec<f64> {
    let p = model.params_mut();
    match b {
        Block::W => &mut p.w,
        Block::B => &mut p.b,
        Block::H => &mut p.h,
    }
}

/// Worst relative error of `analytic` against central differences of
/// `loss` over every coordinate of `which`.
fn fd_compare(
    model: &mut LearnedFbModel,
    which: Block,
    analytic: &[f64],
    loss: &dyn Fn(&LearnedFbModel) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..analytic.len() {
        let x0 = block(model, which)[i];
        block(model, which)[i] = x0 + FD_STEP;
        let up = loss(model);
        block(model, which)[i] = x0 - FD_STEP;
        let down = loss(model);
        block(model, which)[i] = x0;
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

fn dense(rows: &softfb::softfb::learned::loss::RowGrads, n_rows: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_rows * len];
    for (r, g) in &rows.rows {
        out[r * len..(r + 1) * len].copy_from_slice(g);
    }
    out
}

/// Analytic gradients of the FB, orthonormality and critic losses against
/// central finite differences, targets held fixed.
pub fn gradient_checks() -> Result<CheckOutcome> {
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for k in 0..10u64 {
        let (mut model, batch, target) = random_point(k)?;
        let targets = compute_targets(&model, &target, &batch).map_err(rt)?;
        let n_pairs = model.n_pairs();
        let (bl, p) = (model.block_len(), model.features().len());

        let (_, g) = fb_loss(&model, &batch, &targets).map_err(rt)?;
        let fb = |m: &LearnedFbModel| fb_loss(m, &batch, &targets).expect("fb loss").0;
        let e_w = fd_compare(&mut model, Block::W, &dense(&g.w, n_pairs, bl), &fb);
        let e_b = fd_compare(&mut model, Block::B, &g.b, &fb);

        let (_, g_o) = ortho_loss(&model);
        let ortho = |m: &LearnedFbModel| ortho_loss(m).0;
        let e_o = fd_compare(&mut model, Block::B, &g_o, &ortho);

        let (_, g_c) = critic_loss(&model, &batch, &targets).map_err(rt)?;
        let critic = |m: &LearnedFbModel| critic_loss(m, &batch, &targets).expect("critic loss").0;
        let e_c = fd_compare(&mut model, Block::H, &dense(&g_c, n_pairs, p), &critic);

        for (name, e) in [("fb_w", e_w), ("fb_b", e_b), ("ortho_b", e_o), ("critic_h", e_c)] {
            worst = worst.max(e);
            rows.push(vec![k.to_string(), name.into(), fmt(e)]);
        }
    }
    let csv = csv_bytes(&["point", "gradient", "max_rel_error"], rows)?;
    Ok(CheckOutcome::new(
        6,
        "gradient checks",
        worst <= GRAD_TOL,
        format!("10 points, max relative error {worst:.3e} (tol {GRAD_TOL:e})"),
        csv,
        start,
        Duration::from_secs(10),
    ))
}

pub const EXACT_SCORE_TOL: f64 = 1e-6;

/// Exact-regime inference end to end: offline scores equal ground truth and
/// soft candidates reach the entropy optimum that hard ones miss.
pub fn exact_inference(seed: u64) -> Result<CheckOutcome> {
    let start = Instant::now();
    let seeds: Vec<u64> = (0..3).map(|i| derive_seed(seed, i)).collect();
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    let mut ok = true;
    let mut means = Vec::new();
    for (env, alg) in [
        ("counterexample", Algorithm::SfbSoft),
        ("counterexample", Algorithm::FbHard),
        ("random:3", Algorithm::SfbSoft),
        ("random:3", Algorithm::FbHard),
    ] {
        let mut cfg =
            ExperimentConfig::new(env, alg, Regime::Exact, &["entropy"], MeasureKind::Exact, seeds.clone());
        if env != "counterexample" {
            cfg.search.n_candidates = 128;
        }
        let out = run_experiment(&cfg, Path::new("."))?;
        ok &= !out.failed();
        for t in &out.tables {
            for c in &t.candidates {
                let gt = c.ground_truth.unwrap_or(f64::NAN);
                let e = (c.offline_score - gt).abs();
                worst = worst.max(if e.is_nan() { f64::INFINITY } else { e });
            }
        }
        let mut total = 0.0;
        for r in &out.rows {
            total += r.normalized_score;
            rows.push(vec![
                env.into(),
                alg.as_str().into(),
                r.seed.to_string(),
                fmt(r.offline_best),
                fmt(r.ground_truth_of_best),
                fmt(r.normalized_score),
            ]);
        }
        let mean = total / out.rows.len() as f64;
        if env == "counterexample" {
            let target = if alg == Algorithm::SfbSoft { 1.0 } else { 0.0 };
            let tol = if alg == Algorithm::SfbSoft { 0.01 } else { 0.0 };
            ok &= out.rows.iter().all(|r| (r.normalized_score - target).abs() <= tol);
            means.push(mean);
        }
    }
    ok &= worst <= EXACT_SCORE_TOL;
    let csv = csv_bytes(
        &["env", "algorithm", "seed", "offline_best", "ground_truth_of_best", "normalized_score"],
        rows,
    )?;
    Ok(CheckOutcome::new(
        7,
        "exact inference",
        ok,
        format!(
            "max |offline - truth| {worst:.3e} (tol {EXACT_SCORE_TOL:e}), counterexample entropy: sfb_soft {:.4}, fb_hard {:.4}",
            means[0], means[1]
        ),
        csv,
        start,
        Duration::from_secs(30),
    ))
}

pub const NORMS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0 - 1e-6];

/// `Σ_s μ0(s) H(π(·|s))`.
pub fn weighted_entropy(policy: &Policy, mu0: &[f64]) -> f64 {
    mu0.iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(s, &w)| w * policy.entropy(s))
        .sum()
}

/// Policy entropy falls as `‖z‖` grows along fixed directions.
pub fn entropy_monotonicity(grid: &LearnedGrid, seed: u64) -> Result<CheckOutcome> {
    let start = Instant::now();
    let mu0 = grid.env.mdp.initial_dist();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xe47));
    let mut rows = Vec::new();
    let mut monotone = 0;
    for dir in 0..8 {
        let u = sample_sphere(&mut rng, grid.model.dim());
        let mut prev = f64::INFINITY;
        let mut ok = true;
        for &n in &NORMS {
            let z: Vec<f64> = u.iter().map(|x| x * n).collect();
            let pi = grid.model.policy(&z, PolicyMode::Soft).map_err(rt)?.policy;
            let h = weighted_entropy(&pi, mu0);
            ok &= h < prev;
            prev = h;
            rows.push(vec![dir.to_string(), fmt(n), fmt(h), fmt(pi.mean_entropy())]);
        }
        monotone += ok as usize;
    }
    let csv = csv_bytes(&["direction", "norm", "entropy", "mean_state_entropy"], rows)?;
    Ok(CheckOutcome::new(
        8,
        "entropy vs norm",
        monotone == 8,
        format!("{monotone}/8 directions strictly decreasing"),
        csv,
        start,
        Duration::from_secs(60),
    ))
}

/// Every suite in order. `learned` is `None` to skip the two that need a
/// trained grid model.
pub fn run_all(seed: u64, learned: Option<&LearnedGrid>) -> Result<Vec<CheckOutcome>> {
    let mut out = vec![
        maxent_fixed_point(seed)?,
        counterexample_check(seed)?,
        gu_interpolation(seed)?,
        simulation_lemma(seed)?,
    ];
    if let Some(g) = learned {
        out.push(learned_fidelity(g, seed)?);
    }
    out.push(gradient_checks()?);
    out.push(exact_inference(seed)?);
    if let Some(g) = learned {
        out.push(entropy_monotonicity(g, seed)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_entropy_of_uniform_is_log_actions() {
        let pi = Policy::uniform(3, 4);
        let h = weighted_entropy(&pi, &[0.2, 0.3, 0.5]);
        assert!((h - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn outcome_fails_over_budget() {
        let start = Instant::now() - Duration::from_secs(2);
        let o = CheckOutcome::new(1, "x", true, "ok".into(), vec![], start, Duration::from_secs(1));
        assert!(!o.passed);
        assert!(o.line().starts_with("[FAIL] 1 x"));
    }
}
