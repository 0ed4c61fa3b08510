//! General-utility objectives over marginalised occupancies, with exact
//! evaluators on tabular measures and sample-based ones on lifted draws.
//!
//! Raw values follow each objective's own definition, so `kl_to_expert`
//! reports a divergence. [`UtilityObjective::score`] turns a raw value into
//! the quantity search maximises.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::{Environment, GridLayout};
use crate::error::{contract, Error, Result};
use crate::knn::{knn_entropy, knn_kl, DEFAULT_K};
use crate::mdp::{hard_value_iteration, marginals, Marginals, SolverOptions, Support};
use crate::measures::{MeasureEstimate, MeasureKind, MeasureSample, TransitionDataset};
use crate::{Mdp, Policy, Reward};

/// Mass spread uniformly over an expert measure before taking exact KL.
pub const EXPERT_SMOOTHING: f64 = 1e-9;
pub const DEFAULT_PENALTY: f64 = 10.0;
pub const MAX_BRUTE_FORCE_POLICIES: f64 = 1e7;
/// Draws taken from a tabular expert to feed the sample-based KL.
pub const EXPERT_POINTS: usize = 4096;
const EXPERT_POINT_SEED: u64 = 0xe4_9e27;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Linear,
    Goal,
    KlToExpert,
    Entropy,
    RobustMin,
    Constrained,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Utility {
    /// `⟨𝕄, R⟩`.
    Linear { reward: Vec<f64> },
    /// `⟨𝕄, 1_goal⟩`.
    Goal { reward: Vec<f64> },
    /// `D_KL(𝕄 ‖ 𝕄*)`; `expert` is already smoothed where needed.
    KlToExpert {
        expert: Vec<f64>,
        expert_points: Option<Vec<[f64; 2]>>,
    },
    /// Shannon entropy, or differential entropy of the uniform-in-cell lift
    /// when the objective has a layout and state support.
    Entropy,
    /// `min_i ⟨𝕄, R_i⟩`.
    RobustMin { rewards: Vec<Vec<f64>> },
    /// `⟨𝕄, R⟩` subject to `⟨𝕄, R⟩ < threshold`: penalised by
    /// `penalty · max(0, ⟨𝕄, R⟩ - threshold)`, or in strict mode scored at
    /// the normaliser minimum whenever the constraint fails.
    Constrained {
        reward: Vec<f64>,
        threshold: f64,
        penalty: f64,
        strict: bool,
    },
}

impl Utility {
    pub fn kind(&self) -> ObjectiveKind {
        match self {
            Self::Linear { .. } => ObjectiveKind::Linear,
            Self::Goal { .. } => ObjectiveKind::Goal,
            Self::KlToExpert { .. } => ObjectiveKind::KlToExpert,
            Self::Entropy => ObjectiveKind::Entropy,
            Self::RobustMin { .. } => ObjectiveKind::RobustMin,
            Self::Constrained { .. } => ObjectiveKind::Constrained,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreNormalizer {
    pub min_score: f64,
    pub max_score: f64,
}

impl ScoreNormalizer {
    pub fn new(min_score: f64, max_score: f64) -> Result<Self> {
        contract(
            min_score.is_finite() && max_score.is_finite() && max_score > min_score,
            || format!("normaliser needs finite min < max, got [{min_score}, {max_score}]"),
        )?;
        Ok(Self {
            min_score,
            max_score,
        })
    }

    /// `(raw - min) / (max - min)` clipped to `[0, 1]`; `-∞` maps to 0.
    pub fn normalize(&self, raw: f64) -> f64 {
        if raw.is_nan() {
            return 0.0;
        }
        ((raw - self.min_score) / (self.max_score - self.min_score)).clamp(0.0, 1.0)
    }
}

pub fn normalize(norm: &ScoreNormalizer, raw: f64) -> f64 {
    norm.normalize(raw)
}

#[derive(Clone, Debug, PartialEq)]
pub struct UtilityObjective {
    pub name: String,
    pub utility: Utility,
    pub support: Support,
    pub n_states: usize,
    pub n_actions: usize,
    /// Cell coordinates for lifting draws to the plane.
    pub layout: Option<GridLayout>,
    /// Acts on scores, not raw values.
    pub normalizer: ScoreNormalizer,
}

fn shannon(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// `D_KL(p ‖ q)`, `+∞` when `p` puts mass where `q` has none.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return f64::INFINITY;
            }
            total += pi * (pi / qi).ln();
        }
    }
    total.max(0.0)
}

/// Mixes `EXPERT_SMOOTHING` uniform mass into a distribution.
pub fn smooth(p: &[f64]) -> Vec<f64> {
    let n = p.len() as f64;
    let z = 1.0 + EXPERT_SMOOTHING * n;
    p.iter().map(|&x| (x + EXPERT_SMOOTHING) / z).collect()
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    contract(p.iter().all(|&x| x >= 0.0 && x.is_finite()), || {
        format!("{what} has negative or non-finite entries")
    })?;
    let total: f64 = p.iter().sum();
    contract((total - 1.0).abs() <= 1e-9, || format!("{what} sums to {total}, not 1"))
}

impl UtilityObjective {
    pub fn kind(&self) -> ObjectiveKind {
        self.utility.kind()
    }

    fn support_len(&self) -> usize {
        match self.support {
            Support::State => self.n_states,
            Support::StateAction => self.n_states * self.n_actions,
        }
    }

    fn support_index(&self, smp: &MeasureSample) -> usize {
        match self.support {
            Support::State => smp.s,
            Support::StateAction => smp.s * self.n_actions + smp.a,
        }
    }

    /// Differential entropies are reported on the lifted plane.
    fn entropy_offset(&self) -> f64 {
        match (self.layout, self.support) {
            (Some(l), Support::State) => l.cell_area().ln(),
            _ => 0.0,
        }
    }

    /// Validates shapes and parameters.
    pub fn validate(&self) -> Result<()> {
        let n = self.support_len();
        let vec_ok = |v: &[f64], what: &str| -> Result<()> {
            if v.len() != n {
                return Err(Error::Dimension(format!(
                    "{what} has length {}, support has {n}",
                    v.len()
                )));
            }
            contract(v.iter().all(|x| x.is_finite()), || format!("{what} is not finite"))
        };
        match &self.utility {
            Utility::Linear { reward } | Utility::Goal { reward } => vec_ok(reward, "reward"),
            Utility::KlToExpert { expert, .. } => {
                vec_ok(expert, "expert")?;
                check_distribution(expert, "expert measure")
            }
            Utility::Entropy => Ok(()),
            Utility::RobustMin { rewards } => {
                contract(!rewards.is_empty(), || "robust objective needs rewards".into())?;
                rewards.iter().try_for_each(|r| vec_ok(r, "reward"))
            }
            Utility::Constrained {
                reward,
                threshold,
                penalty,
                ..
            } => {
                vec_ok(reward, "reward")?;
                contract(threshold.is_finite() && *penalty >= 0.0, || {
                    "constraint needs a finite threshold and nonnegative penalty".into()
                })
            }
        }
    }

    fn pick<'a>(&self, m: &'a Marginals<f64>) -> Result<&'a [f64]> {
        let v = match self.support {
            Support::State => &m.state,
            Support::StateAction => &m.state_action,
        };
        if v.len() != self.support_len() {
            return Err(Error::Dimension(format!(
                "measure over {} entries, objective support has {}",
                v.len(),
                self.support_len()
            )));
        }
        Ok(v)
    }

    fn constrained(&self, v: f64, threshold: f64, penalty: f64, strict: bool) -> f64 {
        let violation = v - threshold;
        if violation < 0.0 {
            v
        } else if strict {
            self.normalizer.min_score
        } else {
            v - penalty * violation
        }
    }

    /// Raw objective value on an exact (or tabular estimated) measure.
    /// Infinite divergence is reported as `+∞`.
    pub fn exact_eval(&self, m: &Marginals<f64>) -> Result<f64> {
        let v = self.pick(m)?;
        let lin = |r: &[f64]| crate::linalg::dot(v, r);
        Ok(match &self.utility {
            Utility::Linear { reward } | Utility::Goal { reward } => lin(reward),
            Utility::KlToExpert { expert, .. } => kl_divergence(v, expert),
            Utility::Entropy => shannon(v) + self.entropy_offset(),
            Utility::RobustMin { rewards } => {
                rewards.iter().map(|r| lin(r)).fold(f64::INFINITY, f64::min)
            }
            Utility::Constrained {
                reward,
                threshold,
                penalty,
                strict,
            } => self.constrained(lin(reward), *threshold, *penalty, *strict),
        })
    }

    /// Raw objective value from draws: Monte-Carlo means for reward kinds,
    /// KNN estimators on lifted points, plug-in histograms otherwise.
    pub fn sample_eval(&self, samples: &[MeasureSample]) -> Result<f64> {
        contract(!samples.is_empty(), || "no samples".into())?;
        let mean = |r: &[f64]| {
            samples.iter().map(|s| r[self.support_index(s)]).sum::<f64>() / samples.len() as f64
        };
        let points = || -> Option<Vec<[f64; 2]>> {
            if self.support != Support::State {
                return None;
            }
            samples.iter().map(|s| s.point).collect()
        };
        let histogram = || {
            let mut h = vec![0.0; self.support_len()];
            for s in samples {
                h[self.support_index(s)] += 1.0;
            }
            let n = samples.len() as f64;
            h.iter_mut().for_each(|x| *x /= n);
            h
        };
        Ok(match &self.utility {
            Utility::Linear { reward } | Utility::Goal { reward } => mean(reward),
            Utility::RobustMin { rewards } => {
                rewards.iter().map(|r| mean(r)).fold(f64::INFINITY, f64::min)
            }
            Utility::Constrained {
                reward,
                threshold,
                penalty,
                strict,
            } => self.constrained(mean(reward), *threshold, *penalty, *strict),
            Utility::Entropy => match points() {
                Some(p) => {
                    contract(p.len() > DEFAULT_K, || {
                        format!("entropy estimate needs more than {DEFAULT_K} samples")
                    })?;
                    knn_entropy(&p, DEFAULT_K)?
                }
                None => shannon(&histogram()),
            },
            Utility::KlToExpert {
                expert,
                expert_points,
            } => match (points(), expert_points) {
                (Some(p), Some(e)) => knn_kl(&p, e, DEFAULT_K)?,
                _ => kl_divergence(&histogram(), expert),
            },
        })
    }

    /// Maximisation-oriented score: `-D_KL` for imitation, the raw value otherwise.
    pub fn score(&self, raw: f64) -> f64 {
        match self.utility {
            Utility::KlToExpert { .. } => -raw,
            _ => raw,
        }
    }

    pub fn normalized(&self, raw: f64) -> f64 {
        self.normalizer.normalize(self.score(raw))
    }

    pub fn exact_score(&self, m: &Marginals<f64>) -> Result<f64> {
        Ok(self.score(self.exact_eval(m)?))
    }
}

pub fn exact_eval(obj: &UtilityObjective, m: &Marginals<f64>) -> Result<f64> {
    obj.exact_eval(m)
}

pub fn sample_eval(obj: &UtilityObjective, samples: &[MeasureSample]) -> Result<f64> {
    obj.sample_eval(samples)
}

#[derive(Clone, Debug)]
pub struct BruteForceResult {
    /// Raw objective value of the best policy.
    pub value: f64,
    pub score: f64,
    pub policy: Policy,
}

/// All count vectors of length `n` summing to `total`, in lexicographic order.
fn compositions(total: usize, n: usize) -> Vec<Vec<usize>> {
    if n == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in (0..=total).rev() {
        for mut rest in compositions(total - first, n - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Exhaustive search over Markov policies whose per-state probabilities lie
/// on the simplex grid with step `1 / (resolution - 1)`. Ties keep the
/// first policy in lexicographic order.
pub fn brute_force_optimum(
    obj: &UtilityObjective,
    mdp: &Mdp,
    resolution: usize,
) -> Result<BruteForceResult> {
    contract(resolution >= 2, || "grid resolution must be at least 2".into())?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let k = resolution - 1;
    let per_state = binomial(k + na - 1, na - 1);
    let size = per_state.powi(ns as i32);
    contract(size <= MAX_BRUTE_FORCE_POLICIES, || {
        format!("policy grid has about {size:.3e} points, limit is {MAX_BRUTE_FORCE_POLICIES:e}")
    })?;
    let rows: Vec<Vec<f64>> = compositions(k, na)
        .into_iter()
        .map(|c| c.into_iter().map(|x| x as f64 / k as f64).collect())
        .collect();
    let mut idx = vec![0usize; ns];
    let mut best: Option<BruteForceResult> = None;
    loop {
        let probs: Vec<f64> = idx.iter().flat_map(|&i| rows[i].iter().copied()).collect();
        let policy = Policy::new(ns, na, probs)?;
        let value = obj.exact_eval(&marginals(mdp, &policy)?)?;
        let score = obj.score(value);
        if best.as_ref().map_or(true, |b| score > b.score) {
            best = Some(BruteForceResult {
                value,
                score,
                policy,
            });
        }
        // odometer over states
        let mut s = ns;
        loop {
            if s == 0 {
                return Ok(best.expect("grid is nonempty"));
            }
            s -= 1;
            idx[s] += 1;
            if idx[s] < rows.len() {
                break;
            }
            idx[s] = 0;
        }
    }
}

// ---------------------------------------------------------------------------
// Built-in objectives

/// Goal used by the grid objectives and the radius of its indicator.
pub const GRID_GOAL: [f64; 2] = [0.0, 0.5];
pub const GRID_GOAL_RADIUS: f64 = 0.2;
pub const GRID_CONSTRAINT: f64 = 0.9;

pub const GRID_PRESETS: [&str; 7] = [
    "linear",
    "goal",
    "det_il",
    "stoch_il",
    "entropy",
    "robust",
    "constrained",
];

/// Indicator of cells whose centre lies strictly within `radius` (Euclidean
/// norm) of `goal`.
pub fn goal_reward(layout: &GridLayout, goal: [f64; 2], radius: f64) -> Vec<f64> {
    (0..layout.n_cells())
        .map(|c| {
            let p = layout.center(c);
            let d = ((p[0] - goal[0]).powi(2) + (p[1] - goal[1]).powi(2)).sqrt();
            if d < radius {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// `R(x, y) = 1 - (x² + y²)` at cell centres.
pub fn ring_reward(layout: &GridLayout) -> Vec<f64> {
    (0..layout.n_cells())
        .map(|c| {
            let [x, y] = layout.center(c);
            1.0 - (x * x + y * y)
        })
        .collect()
}

fn uniform_on(n: usize, cells: &[usize]) -> Vec<f64> {
    let mut v = vec![0.0; n];
    for &c in cells {
        v[c] = 1.0 / cells.len() as f64;
    }
    v
}

/// Cells on the segment `y = 0`, `x ∈ [-0.5, 0.5]`.
pub fn line_cells(layout: &GridLayout) -> Vec<usize> {
    (0..layout.n_cells())
        .filter(|&c| {
            let [x, y] = layout.center(c);
            y.abs() < 1e-12 && x.abs() <= 0.5
        })
        .collect()
}

/// Jittered draws from a state distribution, for the sample-based KL.
pub fn lift_distribution(
    layout: &GridLayout,
    dist: &[f64],
    n: usize,
    seed: u64,
) -> Result<Vec<[f64; 2]>> {
    let est = MeasureEstimate {
        kind: MeasureKind::Exact,
        n_actions: 1,
        state_marginal: dist.to_vec(),
        sa_marginal: dist.to_vec(),
        clamped: 0,
    };
    Ok(est
        .sample(n, seed, Some(layout))?
        .into_iter()
        .map(|s| s.point.expect("layout given"))
        .collect())
}

/// Bounds on the lifted state entropy: a Dirac on one cell, and the best
/// spread given that `1 - γ` of the mass always sits on the start cell.
pub fn grid_entropy_bounds(layout: &GridLayout, gamma: f64) -> (f64, f64) {
    let n = layout.n_cells() as f64;
    let c = (1.0 - gamma).max(1.0 / n);
    let h = -c * c.ln() - (1.0 - c) * ((1.0 - c) / (n - 1.0)).ln();
    let off = layout.cell_area().ln();
    (off, h + off)
}

/// Builds an imitation objective from a tabular expert over states.
pub fn kl_objective(
    name: &str,
    env: &Environment,
    expert: &[f64],
    smooth_expert: bool,
    normalizer: ScoreNormalizer,
) -> Result<UtilityObjective> {
    let mdp = &env.mdp;
    check_distribution(expert, "expert measure")?;
    let expert_points = match env.layout {
        Some(l) => Some(lift_distribution(&l, expert, EXPERT_POINTS, EXPERT_POINT_SEED)?),
        None => None,
    };
    let obj = UtilityObjective {
        name: name.into(),
        utility: Utility::KlToExpert {
            expert: if smooth_expert {
                smooth(expert)
            } else {
                expert.to_vec()
            },
            expert_points,
        },
        support: Support::State,
        n_states: mdp.n_states(),
        n_actions: mdp.n_actions(),
        layout: env.layout,
        normalizer,
    };
    obj.validate()?;
    Ok(obj)
}

/// Imitation objective whose expert is the empirical state distribution of
/// a dataset, smoothed; on grids the expert draws are the dataset states
/// lifted with jitter seeded by the dataset seed.
pub fn kl_objective_from_dataset(
    name: &str,
    env: &Environment,
    data: &TransitionDataset,
) -> Result<UtilityObjective> {
    contract(data.n_states == env.mdp.n_states(), || {
        "expert dataset does not match the environment".into()
    })?;
    contract(!data.transitions.is_empty(), || "expert dataset is empty".into())?;
    let mut counts = vec![0.0; data.n_states];
    for t in &data.transitions {
        counts[t.s] += 1.0;
    }
    let n = data.transitions.len() as f64;
    counts.iter_mut().for_each(|c| *c /= n);
    let mut obj = kl_objective(name, env, &counts, true, ScoreNormalizer::new(-15.0, 0.0)?)?;
    if let (Some(l), Utility::KlToExpert { expert_points, .. }) = (env.layout, &mut obj.utility) {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(data.seed);
        let hw = l.half_width();
        *expert_points = Some(
            data.transitions
                .iter()
                .map(|t| {
                    let c = l.center(t.s);
                    [
                        c[0] + rand::Rng::gen_range(&mut rng, -hw..hw),
                        c[1] + rand::Rng::gen_range(&mut rng, -hw..hw),
                    ]
                })
                .collect(),
        );
    }
    Ok(obj)
}

fn linear_bounds(mdp: &Mdp, reward: &[f64], support: Support) -> Result<ScoreNormalizer> {
    let r = match support {
        Support::State => Reward::state(reward.to_vec()),
        Support::StateAction => Reward::state_action(reward.to_vec()),
    };
    let opts = SolverOptions::default();
    let hi = hard_value_iteration(mdp, &r, &opts)?;
    let lo = hard_value_iteration(mdp, &r.scaled(-1.0), &opts)?;
    let eval = |p: &Policy| -> Result<f64> {
        let m = marginals(mdp, p)?;
        let v = match support {
            Support::State => m.state,
            Support::StateAction => m.state_action,
        };
        Ok(crate::linalg::dot(&v, reward))
    };
    let (a, b) = (eval(&lo.policy)?, eval(&hi.policy)?);
    ScoreNormalizer::new(a, if b > a { b } else { a + 1.0 })
}

/// Named objectives. Grid environments accept every entry of
/// [`GRID_PRESETS`]; other environments only `entropy` over pairs.
pub fn preset(name: &str, env: &Environment) -> Result<UtilityObjective> {
    let mdp = &env.mdp;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let base = |utility: Utility, support: Support, normalizer: ScoreNormalizer| {
        let obj = UtilityObjective {
            name: name.into(),
            utility,
            support,
            n_states: ns,
            n_actions: na,
            layout: env.layout,
            normalizer,
        };
        obj.validate()?;
        Ok(obj)
    };
    let Some(layout) = env.layout else {
        return match name {
            "entropy" => base(
                Utility::Entropy,
                Support::StateAction,
                ScoreNormalizer::new(0.0, ((ns * na) as f64).ln())?,
            ),
            _ => Err(Error::Contract(format!(
                "objective {name:?} needs a grid environment (only \"entropy\" is generic)"
            ))),
        };
    };
    let goal = goal_reward(&layout, GRID_GOAL, GRID_GOAL_RADIUS);
    let il_norm = ScoreNormalizer::new(-15.0, 0.0)?;
    match name {
        "linear" => base(
            Utility::Linear {
                reward: ring_reward(&layout),
            },
            Support::State,
            ScoreNormalizer::new(0.0, 1.0)?,
        ),
        "goal" => base(
            Utility::Goal { reward: goal },
            Support::State,
            ScoreNormalizer::new(0.0, 1.0)?,
        ),
        "det_il" => {
            let cell = layout.cell_at(GRID_GOAL);
            kl_objective(name, env, &uniform_on(ns, &[cell]), true, il_norm)
        }
        "stoch_il" => kl_objective(name, env, &uniform_on(ns, &line_cells(&layout)), true, il_norm),
        "entropy" => {
            let (lo, hi) = grid_entropy_bounds(&layout, mdp.discount());
            base(Utility::Entropy, Support::State, ScoreNormalizer::new(lo, hi)?)
        }
        "robust" => {
            let complement = goal.iter().map(|g| 1.0 - g).collect();
            base(
                Utility::RobustMin {
                    rewards: vec![goal, complement],
                },
                Support::State,
                ScoreNormalizer::new(0.0, 0.5)?,
            )
        }
        "constrained" => base(
            Utility::Constrained {
                reward: goal,
                threshold: GRID_CONSTRAINT,
                penalty: DEFAULT_PENALTY,
                strict: false,
            },
            Support::State,
            ScoreNormalizer::new(0.0, GRID_CONSTRAINT)?,
        ),
        _ => Err(Error::Contract(format!(
            "unknown objective {name:?}; known: {}",
            GRID_PRESETS.join(", ")
        ))),
    }
}

// ---------------------------------------------------------------------------
// Objective files

/// JSON objective description: either `{"preset": name}` or a `kind` with
/// its parameters. Rewards are given inline or by name (`ring`, `goal`);
/// experts inline, as a set of cells, or as a dataset CSV path.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ObjectiveKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<Support>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewards: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expert: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expert_cells: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expert_samples: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strict: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalizer: Option<ScoreNormalizer>,
}

impl ObjectiveSpec {
    pub fn preset(name: &str) -> Self {
        Self {
            preset: Some(name.into()),
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Short label for tables.
    pub fn label(&self) -> String {
        self.name
            .clone()
            .or_else(|| self.preset.clone())
            .or_else(|| {
                self.kind
                    .map(|k| serde_json::to_value(k).ok().and_then(|v| v.as_str().map(String::from)))
                    .flatten()
            })
            .unwrap_or_else(|| "objective".into())
    }

    fn reward(&self, env: &Environment) -> Result<Vec<f64>> {
        if let Some(r) = &self.reward {
            return Ok(r.clone());
        }
        let layout = env.layout.ok_or_else(|| {
            Error::Contract("named rewards and goals need a grid environment".into())
        })?;
        match self.reward_name.as_deref() {
            Some("ring") => Ok(ring_reward(&layout)),
            Some("goal") | None => Ok(goal_reward(
                &layout,
                self.goal.unwrap_or(GRID_GOAL),
                self.radius.unwrap_or(GRID_GOAL_RADIUS),
            )),
            Some(other) => Err(Error::Contract(format!("unknown reward name {other:?}"))),
        }
    }

    /// Resolves the description against an environment; relative dataset
    /// paths are taken from `base_dir`.
    pub fn build(&self, env: &Environment, base_dir: &Path) -> Result<UtilityObjective> {
        if let Some(p) = &self.preset {
            contract(self.kind.is_none(), || "give either a preset or a kind, not both".into())?;
            let mut obj = preset(p, env)?;
            if let Some(n) = self.normalizer {
                obj.normalizer = ScoreNormalizer::new(n.min_score, n.max_score)?;
            }
            if let Some(name) = &self.name {
                obj.name = name.clone();
            }
            return Ok(obj);
        }
        let kind = self
            .kind
            .ok_or_else(|| Error::Contract("objective needs a preset or a kind".into()))?;
        let name = self.label();
        let support = self.support.unwrap_or(Support::State);
        let (ns, na) = (env.mdp.n_states(), env.mdp.n_actions());
        let need_norm = || {
            self.normalizer
                .ok_or_else(|| Error::Contract(format!("objective {name:?} needs a normalizer")))
        };
        let obj = match kind {
            ObjectiveKind::KlToExpert => {
                let norm = match self.normalizer {
                    Some(n) => n,
                    None => ScoreNormalizer::new(-15.0, 0.0)?,
                };
                contract(support == Support::State, || {
                    "imitation objectives are over states".into()
                })?;
                let mut obj = if let Some(path) = &self.expert_samples {
                    let file = std::fs::File::open(base_dir.join(path))?;
                    let data = TransitionDataset::read_csv(std::io::BufReader::new(file))?;
                    kl_objective_from_dataset(&name, env, &data)?
                } else if let Some(e) = &self.expert {
                    kl_objective(&name, env, e, true, norm)?
                } else if let Some(cells) = &self.expert_cells {
                    contract(!cells.is_empty() && cells.iter().all(|&c| c < ns), || {
                        "expert cells out of range".into()
                    })?;
                    kl_objective(&name, env, &uniform_on(ns, cells), true, norm)?
                } else {
                    return Err(Error::Contract(
                        "imitation objective needs expert, expert_cells or expert_samples".into(),
                    ));
                };
                obj.normalizer = norm;
                return Ok(obj);
            }
            ObjectiveKind::Entropy => {
                let norm = match (self.normalizer, env.layout, support) {
                    (Some(n), _, _) => n,
                    (None, Some(l), Support::State) => {
                        let (lo, hi) = grid_entropy_bounds(&l, env.mdp.discount());
                        ScoreNormalizer::new(lo, hi)?
                    }
                    (None, _, Support::State) => ScoreNormalizer::new(0.0, (ns as f64).ln())?,
                    (None, _, Support::StateAction) => {
                        ScoreNormalizer::new(0.0, ((ns * na) as f64).ln())?
                    }
                };
                (Utility::Entropy, norm)
            }
            ObjectiveKind::Linear | ObjectiveKind::Goal => {
                let reward = self.reward(env)?;
                let norm = match self.normalizer {
                    Some(n) => n,
                    None => linear_bounds(&env.mdp, &reward, support)?,
                };
                let u = if kind == ObjectiveKind::Linear {
                    Utility::Linear { reward }
                } else {
                    Utility::Goal { reward }
                };
                (u, norm)
            }
            ObjectiveKind::RobustMin => {
                let rewards = match &self.rewards {
                    Some(r) => r.clone(),
                    None => {
                        let g = self.reward(env)?;
                        let c = g.iter().map(|x| 1.0 - x).collect();
                        vec![g, c]
                    }
                };
                (Utility::RobustMin { rewards }, need_norm()?)
            }
            ObjectiveKind::Constrained => {
                let threshold = self
                    .threshold
                    .ok_or_else(|| Error::Contract("constrained objective needs a threshold".into()))?;
                let norm = match self.normalizer {
                    Some(n) => n,
                    None => ScoreNormalizer::new(0.0, threshold)?,
                };
                (
                    Utility::Constrained {
                        reward: self.reward(env)?,
                        threshold,
                        penalty: self.penalty.unwrap_or(DEFAULT_PENALTY),
                        strict: self.strict.unwrap_or(false),
                    },
                    norm,
                )
            }
        };
        let (utility, normalizer) = obj;
        let obj = UtilityObjective {
            name,
            utility,
            support,
            n_states: ns,
            n_actions: na,
            layout: env.layout,
            normalizer: ScoreNormalizer::new(normalizer.min_score, normalizer.max_score)?,
        };
        obj.validate()?;
        Ok(obj)
    }
}

/// Resolves a CLI objective argument: a preset name or a JSON file.
pub fn resolve_objective(arg: &str, env: &Environment) -> Result<UtilityObjective> {
    let path = Path::new(arg);
    if arg.ends_with(".json") || path.is_file() {
        let text = std::fs::read_to_string(path)?;
        let spec = ObjectiveSpec::from_json(&text)?;
        spec.build(env, path.parent().unwrap_or(Path::new(".")))
    } else {
        preset(arg, env)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{counterexample, grid_env};

    fn pair_entropy(ns: usize, na: usize) -> UtilityObjective {
        UtilityObjective {
            name: "entropy".into(),
            utility: Utility::Entropy,
            support: Support::StateAction,
            n_states: ns,
            n_actions: na,
            layout: None,
            normalizer: ScoreNormalizer::new(0.0, ((ns * na) as f64).ln()).unwrap(),
        }
    }

    #[test]
    fn normalizer_endpoints_and_clipping() {
        let n = ScoreNormalizer::new(-2.0, 3.0).unwrap();
        assert_eq!(n.normalize(-2.0), 0.0);
        assert_eq!(n.normalize(3.0), 1.0);
        assert_eq!(n.normalize(0.5), 0.5);
        assert_eq!(n.normalize(10.0), 1.0);
        assert_eq!(n.normalize(f64::NEG_INFINITY), 0.0);
        assert!(ScoreNormalizer::new(1.0, 1.0).is_err());
    }

    #[test]
    fn uniform_pairs_have_log2_entropy() {
        let obj = pair_entropy(1, 2);
        let m = Marginals::from_state_action(vec![0.5, 0.5], 2);
        assert!((obj.exact_eval(&m).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(obj.normalized(2f64.ln()), 1.0);
    }

    #[test]
    fn kl_is_zero_on_the_expert_and_infinite_off_support() {
        let env = counterexample(0.5).unwrap();
        let expert = vec![1.0];
        let obj = kl_objective("kl", &env, &expert, false, ScoreNormalizer::new(-1.0, 0.0).unwrap())
            .unwrap();
        let m = Marginals::from_state_action(vec![0.3, 0.7], 2);
        assert_eq!(obj.exact_eval(&m).unwrap(), 0.0);
        assert_eq!(kl_divergence(&[0.5, 0.5], &[1.0, 0.0]), f64::INFINITY);
        assert_eq!(obj.score(f64::INFINITY), f64::NEG_INFINITY);
    }

    #[test]
    fn wrong_support_is_a_dimension_error() {
        let obj = pair_entropy(2, 2);
        let m = Marginals::from_state_action(vec![0.5, 0.5], 2);
        assert!(matches!(obj.exact_eval(&m), Err(Error::Dimension(_))));
    }

    #[test]
    fn constrained_penalty_and_strict_modes() {
        let mut obj = UtilityObjective {
            name: "c".into(),
            utility: Utility::Constrained {
                reward: vec![1.0, 0.0],
                threshold: 0.5,
                penalty: 10.0,
                strict: false,
            },
            support: Support::StateAction,
            n_states: 1,
            n_actions: 2,
            layout: None,
            normalizer: ScoreNormalizer::new(0.0, 0.5).unwrap(),
        };
        let m = |p: f64| Marginals::from_state_action(vec![p, 1.0 - p], 2);
        assert!((obj.exact_eval(&m(0.4)).unwrap() - 0.4).abs() < 1e-15);
        assert!((obj.exact_eval(&m(0.6)).unwrap() - (0.6 - 1.0)).abs() < 1e-12);
        if let Utility::Constrained { strict, .. } = &mut obj.utility {
            *strict = true;
        }
        assert_eq!(obj.exact_eval(&m(0.6)).unwrap(), 0.0);
    }

    #[test]
    fn compositions_cover_the_simplex_grid() {
        let c = compositions(4, 3);
        assert_eq!(c.len(), 15);
        assert!(c.iter().all(|v| v.iter().sum::<usize>() == 4));
        assert_eq!(binomial(6, 2), 15.0);
    }

    #[test]
    fn brute_force_single_state_entropy() {
        let env = counterexample(0.5).unwrap();
        let obj = pair_entropy(1, 2);
        let best = brute_force_optimum(&obj, &env.mdp, 201).unwrap();
        assert!((best.value - 2f64.ln()).abs() < 1e-12);
        assert!((best.policy.prob(0, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn brute_force_rejects_huge_grids() {
        let env = grid_env(3, 0.5).unwrap();
        let obj = preset("entropy", &env).unwrap();
        let err = brute_force_optimum(&obj, &env.mdp, 11).unwrap_err();
        assert!(err.to_string().contains("policy grid"));
    }

    #[test]
    fn grid_presets_build() {
        let env = grid_env(9, 0.5).unwrap();
        for name in GRID_PRESETS {
            let obj = preset(name, &env).unwrap();
            obj.validate().unwrap();
        }
        let l = env.layout.unwrap();
        // two cell centres lie within 0.2 of (0, 0.5)
        assert_eq!(goal_reward(&l, GRID_GOAL, GRID_GOAL_RADIUS).iter().sum::<f64>(), 2.0);
        assert_eq!(line_cells(&l).len(), 5);
        assert!(preset("linear", &counterexample(0.5).unwrap()).is_err());
    }

    #[test]
    fn spec_file_round_trip() {
        let text = r#"{"kind": "constrained", "reward_name": "goal", "threshold": 0.9, "strict": true}"#;
        let spec = ObjectiveSpec::from_json(text).unwrap();
        let env = grid_env(9, 0.5).unwrap();
        let obj = spec.build(&env, Path::new(".")).unwrap();
        assert_eq!(obj.kind(), ObjectiveKind::Constrained);
        assert_eq!(obj.normalizer, ScoreNormalizer::new(0.0, 0.9).unwrap());
        let back = ObjectiveSpec::from_json(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        assert!(ObjectiveSpec::from_json(r#"{"kind": "entropy", "bogus": 1}"#).is_err());
    }
}
