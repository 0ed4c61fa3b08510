//! Zero-shot task inference: closed-form embeddings for linear and maxent
//! rewards, and zero-order search over the embedding ball for general
//! utilities.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::linalg::{dot, norm};
use crate::mdp::marginals;
use crate::measures::{implicit_measure, ExplicitMeasureModel, MeasureEstimate, MeasureKind};
use crate::softfb::embedding::{reparameterize, sample_ball, sample_sphere};
use crate::softfb::{FbModel, PolicyMode};
use crate::utilities::UtilityObjective;
use crate::{Mdp, Reward};

/// Below this `‖BR‖` a reward has no usable embedding.
pub const MIN_EMBED_NORM: f64 = 1e-12;
/// CEM samples are clipped radially to this norm.
pub const BALL_CLIP: f64 = 1.0 - 1e-6;

/// Unit-norm `BR / ‖BR‖`.
pub fn infer_linear<M: FbModel + ?Sized>(model: &M, reward: &Reward) -> Result<Vec<f64>> {
    let br = model.embed_reward(reward)?;
    let n = norm(&br);
    if !(n > MIN_EMBED_NORM) {
        return Err(Error::RewardNotRepresentable(n));
    }
    Ok(br.into_iter().map(|x| x / n).collect())
}

/// Maxent embedding inside the ball: the direction of `BR` with norm
/// `c / (c + 1)`, where `c = E_{s0 ~ μ0, a0 ~ π}[F(s0, a0, z')]ᵀ BR` is taken
/// at `z' = reparameterize(BR)` and clamped at zero. A zero reward maps to
/// the origin, the pure-entropy instance.
pub fn infer_maxent<M: FbModel + ?Sized>(
    model: &M,
    reward: &Reward,
    mu0: &[f64],
) -> Result<Vec<f64>> {
    let br = model.embed_reward(reward)?;
    let n = norm(&br);
    if !n.is_finite() {
        return Err(Error::RewardNotRepresentable(n));
    }
    if n <= MIN_EMBED_NORM {
        return Ok(vec![0.0; br.len()]);
    }
    let zp = reparameterize(&br);
    let (f, _) = model.expected_forward(&zp, PolicyMode::Soft, mu0)?;
    let c = dot(&f, &br).max(0.0);
    let scale = c / (c + 1.0) / n;
    Ok(br.into_iter().map(|x| x * scale).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    /// Soft-mode candidates inside the ball.
    BallUniform,
    /// Hard-mode candidates on the sphere.
    SphereUniform,
}

impl Sampler {
    pub fn mode(self) -> PolicyMode {
        match self {
            Self::BallUniform => PolicyMode::Soft,
            Self::SphereUniform => PolicyMode::Hard,
        }
    }

    fn draw(self, rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        match self {
            Self::BallUniform => sample_ball(rng, d),
            Self::SphereUniform => sample_sphere(rng, d),
        }
    }

    /// Projects an arbitrary point onto the search space.
    fn project(self, mut z: Vec<f64>) -> Vec<f64> {
        let n = norm(&z);
        let target = match self {
            Self::BallUniform if n <= BALL_CLIP => return z,
            Self::BallUniform => BALL_CLIP,
            Self::SphereUniform if n == 0.0 => {
                z[0] = 1.0;
                return z;
            }
            Self::SphereUniform => 1.0,
        };
        z.iter_mut().for_each(|x| *x *= target / n);
        z
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMethod {
    Shooting,
    Cem,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CemConfig {
    pub population: usize,
    pub elite_frac: f64,
    pub iters: usize,
    pub init_std: f64,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            population: 128,
            elite_frac: 0.1,
            iters: 8,
            init_std: 0.5,
        }
    }
}

impl CemConfig {
    pub fn n_elites(&self) -> usize {
        ((self.elite_frac * self.population as f64).round() as usize).max(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub n_candidates: usize,
    pub sampler: Sampler,
    pub method: SearchMethod,
    pub cem: CemConfig,
    /// Draws per candidate for sample-based scoring of estimated measures;
    /// 0 scores the tabular estimate directly.
    pub n_measure_samples: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            n_candidates: 1024,
            sampler: Sampler::BallUniform,
            method: SearchMethod::Shooting,
            cem: CemConfig::default(),
            n_measure_samples: 2048,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        match self.method {
            SearchMethod::Shooting => {
                contract(self.n_candidates >= 1, || "need at least one candidate".into())
            }
            SearchMethod::Cem => {
                let c = &self.cem;
                contract(c.population >= 1 && c.iters >= 1, || {
                    "CEM needs a positive population and iteration count".into()
                })?;
                contract(c.elite_frac > 0.0 && c.elite_frac <= 1.0, || {
                    "elite fraction must lie in (0, 1]".into()
                })?;
                contract(c.init_std > 0.0, || "initial CEM spread must be positive".into())
            }
        }
    }

    /// Candidates evaluated by one search.
    pub fn budget(&self) -> usize {
        match self.method {
            SearchMethod::Shooting => self.n_candidates,
            SearchMethod::Cem => self.cem.population * self.cem.iters,
        }
    }
}

/// Independent stream for task `index` of a run seeded with `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    // splitmix64 finaliser
    let mut x = master ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// What a search may consult besides the model.
#[derive(Clone, Copy)]
pub struct SearchContext<'a> {
    pub mdp: &'a Mdp,
    pub explicit: Option<&'a ExplicitMeasureModel>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub index: usize,
    pub z: Vec<f64>,
    /// Maximisation-oriented score on the estimated measure.
    pub offline_score: f64,
    pub ground_truth: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub z_best: Vec<f64>,
    pub best_index: usize,
    pub offline_score: f64,
    pub candidates: Vec<Candidate>,
}

/// Estimated measure of `π_z` under the requested model.
pub fn estimate_measure<M: FbModel + ?Sized>(
    model: &M,
    z: &[f64],
    mode: PolicyMode,
    kind: MeasureKind,
    ctx: &SearchContext,
) -> Result<MeasureEstimate> {
    let mdp = ctx.mdp;
    match kind {
        MeasureKind::Exact => {
            let out = model.policy(z, mode)?;
            Ok(MeasureEstimate::from_marginals(
                MeasureKind::Exact,
                marginals(mdp, &out.policy)?,
                mdp.n_actions(),
            ))
        }
        MeasureKind::Implicit => implicit_measure(model, z, mode, mdp),
        MeasureKind::Explicit => {
            let explicit = ctx.explicit.ok_or_else(|| {
                Error::Contract("explicit measure requested but no explicit model given".into())
            })?;
            explicit.estimate_for(model, z, mode, mdp.initial_dist())
        }
    }
}

/// Offline score of one candidate. Exact measures are always scored exactly.
pub fn offline_score<M: FbModel + ?Sized>(
    model: &M,
    obj: &UtilityObjective,
    z: &[f64],
    mode: PolicyMode,
    kind: MeasureKind,
    ctx: &SearchContext,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    let est = match estimate_measure(model, z, mode, kind, ctx) {
        Ok(e) => e,
        Err(Error::DegenerateMeasure) => return Ok(f64::NEG_INFINITY),
        Err(e) => return Err(e),
    };
    let raw = if kind == MeasureKind::Exact || n_samples == 0 {
        obj.exact_eval(&est.marginals())?
    } else {
        let draws = est.sample(n_samples, seed, obj.layout.as_ref())?;
        obj.sample_eval(&draws)?
    };
    Ok(obj.score(raw))
}

/// Maximisation-oriented utility of the policy `π_z` on the true MDP.
pub fn evaluate_ground_truth<M: FbModel + ?Sized>(
    mdp: &Mdp,
    model: &M,
    z: &[f64],
    mode: PolicyMode,
    obj: &UtilityObjective,
) -> Result<f64> {
    contract(
        model.n_states() == mdp.n_states() && model.n_actions() == mdp.n_actions(),
        || "model and MDP disagree on sizes".into(),
    )?;
    let out = model.policy(z, mode)?;
    obj.exact_score(&marginals(mdp, &out.policy)?)
}

struct Scorer<'a, M: ?Sized> {
    model: &'a M,
    obj: &'a UtilityObjective,
    kind: MeasureKind,
    ctx: &'a SearchContext<'a>,
    cfg: &'a SearchConfig,
    candidates: Vec<Candidate>,
}

impl<M: FbModel + ?Sized> Scorer<'_, M> {
    fn score(&mut self, z: Vec<f64>) -> Result<f64> {
        let index = self.candidates.len();
        let s = offline_score(
            self.model,
            self.obj,
            &z,
            self.cfg.sampler.mode(),
            self.kind,
            self.ctx,
            self.cfg.n_measure_samples,
            derive_seed(self.cfg.seed, index as u64),
        )?;
        if s.is_nan() {
            return Err(Error::Contract(format!("candidate {index} scored NaN")));
        }
        self.candidates.push(Candidate {
            index,
            z,
            offline_score: s,
            ground_truth: None,
        });
        Ok(s)
    }
}

fn cem<M: FbModel + ?Sized>(sc: &mut Scorer<'_, M>, rng: &mut ChaCha8Rng, d: usize) -> Result<()> {
    let c = sc.cfg.cem;
    let mut mean = vec![0.0; d];
    let mut std = vec![c.init_std; d];
    for _ in 0..c.iters {
        let start = sc.candidates.len();
        for _ in 0..c.population {
            let z: Vec<f64> = (0..d)
                .map(|i| mean[i] + std[i] * rng.sample::<f64, _>(StandardNormal))
                .collect();
            sc.score(sc.cfg.sampler.project(z))?;
        }
        let mut order: Vec<usize> = (start..sc.candidates.len()).collect();
        // stable: ties keep the lower index
        order.sort_by(|&a, &b| {
            sc.candidates[b]
                .offline_score
                .total_cmp(&sc.candidates[a].offline_score)
        });
        let elites = &order[..c.n_elites()];
        let k = elites.len() as f64;
        for i in 0..d {
            let m = elites.iter().map(|&e| sc.candidates[e].z[i]).sum::<f64>() / k;
            let v = elites
                .iter()
                .map(|&e| (sc.candidates[e].z[i] - m).powi(2))
                .sum::<f64>()
                / k;
            mean[i] = m;
            std[i] = v.sqrt().max(1e-6);
        }
    }
    Ok(())
}

/// Scores candidates on estimated measures and returns the best; ties go to
/// the lowest candidate index.
pub fn zero_order_search<M: FbModel + ?Sized>(
    model: &M,
    obj: &UtilityObjective,
    kind: MeasureKind,
    ctx: &SearchContext,
    cfg: &SearchConfig,
) -> Result<SearchResult> {
    cfg.validate()?;
    obj.validate()?;
    contract(
        obj.n_states == model.n_states() && obj.n_actions == model.n_actions(),
        || "objective and model disagree on sizes".into(),
    )?;
    let d = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sc = Scorer {
        model,
        obj,
        kind,
        ctx,
        cfg,
        candidates: Vec::with_capacity(cfg.budget()),
    };
    match cfg.method {
        SearchMethod::Shooting => {
            for _ in 0..cfg.n_candidates {
                let z = cfg.sampler.draw(&mut rng, d);
                sc.score(z)?;
            }
        }
        SearchMethod::Cem => cem(&mut sc, &mut rng, d)?,
    }
    let candidates = sc.candidates;
    let mut best = 0;
    for c in &candidates {
        if c.offline_score > candidates[best].offline_score {
            best = c.index;
        }
    }
    if candidates[best].offline_score == f64::NEG_INFINITY {
        return Err(Error::Unsatisfiable);
    }
    Ok(SearchResult {
        z_best: candidates[best].z.clone(),
        best_index: best,
        offline_score: candidates[best].offline_score,
        candidates,
    })
}

/// Fills in `ground_truth` for every candidate.
pub fn attach_ground_truth<M: FbModel + ?Sized>(
    result: &mut SearchResult,
    mdp: &Mdp,
    model: &M,
    mode: PolicyMode,
    obj: &UtilityObjective,
) -> Result<()> {
    for c in &mut result.candidates {
        c.ground_truth = Some(evaluate_ground_truth(mdp, model, &c.z, mode, obj)?);
    }
    Ok(())
}

/// Writes `candidate_index, z0.., offline_score, ground_truth`.
pub fn write_candidates_csv<W: Write>(out: W, candidates: &[Candidate]) -> Result<()> {
    let d = candidates.first().map_or(0, |c| c.z.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["candidate_index".to_string()];
    header.extend((0..d).map(|i| format!("z{i}")));
    header.push("offline_score".into());
    header.push("ground_truth".into());
    w.write_record(&header).map_err(csv_err)?;
    for c in candidates {
        let mut rec = vec![c.index.to_string()];
        rec.extend(c.z.iter().map(|x| x.to_string()));
        rec.push(c.offline_score.to_string());
        rec.push(c.ground_truth.map(|g| g.to_string()).unwrap_or_default());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::make_counterexample;
    use crate::softfb::exact::ExactFbModel;

    #[test]
    fn derived_seeds_differ() {
        let a: Vec<u64> = (0..100).map(|i| derive_seed(7, i)).collect();
        let mut b = a.clone();
        b.sort_unstable();
        b.dedup();
        assert_eq!(b.len(), 100);
        assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
    }

    #[test]
    fn projection_stays_in_the_search_space() {
        let z = Sampler::BallUniform.project(vec![3.0, 4.0]);
        assert!((norm(&z) - BALL_CLIP).abs() < 1e-12);
        assert_eq!(Sampler::BallUniform.project(vec![0.1, 0.2]), vec![0.1, 0.2]);
        let s = Sampler::SphereUniform.project(vec![0.1, 0.2]);
        assert!((norm(&s) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_backward_linear_embedding() {
        let mdp = make_counterexample(0.5).unwrap();
        let model = ExactFbModel::identity(mdp).unwrap();
        let z = infer_linear(&model, &Reward::state_action(vec![1.0, 0.0])).unwrap();
        assert_eq!(z, vec![1.0, 0.0]);
        let zero = Reward::state_action(vec![0.0, 0.0]);
        assert!(matches!(
            infer_linear(&model, &zero),
            Err(Error::RewardNotRepresentable(_))
        ));
    }

    #[test]
    fn elite_count_is_at_least_one() {
        let c = CemConfig {
            population: 3,
            elite_frac: 0.01,
            ..CemConfig::default()
        };
        assert_eq!(c.n_elites(), 1);
        assert_eq!(CemConfig::default().n_elites(), 13);
    }
}
