//! The experiment pipeline: data, model, search, ground truth, scores.

use std::path::Path;
use std::time::Instant;

use softfb::envs::Environment;
use softfb::inference::{attach_ground_truth, derive_seed, zero_order_search, Candidate, SearchContext};
use softfb::measures::{collect_dataset, ExplicitConfig, ExplicitMeasureModel, MeasureKind, TransitionDataset};
use softfb::softfb::exact::ExactFbModel;
use softfb::softfb::learned::{train, LearnedFbModel, ModelSpec, TrainConfig};
use softfb::softfb::FbModel;
use softfb::utilities::UtilityObjective;
use softfb::Policy;

use crate::config::{ExperimentConfig, Regime};
use crate::stats::spearman;
use crate::HarnessError;

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub env: String,
    pub algorithm: String,
    pub objective: String,
    pub measure_kind: String,
    pub seed: u64,
    pub offline_best: f64,
    pub ground_truth_of_best: f64,
    pub normalized_score: f64,
    pub spearman_rho: f64,
    pub spearman_degenerate: bool,
    /// Seconds; kept out of the results CSV so reruns stay byte-identical.
    pub wall_time: f64,
    /// Empty on success.
    pub error: String,
}

/// Per-(objective, seed) candidate table.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateTable {
    pub objective: String,
    pub seed: u64,
    pub candidates: Vec<Candidate>,
}

#[derive(Clone, Debug, Default)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub tables: Vec<CandidateTable>,
    /// Implicit weights clamped to zero, summed over all candidates.
    pub clamped_weights: usize,
}

impl ExperimentOutput {
    pub fn failed(&self) -> bool {
        self.rows.iter().any(|r| !r.error.is_empty())
    }
}

/// Uniform-behaviour dataset for `seed`, or the configured file.
pub fn dataset_for(
    cfg: &ExperimentConfig,
    env: &Environment,
    seed: u64,
    base_dir: &Path,
) -> softfb::Result<TransitionDataset> {
    match &cfg.dataset.path {
        Some(p) => {
            let f = std::fs::File::open(base_dir.join(p))?;
            let data = TransitionDataset::read_csv(std::io::BufReader::new(f))?;
            if data.n_states != env.mdp.n_states() || data.n_actions != env.mdp.n_actions() {
                return Err(softfb::Error::Dimension(
                    "dataset does not match the environment".into(),
                ));
            }
            Ok(data)
        }
        None => {
            let (ns, na) = (env.mdp.n_states(), env.mdp.n_actions());
            collect_dataset(
                &env.mdp,
                &Policy::uniform(ns, na),
                cfg.dataset.n_steps,
                cfg.dataset.episode_len,
                seed,
                &env.name,
            )
        }
    }
}

/// Trains a learned model with every seed tied to `seed`.
pub fn train_learned(
    env: &Environment,
    data: &TransitionDataset,
    spec: &ModelSpec,
    train_cfg: &TrainConfig,
    seed: u64,
) -> softfb::Result<LearnedFbModel> {
    let spec = ModelSpec {
        feature_seed: seed,
        init_seed: seed,
        ..spec.clone()
    };
    let model = LearnedFbModel::new(
        env.mdp.n_states(),
        env.mdp.n_actions(),
        env.mdp.discount(),
        data.rho.clone(),
        &spec,
    )?;
    let cfg = TrainConfig {
        seed,
        ..train_cfg.clone()
    };
    Ok(train(model, data, &cfg)?.0)
}

struct SeedModels {
    model: Box<dyn FbModel>,
    explicit: Option<ExplicitMeasureModel>,
}

fn build_models(
    cfg: &ExperimentConfig,
    env: &Environment,
    seed: u64,
    base_dir: &Path,
) -> softfb::Result<SeedModels> {
    let needs_data = cfg.regime == Regime::Learned || cfg.measure_kind == MeasureKind::Explicit;
    let data = if needs_data {
        Some(dataset_for(cfg, env, seed, base_dir)?)
    } else {
        None
    };
    let explicit = match (&data, cfg.measure_kind) {
        (Some(d), MeasureKind::Explicit) => Some(ExplicitMeasureModel::fit(
            d,
            env.mdp.discount(),
            ExplicitConfig::default(),
        )?),
        _ => None,
    };
    let model: Box<dyn FbModel> = match cfg.regime {
        Regime::Exact => Box::new(ExactFbModel::identity(env.mdp.clone())?),
        Regime::Learned => {
            let spec = ModelSpec {
                mode: cfg.algorithm.mode(),
                ..cfg.model.clone()
            };
            let data = data.as_ref().expect("learned regime collects data");
            Box::new(train_learned(env, data, &spec, &cfg.train, seed)?)
        }
    };
    Ok(SeedModels { model, explicit })
}

fn error_row(cfg: &ExperimentConfig, env: &Environment, objective: &str, seed: u64, e: &dyn std::fmt::Display) -> ResultRow {
    ResultRow {
        env: env.name.clone(),
        algorithm: cfg.algorithm.as_str().into(),
        objective: objective.into(),
        measure_kind: cfg.measure_kind.to_string(),
        seed,
        offline_best: f64::NAN,
        ground_truth_of_best: f64::NAN,
        normalized_score: f64::NAN,
        spearman_rho: f64::NAN,
        spearman_degenerate: false,
        wall_time: 0.0,
        error: e.to_string(),
    }
}

/// One objective on one seed.
fn run_task(
    cfg: &ExperimentConfig,
    env: &Environment,
    models: &SeedModels,
    obj: &UtilityObjective,
    seed: u64,
    task: u64,
    out: &mut ExperimentOutput,
) -> softfb::Result<ResultRow> {
    let t0 = Instant::now();
    let search = softfb::inference::SearchConfig {
        seed: derive_seed(seed, task),
        ..cfg.effective_search()
    };
    let ctx = SearchContext {
        mdp: &env.mdp,
        explicit: models.explicit.as_ref(),
    };
    let model = models.model.as_ref();
    let mut res = zero_order_search(model, obj, cfg.measure_kind, &ctx, &search)?;
    let mode = search.sampler.mode();
    attach_ground_truth(&mut res, &env.mdp, model, mode, obj)?;
    if cfg.measure_kind == MeasureKind::Implicit {
        for c in &res.candidates {
            if let Ok(est) = softfb::measures::implicit_measure(model, &c.z, mode, &env.mdp) {
                out.clamped_weights += est.clamped;
            }
        }
    }
    let k = cfg.spearman_candidates.min(res.candidates.len());
    let (offline, truth): (Vec<f64>, Vec<f64>) = res.candidates[..k]
        .iter()
        .map(|c| (c.offline_score, c.ground_truth.expect("attached")))
        .unzip();
    let rank = if k >= 2 {
        spearman(&offline, &truth).ok()
    } else {
        None
    };
    let gt = res.candidates[res.best_index].ground_truth.expect("attached");
    let row = ResultRow {
        env: env.name.clone(),
        algorithm: cfg.algorithm.as_str().into(),
        objective: obj.name.clone(),
        measure_kind: cfg.measure_kind.to_string(),
        seed,
        offline_best: res.offline_score,
        ground_truth_of_best: gt,
        normalized_score: obj.normalizer.normalize(gt),
        spearman_rho: rank.map_or(f64::NAN, |r| r.rho),
        spearman_degenerate: rank.map_or(false, |r| r.degenerate),
        wall_time: t0.elapsed().as_secs_f64(),
        error: String::new(),
    };
    out.tables.push(CandidateTable {
        objective: obj.name.clone(),
        seed,
        candidates: res.candidates,
    });
    Ok(row)
}

/// Runs every (seed, objective) task in canonical order. Stage failures are
/// recorded as error rows and the remaining tasks still run.
pub fn run_experiment(cfg: &ExperimentConfig, base_dir: &Path) -> Result<ExperimentOutput, HarnessError> {
    let (env, objectives) = cfg.validate(base_dir)?;
    let mut out = ExperimentOutput::default();
    for &seed in &cfg.seeds {
        let models = match build_models(cfg, &env, seed, base_dir) {
            Ok(m) => m,
            Err(e) => {
                for obj in &objectives {
                    out.rows.push(error_row(cfg, &env, &obj.name, seed, &e));
                }
                continue;
            }
        };
        for (task, obj) in objectives.iter().enumerate() {
            match run_task(cfg, &env, &models, obj, seed, task as u64, &mut out) {
                Ok(row) => out.rows.push(row),
                Err(e) => out.rows.push(error_row(cfg, &env, &obj.name, seed, &e)),
            }
        }
    }
    Ok(out)
}
