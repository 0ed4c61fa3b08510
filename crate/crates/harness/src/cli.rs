//! Command-line verbs.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use softfb::envs::Environment;
use softfb::inference::{
    evaluate_ground_truth, write_candidates_csv, zero_order_search, SearchContext, SearchMethod,
};
use softfb::mdp::MAX_DENSE_PAIRS;
use softfb::measures::{ExplicitConfig, ExplicitMeasureModel, MeasureKind, TransitionDataset};
use softfb::softfb::exact::ExactFbModel;
use softfb::softfb::learned::{train, LearnedFbModel, ModelSpec, TrainConfig};
use softfb::softfb::{FbModel, PolicyMode};
use softfb::utilities::UtilityObjective;

use crate::checks::{run_all, train_learned_grid, GRID_STEPS};
use crate::config::{Algorithm, ExperimentConfig, ObjectiveEntry, Regime};
use crate::experiment::{dataset_for, run_experiment};
use crate::output::{csv_bytes, summarize, write_atomic, write_experiment};
use crate::{counterexample, HarnessError, Result};

#[derive(Debug, Parser)]
#[command(name = "softfb", version, about = "Zero-shot RL with soft forward-backward representations on tabular MDPs")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub verb: Verb,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// Master seed; replaces the config's seed list with this one seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// `counterexample`, `grid<side>` or `random:<seed>`.
    #[arg(long, global = true)]
    pub env: Option<String>,
    /// Preset name or objective JSON file; repeatable.
    #[arg(long, global = true)]
    pub objective: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Verb {
    /// Roll out the uniform behaviour policy and save the transitions.
    Collect {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        episode_len: Option<usize>,
    },
    /// Train a learned FB model and save a checkpoint.
    Train {
        /// Transitions file from `collect`; collected on the fly if absent.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, value_parser = parse_algorithm)]
        algorithm: Option<Algorithm>,
    },
    /// Zero-order search for the best embedding of an objective.
    Infer(ModelArgs),
    /// Ground-truth utility of one embedding.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        /// Comma-separated embedding.
        #[arg(long, conflicts_with = "z_file")]
        z: Option<String>,
        /// `best.json` written by `infer`.
        #[arg(long)]
        z_file: Option<PathBuf>,
    },
    /// Full pipeline over every objective and seed; writes result tables.
    Sweep {
        #[arg(long, value_parser = parse_algorithm)]
        algorithm: Option<Algorithm>,
        #[arg(long, value_parser = parse_regime)]
        regime: Option<Regime>,
        #[arg(long, value_parser = parse_measure)]
        measure_kind: Option<MeasureKind>,
    },
    /// Single-state demonstration: hard FB misses the maximum-entropy policy.
    Counterexample,
    /// Run the invariant suites.
    Selfcheck {
        /// Skip the suites that train a grid model.
        #[arg(long)]
        skip_learned: bool,
        /// Training steps for the grid model.
        #[arg(long, default_value_t = GRID_STEPS)]
        steps: usize,
    },
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Learned checkpoint; without one the exact model of the environment is used.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_parser = parse_algorithm)]
    pub algorithm: Option<Algorithm>,
    #[arg(long, value_parser = parse_measure)]
    pub measure_kind: Option<MeasureKind>,
    /// Transitions for the explicit measure model.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub candidates: Option<usize>,
    #[arg(long, value_parser = parse_method)]
    pub method: Option<SearchMethod>,
}

fn parse_enum<T: for<'de> Deserialize<'de>>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|e| e.to_string())
}

fn parse_algorithm(s: &str) -> std::result::Result<Algorithm, String> {
    parse_enum(s)
}

fn parse_regime(s: &str) -> std::result::Result<Regime, String> {
    parse_enum(s)
}

fn parse_measure(s: &str) -> std::result::Result<MeasureKind, String> {
    parse_enum(s)
}

fn parse_method(s: &str) -> std::result::Result<SearchMethod, String> {
    parse_enum(s)
}

fn val(e: softfb::Error) -> HarnessError {
    HarnessError::validation(e)
}

fn rt(e: softfb::Error) -> HarnessError {
    HarnessError::runtime(e)
}

/// The config file (or defaults) with command-line flags applied, and the
/// directory relative paths are resolved against.
fn load_config(g: &Global) -> Result<(ExperimentConfig, PathBuf)> {
    let (mut cfg, base) = match &g.config {
        Some(p) => (
            ExperimentConfig::load(p)?,
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => {
            let env = g.env.clone().unwrap_or_else(|| "counterexample".into());
            let regime = match softfb::envs::by_name(&env) {
                Ok(e) if e.mdp.n_pairs() > MAX_DENSE_PAIRS => Regime::Learned,
                _ => Regime::Exact,
            };
            let kind = match regime {
                Regime::Exact => MeasureKind::Exact,
                Regime::Learned => MeasureKind::Explicit,
            };
            let cfg = ExperimentConfig::new(&env, Algorithm::SfbSoft, regime, &["entropy"], kind, vec![0]);
            (cfg, PathBuf::from("."))
        }
    };
    if let Some(env) = &g.env {
        cfg.env = env.clone();
    }
    if !g.objective.is_empty() {
        cfg.objectives = g.objective.iter().map(|o| ObjectiveEntry::Name(o.clone())).collect();
    }
    if let Some(seed) = g.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &g.out {
        cfg.out_dir = Some(out.display().to_string());
    }
    Ok((cfg, base))
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    PathBuf::from(cfg.out_dir.as_deref().unwrap_or("softfb_out"))
}

fn environment(cfg: &ExperimentConfig) -> Result<Environment> {
    softfb::envs::by_name(&cfg.env).map_err(val)
}

/// Objective arguments may name JSON files; those go through
/// `resolve_objective` so relative paths work from the current directory.
fn objectives(cfg: &ExperimentConfig, env: &Environment, base: &Path) -> Result<Vec<UtilityObjective>> {
    cfg.objectives
        .iter()
        .map(|o| match o {
            ObjectiveEntry::Name(n) => softfb::utilities::resolve_objective(n, env),
            spec => spec.build(env, base),
        })
        .collect::<softfb::Result<Vec<_>>>()
        .map_err(val)
}

fn first_seed(cfg: &ExperimentConfig) -> Result<u64> {
    cfg.seeds
        .first()
        .copied()
        .ok_or_else(|| HarnessError::Validation("seeds list is empty".into()))
}

fn read_dataset(path: &Path, env: &Environment) -> Result<TransitionDataset> {
    let f = std::fs::File::open(path)
        .map_err(|e| HarnessError::Validation(format!("{}: {e}", path.display())))?;
    let data = TransitionDataset::read_csv(std::io::BufReader::new(f)).map_err(val)?;
    if data.n_states != env.mdp.n_states() || data.n_actions != env.mdp.n_actions() {
        return Err(HarnessError::Validation(format!(
            "dataset is {}x{}, environment {} is {}x{}",
            data.n_states,
            data.n_actions,
            env.name,
            env.mdp.n_states(),
            env.mdp.n_actions()
        )));
    }
    Ok(data)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn collect(g: &Global, steps: Option<usize>, episode_len: Option<usize>) -> Result<()> {
    let (mut cfg, base) = load_config(g)?;
    cfg.dataset.n_steps = steps.unwrap_or(cfg.dataset.n_steps);
    cfg.dataset.episode_len = episode_len.unwrap_or(cfg.dataset.episode_len);
    cfg.dataset.path = None;
    let env = environment(&cfg)?;
    let data = dataset_for(&cfg, &env, first_seed(&cfg)?, &base).map_err(val)?;
    let dir = out_dir(&cfg);
    let mut buf = Vec::new();
    data.write_csv(&mut buf).map_err(rt)?;
    write_atomic(&dir.join("dataset.csv"), &buf)?;
    write_atomic(&dir.join("mdp.json"), env.mdp.to_json().map_err(rt)?.as_bytes())?;
    println!("{} transitions from {} -> {}", data.len(), env.name, dir.join("dataset.csv").display());
    Ok(())
}

fn train_verb(
    g: &Global,
    dataset: Option<&Path>,
    steps: Option<usize>,
    algorithm: Option<Algorithm>,
) -> Result<()> {
    let (mut cfg, base) = load_config(g)?;
    if let Some(a) = algorithm {
        cfg.algorithm = a;
    }
    cfg.train.steps = steps.unwrap_or(cfg.train.steps);
    cfg.train.validate().map_err(val)?;
    let env = environment(&cfg)?;
    let seed = first_seed(&cfg)?;
    let data = match dataset {
        Some(p) => read_dataset(p, &env)?,
        None => dataset_for(&cfg, &env, seed, &base).map_err(val)?,
    };
    let spec = ModelSpec {
        mode: cfg.algorithm.mode(),
        feature_seed: seed,
        init_seed: seed,
        ..cfg.model.clone()
    };
    let model = LearnedFbModel::new(
        env.mdp.n_states(),
        env.mdp.n_actions(),
        env.mdp.discount(),
        data.rho.clone(),
        &spec,
    )
    .map_err(val)?;
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let (model, log) = train(model, &data, &train_cfg).map_err(rt)?;
    let dir = out_dir(&cfg);
    write_atomic(&dir.join("model.ckpt"), &model.to_bytes())?;
    let window = 1000.min(log.fb.len().max(1));
    let rows = (0..log.fb.len()).step_by(window).map(|i| {
        let j = (i + window).min(log.fb.len());
        let mean = |v: &[f64]| v[i..j].iter().sum::<f64>() / (j - i) as f64;
        vec![
            j.to_string(),
            mean(&log.fb).to_string(),
            mean(&log.ortho).to_string(),
            mean(&log.critic).to_string(),
        ]
    });
    write_atomic(
        &dir.join("train_log.csv"),
        &csv_bytes(&["step", "fb_loss", "ortho_loss", "critic_loss"], rows)?,
    )?;
    println!("trained {} steps -> {}", train_cfg.steps, dir.join("model.ckpt").display());
    Ok(())
}

/// A model to query and the mode its policies use.
struct LoadedModel {
    env: Environment,
    model: Box<dyn FbModel>,
    mode: PolicyMode,
    explicit: Option<ExplicitMeasureModel>,
    kind: MeasureKind,
}

fn load_model(cfg: &mut ExperimentConfig, args: &ModelArgs, base: &Path) -> Result<LoadedModel> {
    if let Some(a) = args.algorithm {
        cfg.algorithm = a;
    }
    let env = environment(cfg)?;
    let (model, mode): (Box<dyn FbModel>, PolicyMode) = match &args.checkpoint {
        Some(p) => {
            let m = LearnedFbModel::load(p)
                .map_err(|e| HarnessError::Validation(format!("{}: {e}", p.display())))?;
            if m.n_states() != env.mdp.n_states() || m.n_actions() != env.mdp.n_actions() {
                return Err(HarnessError::Validation(format!(
                    "checkpoint does not match environment {}",
                    env.name
                )));
            }
            let mode = m.mode();
            (Box::new(m), mode)
        }
        None => {
            if env.mdp.n_pairs() > MAX_DENSE_PAIRS {
                return Err(HarnessError::Validation(format!(
                    "{} is too large for the exact model; pass --checkpoint",
                    env.name
                )));
            }
            (
                Box::new(ExactFbModel::identity(env.mdp.clone()).map_err(rt)?),
                cfg.algorithm.mode(),
            )
        }
    };
    cfg.algorithm = match mode {
        PolicyMode::Hard => Algorithm::FbHard,
        PolicyMode::Soft => Algorithm::SfbSoft,
    };
    let kind = args.measure_kind.unwrap_or(if args.checkpoint.is_some() {
        MeasureKind::Implicit
    } else {
        MeasureKind::Exact
    });
    let explicit = if kind == MeasureKind::Explicit {
        let data = match &args.dataset {
            Some(p) => read_dataset(p, &env)?,
            None => dataset_for(cfg, &env, first_seed(cfg)?, base).map_err(val)?,
        };
        Some(ExplicitMeasureModel::fit(&data, env.mdp.discount(), ExplicitConfig::default()).map_err(rt)?)
    } else {
        None
    };
    Ok(LoadedModel {
        env,
        model,
        mode,
        explicit,
        kind,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct BestEmbedding {
    objective: String,
    mode: PolicyMode,
    measure_kind: MeasureKind,
    index: usize,
    offline_score: f64,
    z: Vec<f64>,
}

fn infer(g: &Global, args: &ModelArgs) -> Result<()> {
    let (mut cfg, base) = load_config(g)?;
    let lm = load_model(&mut cfg, args, &base)?;
    let objs = objectives(&cfg, &lm.env, &base)?;
    let mut search = cfg.effective_search();
    search.seed = first_seed(&cfg)?;
    search.n_candidates = args.candidates.unwrap_or(search.n_candidates);
    search.method = args.method.unwrap_or(search.method);
    search.validate().map_err(val)?;
    let ctx = SearchContext {
        mdp: &lm.env.mdp,
        explicit: lm.explicit.as_ref(),
    };
    let dir = out_dir(&cfg);
    for obj in &objs {
        let res = zero_order_search(lm.model.as_ref(), obj, lm.kind, &ctx, &search).map_err(rt)?;
        let mut buf = Vec::new();
        write_candidates_csv(&mut buf, &res.candidates).map_err(rt)?;
        let slug = crate::output::slug(&obj.name);
        write_atomic(&dir.join(format!("{slug}_candidates.csv")), &buf)?;
        let best = BestEmbedding {
            objective: obj.name.clone(),
            mode: lm.mode,
            measure_kind: lm.kind,
            index: res.best_index,
            offline_score: res.offline_score,
            z: res.z_best,
        };
        write_json(&dir.join(format!("{slug}_best.json")), &best)?;
        println!(
            "{}: candidate {} offline score {} -> {}",
            obj.name,
            best.index,
            best.offline_score,
            dir.join(format!("{slug}_best.json")).display()
        );
    }
    Ok(())
}

fn parse_z(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| HarnessError::Validation(format!("bad embedding component {t:?}")))
        })
        .collect()
}

fn eval(g: &Global, args: &ModelArgs, z: Option<&str>, z_file: Option<&Path>) -> Result<()> {
    let (mut cfg, base) = load_config(g)?;
    let lm = load_model(&mut cfg, args, &base)?;
    let z = match (z, z_file) {
        (Some(t), _) => parse_z(t)?,
        (None, Some(p)) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| HarnessError::Validation(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<BestEmbedding>(&text)
                .map_err(|e| HarnessError::Validation(format!("{}: {e}", p.display())))?
                .z
        }
        (None, None) => return Err(HarnessError::Validation("pass --z or --z-file".into())),
    };
    if z.len() != lm.model.dim() {
        return Err(HarnessError::Validation(format!(
            "embedding has {} components, model dimension is {}",
            z.len(),
            lm.model.dim()
        )));
    }
    let mut rows = Vec::new();
    for obj in objectives(&cfg, &lm.env, &base)? {
        let gt = evaluate_ground_truth(&lm.env.mdp, lm.model.as_ref(), &z, lm.mode, &obj).map_err(rt)?;
        let norm = obj.normalizer.normalize(gt);
        println!("{}: ground truth {gt} normalized {norm}", obj.name);
        rows.push(vec![obj.name.clone(), gt.to_string(), norm.to_string()]);
    }
    let dir = out_dir(&cfg);
    write_atomic(
        &dir.join("eval.csv"),
        &csv_bytes(&["objective", "ground_truth", "normalized_score"], rows)?,
    )?;
    Ok(())
}

fn sweep(
    g: &Global,
    algorithm: Option<Algorithm>,
    regime: Option<Regime>,
    measure_kind: Option<MeasureKind>,
) -> Result<()> {
    let (mut cfg, base) = load_config(g)?;
    cfg.algorithm = algorithm.unwrap_or(cfg.algorithm);
    cfg.regime = regime.unwrap_or(cfg.regime);
    cfg.measure_kind = measure_kind.unwrap_or(cfg.measure_kind);
    if cfg.regime == Regime::Learned && cfg.measure_kind == MeasureKind::Exact {
        // ground truth is always exact; the offline estimate must come from data
        return Err(HarnessError::Validation(
            "learned regime needs an implicit or explicit measure".into(),
        ));
    }
    let out = run_experiment(&cfg, &base)?;
    let dir = out_dir(&cfg);
    write_experiment(&dir, &cfg, &out)?;
    for s in summarize(&out.rows) {
        println!(
            "{} {} {} {}: mean {:.4} ci {} (n={}){}",
            s.env,
            s.algorithm,
            s.objective,
            s.measure_kind,
            s.mean,
            s.ci_half_width.map_or("-".into(), |h| format!("{h:.4}")),
            s.n,
            if s.bold { " *" } else { "" }
        );
    }
    let failed = out.rows.iter().filter(|r| !r.error.is_empty()).count();
    if failed > 0 {
        return Err(HarnessError::Runtime(format!(
            "{failed} of {} tasks failed; see {}",
            out.rows.len(),
            dir.join("manifest.json").display()
        )));
    }
    Ok(())
}

fn counterexample_verb(g: &Global) -> Result<()> {
    let r = counterexample::run(g.seed.unwrap_or(0))?;
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("softfb_out"));
    write_atomic(&dir.join("counterexample.csv"), &r.to_csv()?)?;
    let show = |m: &softfb::Mat| format!("{:?}", m.to_rows());
    println!("gamma = {}", r.gamma);
    for k in 0..2 {
        println!(
            "{}: computed {} stated {}",
            if k == 0 { "z0 > z1" } else { "z0 <= z1" },
            show(&r.computed[k]),
            show(&r.stated[k])
        );
    }
    println!(
        "matrices {} (max error {:e})",
        if r.matrices_match() { "match" } else { "DIFFER" },
        r.matrix_error
    );
    println!(
        "hard-mode entropy max over {} embeddings: {}",
        r.hard_directions, r.hard_entropy_max
    );
    println!(
        "soft-mode entropy at z = 0: {} (log 2 = {})",
        r.soft_entropy_at_zero,
        std::f64::consts::LN_2
    );
    Ok(())
}

fn selfcheck(g: &Global, skip_learned: bool, steps: usize) -> Result<()> {
    let seed = g.seed.unwrap_or(0);
    let grid = if skip_learned {
        None
    } else {
        Some(train_learned_grid(seed, steps)?)
    };
    let outcomes = run_all(seed, grid.as_ref())?;
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("softfb_out")).join("selfcheck");
    for o in &outcomes {
        println!("{}", o.line());
        write_atomic(&dir.join(format!("{}_{}.csv", o.id, o.name.replace(' ', "_"))), &o.csv)?;
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        return Err(HarnessError::Runtime(format!("{failed} of {} checks failed", outcomes.len())));
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.verb {
        Verb::Collect { steps, episode_len } => collect(g, *steps, *episode_len),
        Verb::Train {
            dataset,
            steps,
            algorithm,
        } => train_verb(g, dataset.as_deref(), *steps, *algorithm),
        Verb::Infer(args) => infer(g, args),
        Verb::Eval { model, z, z_file } => eval(g, model, z.as_deref(), z_file.as_deref()),
        Verb::Sweep {
            algorithm,
            regime,
            measure_kind,
        } => sweep(g, *algorithm, *regime, *measure_kind),
        Verb::Counterexample => counterexample_verb(g),
        Verb::Selfcheck {
            skip_learned,
            steps,
        } => selfcheck(g, *skip_learned, *steps),
    }
}
