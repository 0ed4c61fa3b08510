//! Experiment configuration files (JSON).

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use softfb::envs::{by_name, Environment};
use softfb::inference::{Sampler, SearchConfig};
use softfb::measures::MeasureKind;
use softfb::mdp::MAX_DENSE_PAIRS;
use softfb::softfb::learned::{ModelSpec, TrainConfig};
use softfb::softfb::PolicyMode;
use softfb::utilities::{preset, ObjectiveSpec, UtilityObjective};

use crate::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Greedy policies, embeddings on the sphere.
    FbHard,
    /// Soft policies, embeddings in the ball.
    SfbSoft,
}

impl Algorithm {
    pub fn mode(self) -> PolicyMode {
        match self {
            Self::FbHard => PolicyMode::Hard,
            Self::SfbSoft => PolicyMode::Soft,
        }
    }

    pub fn sampler(self) -> Sampler {
        match self {
            Self::FbHard => Sampler::SphereUniform,
            Self::SfbSoft => Sampler::BallUniform,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::FbHard => "fb_hard",
            Self::SfbSoft => "sfb_soft",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// FB fixed point solved by linear algebra with `B = I`.
    Exact,
    /// Trained from an offline dataset.
    Learned,
}

/// A preset name or a full objective description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ObjectiveEntry {
    Name(String),
    Spec(ObjectiveSpec),
}

impl ObjectiveEntry {
    pub fn build(&self, env: &Environment, base_dir: &Path) -> softfb::Result<UtilityObjective> {
        match self {
            Self::Name(n) => preset(n, env),
            Self::Spec(s) => s.build(env, base_dir),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_steps: usize,
    pub episode_len: usize,
    /// Load transitions from this CSV instead of collecting them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_steps: 20_000,
            episode_len: 2,
            path: None,
        }
    }
}

fn default_spearman() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: String,
    pub algorithm: Algorithm,
    pub regime: Regime,
    pub objectives: Vec<ObjectiveEntry>,
    pub measure_kind: MeasureKind,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub model: ModelSpec,
    /// Candidates entering the rank correlation.
    #[serde(default = "default_spearman")]
    pub spearman_candidates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

impl ExperimentConfig {
    pub fn new(
        env: &str,
        algorithm: Algorithm,
        regime: Regime,
        objectives: &[&str],
        measure_kind: MeasureKind,
        seeds: Vec<u64>,
    ) -> Self {
        Self {
            env: env.into(),
            algorithm,
            regime,
            objectives: objectives.iter().map(|o| ObjectiveEntry::Name((*o).into())).collect(),
            measure_kind,
            seeds,
            search: SearchConfig::default(),
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            model: ModelSpec::default(),
            spearman_candidates: default_spearman(),
            out_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Validation(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Search settings with the sampler fixed by the algorithm.
    pub fn effective_search(&self) -> SearchConfig {
        SearchConfig {
            sampler: self.algorithm.sampler(),
            ..self.search
        }
    }

    /// Checks names resolve and parameters are usable; returns the
    /// environment and objectives.
    pub fn validate(
        &self,
        base_dir: &Path,
    ) -> Result<(Environment, Vec<UtilityObjective>), HarnessError> {
        let bad = |m: String| Err(HarnessError::Validation(m));
        if self.seeds.is_empty() {
            return bad("seeds list is empty".into());
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.objectives.is_empty() {
            return bad("no objectives".into());
        }
        let env = by_name(&self.env).map_err(HarnessError::validation)?;
        if self.regime == Regime::Exact && env.mdp.n_pairs() > MAX_DENSE_PAIRS {
            return bad(format!(
                "exact regime needs at most {MAX_DENSE_PAIRS} state-action pairs, {} has {}",
                self.env,
                env.mdp.n_pairs()
            ));
        }
        self.effective_search().validate().map_err(HarnessError::validation)?;
        if self.regime == Regime::Learned {
            self.train.validate().map_err(HarnessError::validation)?;
        }
        if self.dataset.n_steps == 0 || self.dataset.episode_len == 0 {
            return bad("dataset sizes must be positive".into());
        }
        let objectives = self
            .objectives
            .iter()
            .map(|o| o.build(&env, base_dir))
            .collect::<softfb::Result<Vec<_>>>()
            .map_err(HarnessError::validation)?;
        Ok((env, objectives))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_seeds_rejected() {
        let cfg = ExperimentConfig::new(
            "counterexample",
            Algorithm::SfbSoft,
            Regime::Exact,
            &["entropy"],
            MeasureKind::Exact,
            vec![],
        );
        assert!(matches!(cfg.validate(Path::new(".")), Err(HarnessError::Validation(_))));
        let dup = ExperimentConfig {
            seeds: vec![1, 1],
            ..cfg.clone()
        };
        assert!(dup.validate(Path::new(".")).is_err());
        let ok = ExperimentConfig {
            seeds: vec![0],
            ..cfg
        };
        assert!(ok.validate(Path::new(".")).is_ok());
    }

    #[test]
    fn json_round_trip_with_defaults() {
        let text = r#"{
            "env": "grid9", "algorithm": "sfb_soft", "regime": "learned",
            "objectives": ["goal", {"kind": "entropy"}],
            "measure_kind": "explicit", "seeds": [0, 1],
            "train": {"steps": 100}
        }"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(cfg.train.steps, 100);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(cfg.search.n_candidates, 1024);
        let back = ExperimentConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(ExperimentConfig::from_json(r#"{"env": "grid9"}"#).is_err());
    }

    #[test]
    fn exact_regime_rejects_large_envs() {
        let cfg = ExperimentConfig::new(
            "grid9",
            Algorithm::SfbSoft,
            Regime::Exact,
            &["entropy"],
            MeasureKind::Exact,
            vec![0],
        );
        let err = cfg.validate(Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("exact regime"));
    }
}
