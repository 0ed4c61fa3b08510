//! Offline transition datasets and the measure estimates used at inference:
//! implicit (importance weights from `F` and `B`), explicit (a tabular
//! measure fitted by temporal differences on the dataset) and exact.

use std::io::{BufRead, Write};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::GridLayout;
use crate::error::{contract, Error, Result};
use crate::mdp::{marginals, Marginals};
use crate::softfb::{FbModel, ImplicitWeights, PolicyMode};
use crate::{Mdp, Policy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransitionDataset {
    pub env_id: String,
    pub seed: u64,
    pub n_states: usize,
    pub n_actions: usize,
    pub transitions: Vec<Transition>,
    /// Empirical distribution of states over both ends of every transition.
    pub rho: Vec<f64>,
}

impl TransitionDataset {
    pub fn new(
        env_id: impl Into<String>,
        seed: u64,
        n_states: usize,
        n_actions: usize,
        transitions: Vec<Transition>,
    ) -> Result<Self> {
        contract(!transitions.is_empty(), || "dataset has no transitions".into())?;
        for (i, t) in transitions.iter().enumerate() {
            contract(t.s < n_states && t.s_next < n_states && t.a < n_actions, || {
                format!("transition {i} is out of bounds: {t:?}")
            })?;
        }
        let mut counts = vec![0usize; n_states];
        for t in &transitions {
            counts[t.s] += 1;
            counts[t.s_next] += 1;
        }
        let total = 2.0 * transitions.len() as f64;
        let rho = counts.iter().map(|&c| c as f64 / total).collect();
        Ok(Self {
            env_id: env_id.into(),
            seed,
            n_states,
            n_actions,
            transitions,
            rho,
        })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut out = std::io::BufWriter::new(out);
        writeln!(
            out,
            "# env={} seed={} n_steps={} n_states={} n_actions={}",
            self.env_id,
            self.seed,
            self.len(),
            self.n_states,
            self.n_actions
        )?;
        let mut w = csv::Writer::from_writer(out);
        for t in &self.transitions {
            w.serialize(t).map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(mut input: R) -> Result<Self> {
        let mut header = String::new();
        input.read_line(&mut header)?;
        let header = header
            .trim()
            .strip_prefix('#')
            .ok_or_else(|| Error::Format("dataset file lacks its header comment".into()))?;
        let field = |key: &str| -> Result<&str> {
            header
                .split_whitespace()
                .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| Error::Format(format!("dataset header lacks {key}")))
        };
        let num = |key: &str| -> Result<u64> {
            field(key)?
                .parse()
                .map_err(|_| Error::Format(format!("dataset header field {key} is not a number")))
        };
        let env_id = field("env")?.to_string();
        let (seed, n_steps) = (num("seed")?, num("n_steps")? as usize);
        let (n_states, n_actions) = (num("n_states")? as usize, num("n_actions")? as usize);
        let mut rdr = csv::Reader::from_reader(input);
        let transitions = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<Transition>, _>>()
            .map_err(|e| Error::Format(e.to_string()))?;
        if transitions.len() != n_steps {
            return Err(Error::Format(format!(
                "header announces {n_steps} transitions, found {}",
                transitions.len()
            )));
        }
        Self::new(env_id, seed, n_states, n_actions, transitions)
    }
}

fn sample_index<R: Rng>(rng: &mut R, p: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver of mass: take the last supported entry
    p.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

/// Rolls out `behavior` in episodes of `episode_len` steps from `μ0` until
/// `n_steps` transitions are collected.
pub fn collect_dataset(
    mdp: &Mdp,
    behavior: &Policy,
    n_steps: usize,
    episode_len: usize,
    seed: u64,
    env_id: &str,
) -> Result<TransitionDataset> {
    contract(n_steps >= 1 && episode_len >= 1, || {
        "n_steps and episode_len must be at least 1".into()
    })?;
    contract(
        behavior.n_states() == mdp.n_states() && behavior.n_actions() == mdp.n_actions(),
        || "behavior policy does not match the MDP".into(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_steps);
    let mut s = 0;
    for i in 0..n_steps {
        if i % episode_len == 0 {
            s = sample_index(&mut rng, mdp.initial_dist());
        }
        let a = sample_index(&mut rng, behavior.row(s));
        let s_next = sample_index(&mut rng, mdp.next_dist(s, a));
        out.push(Transition { s, a, s_next });
        s = s_next;
    }
    TransitionDataset::new(env_id, seed, mdp.n_states(), mdp.n_actions(), out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    Implicit,
    Explicit,
    Exact,
}

impl std::fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Implicit => "implicit",
            Self::Explicit => "explicit",
            Self::Exact => "exact",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasureEstimate {
    pub kind: MeasureKind,
    pub n_actions: usize,
    pub state_marginal: Vec<f64>,
    pub sa_marginal: Vec<f64>,
    /// Negative implicit weights that were clamped to zero.
    pub clamped: usize,
}

/// One draw from a measure estimate, with its continuous lift when the
/// environment has cell coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasureSample {
    pub s: usize,
    pub a: usize,
    pub point: Option<[f64; 2]>,
}

impl MeasureEstimate {
    pub fn from_marginals(kind: MeasureKind, m: Marginals<f64>, n_actions: usize) -> Self {
        Self {
            kind,
            n_actions,
            state_marginal: m.state,
            sa_marginal: m.state_action,
            clamped: 0,
        }
    }

    pub fn marginals(&self) -> Marginals<f64> {
        Marginals {
            state_action: self.sa_marginal.clone(),
            state: self.state_marginal.clone(),
        }
    }

    /// i.i.d. draws from `sa_marginal`; with a layout, each state is lifted to
    /// its cell centre plus uniform jitter inside the cell.
    pub fn sample(
        &self,
        n: usize,
        seed: u64,
        layout: Option<&GridLayout>,
    ) -> Result<Vec<MeasureSample>> {
        contract(n >= 1, || "need at least one sample".into())?;
        let index = WeightedIndex::new(&self.sa_marginal)
            .map_err(|e| Error::Contract(format!("measure cannot be sampled: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n)
            .map(|_| {
                let i = index.sample(&mut rng);
                let s = i / self.n_actions;
                let point = layout.map(|l| {
                    let c = l.center(s);
                    let hw = l.half_width();
                    [
                        c[0] + rng.gen_range(-hw..hw),
                        c[1] + rng.gen_range(-hw..hw),
                    ]
                });
                MeasureSample {
                    s,
                    a: i % self.n_actions,
                    point,
                }
            })
            .collect())
    }
}

/// Free-function form of [`MeasureEstimate::sample`].
pub fn sample_measure(
    est: &MeasureEstimate,
    n: usize,
    seed: u64,
    layout: Option<&GridLayout>,
) -> Result<Vec<MeasureSample>> {
    est.sample(n, seed, layout)
}

pub fn exact_measure(mdp: &Mdp, policy: &Policy) -> Result<MeasureEstimate> {
    Ok(MeasureEstimate::from_marginals(
        MeasureKind::Exact,
        marginals(mdp, policy)?,
        mdp.n_actions(),
    ))
}

/// Clamps negatives to zero and normalises; returns the count clamped.
fn clamp_normalize(w: &mut [f64]) -> Result<usize> {
    let mut clamped = 0;
    for x in w.iter_mut() {
        if *x < 0.0 || !x.is_finite() {
            *x = 0.0;
            clamped += 1;
        }
    }
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateMeasure);
    }
    for x in w.iter_mut() {
        *x /= total;
    }
    Ok(clamped)
}

/// `w(x) ∝ E_{s0 ~ μ0, a0 ~ π_z}[F(s0, a0, z)]ᵀ B(x) ρ(x)`, clamped at zero.
///
/// Learned models weight next states; the `t = 0` marginal is then
/// `(1 - γ) μ0 + γ w`, and actions are appended from `π_z`.
pub fn implicit_measure<M: FbModel + ?Sized>(
    model: &M,
    z: &[f64],
    mode: PolicyMode,
    mdp: &Mdp,
) -> Result<MeasureEstimate> {
    contract(
        model.n_states() == mdp.n_states() && model.n_actions() == mdp.n_actions(),
        || "model and MDP disagree on sizes".into(),
    )?;
    let na = mdp.n_actions();
    let (f, out) = model.expected_forward(z, mode, mdp.initial_dist())?;
    match model.backward_weights(&f)? {
        ImplicitWeights::Pairs(mut w) => {
            let clamped = clamp_normalize(&mut w)?;
            let m = Marginals::from_state_action(w, na);
            Ok(MeasureEstimate {
                clamped,
                ..MeasureEstimate::from_marginals(MeasureKind::Implicit, m, na)
            })
        }
        ImplicitWeights::NextStates(mut w) => {
            let clamped = clamp_normalize(&mut w)?;
            let gamma = model.discount();
            let state: Vec<f64> = mdp
                .initial_dist()
                .iter()
                .zip(&w)
                .map(|(&m0, &q)| (1.0 - gamma) * m0 + gamma * q)
                .collect();
            let sa = (0..mdp.n_pairs())
                .map(|i| state[i / na] * out.policy.prob(i / na, i % na))
                .collect();
            Ok(MeasureEstimate {
                kind: MeasureKind::Implicit,
                n_actions: na,
                state_marginal: state,
                sa_marginal: sa,
                clamped,
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExplicitConfig {
    /// Sup-norm change between sweeps at which fitting stops.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for ExplicitConfig {
    fn default() -> Self {
        Self {
            tol: 1e-13,
            max_sweeps: 100_000,
        }
    }
}

/// Tabular categorical successor measure fitted by temporal differences.
///
/// Regressing `m(·|s, a)` onto the target `(1 - γ) δ_{(s,a)} + γ m̄(·|s', a')`
/// over the dataset transitions from `(s, a)` has the empirical mean of the
/// targets as its exact minimiser, so each sweep is one regression step with
/// the previous sweep as the target copy. Pairs absent from the data are
/// treated as self-loops.
#[derive(Clone, Debug, PartialEq)]
pub struct ExplicitMeasureModel {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    /// Empirical next-state distribution of each pair, sparse.
    next: Vec<Vec<(usize, f64)>>,
    unseen: usize,
    cfg: ExplicitConfig,
}

impl ExplicitMeasureModel {
    pub fn fit(dataset: &TransitionDataset, gamma: f64, cfg: ExplicitConfig) -> Result<Self> {
        contract(gamma > 0.0 && gamma < 1.0, || format!("discount {gamma} outside (0, 1)"))?;
        contract(!dataset.is_empty(), || "empty dataset".into())?;
        let (ns, na) = (dataset.n_states, dataset.n_actions);
        let mut counts: Vec<Vec<(usize, usize)>> = vec![Vec::new(); ns * na];
        for t in &dataset.transitions {
            let row = &mut counts[t.s * na + t.a];
            match row.iter_mut().find(|(s, _)| *s == t.s_next) {
                Some((_, c)) => *c += 1,
                None => row.push((t.s_next, 1)),
            }
        }
        let mut unseen = 0;
        let next = counts
            .into_iter()
            .enumerate()
            .map(|(pair, mut row)| {
                if row.is_empty() {
                    unseen += 1;
                    return vec![(pair / na, 1.0)];
                }
                row.sort_unstable();
                let total: usize = row.iter().map(|(_, c)| c).sum();
                row.into_iter()
                    .map(|(s, c)| (s, c as f64 / total as f64))
                    .collect()
            })
            .collect();
        Ok(Self {
            n_states: ns,
            n_actions: na,
            gamma,
            next,
            unseen,
            cfg,
        })
    }

    /// Pairs that never occur in the dataset.
    pub fn unseen_pairs(&self) -> usize {
        self.unseen
    }

    /// Measure over pairs starting from the pair distribution `start`.
    pub fn measure_from(&self, start: &[f64], policy: &Policy) -> Result<Vec<f64>> {
        let n = self.n_states * self.n_actions;
        if start.len() != n || policy.n_states() != self.n_states {
            return Err(Error::Dimension("start distribution or policy has the wrong size".into()));
        }
        let na = self.n_actions;
        let g = self.gamma;
        let mut m = start.to_vec();
        let mut state_mass = vec![0.0; self.n_states];
        for _ in 0..self.cfg.max_sweeps {
            state_mass.fill(0.0);
            for (pair, &w) in m.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for &(s2, p) in &self.next[pair] {
                    state_mass[s2] += w * p;
                }
            }
            let mut change: f64 = 0.0;
            for (i, x) in m.iter_mut().enumerate() {
                let updated =
                    (1.0 - g) * start[i] + g * state_mass[i / na] * policy.prob(i / na, i % na);
                change = change.max((updated - *x).abs());
                *x = updated;
            }
            if change <= self.cfg.tol {
                return Ok(m);
            }
        }
        Err(Error::NonConvergence {
            what: "explicit measure sweeps",
            iterations: self.cfg.max_sweeps,
            residual: f64::NAN,
        })
    }

    /// `m(·|s, a)` over pairs.
    pub fn row(&self, s: usize, a: usize, policy: &Policy) -> Result<Vec<f64>> {
        let mut start = vec![0.0; self.n_states * self.n_actions];
        start[s * self.n_actions + a] = 1.0;
        self.measure_from(&start, policy)
    }

    pub fn estimate(&self, policy: &Policy, mu0: &[f64]) -> Result<MeasureEstimate> {
        let na = self.n_actions;
        let start: Vec<f64> = (0..self.n_states * na)
            .map(|i| mu0[i / na] * policy.prob(i / na, i % na))
            .collect();
        let mut sa = self.measure_from(&start, policy)?;
        clamp_normalize(&mut sa)?;
        Ok(MeasureEstimate::from_marginals(
            MeasureKind::Explicit,
            Marginals::from_state_action(sa, na),
            na,
        ))
    }

    /// Estimate for `π_z` of `model`.
    pub fn estimate_for<M: FbModel + ?Sized>(
        &self,
        model: &M,
        z: &[f64],
        mode: PolicyMode,
        mu0: &[f64],
    ) -> Result<MeasureEstimate> {
        let out = model.policy(z, mode)?;
        self.estimate(&out.policy, mu0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_counterexample, make_grid_env};
    use crate::linalg::l1_distance;

    #[test]
    fn collection_is_seeded_and_starts_from_mu0() {
        let mdp = make_grid_env(3, 0.5).unwrap();
        let pi = Policy::uniform(9, 9);
        let one = collect_dataset(&mdp, &pi, 1, 2, 4, "grid3").unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.transitions[0].s, 4);
        let a = collect_dataset(&mdp, &pi, 500, 2, 4, "grid3").unwrap();
        let b = collect_dataset(&mdp, &pi, 500, 2, 4, "grid3").unwrap();
        assert_eq!(a, b);
        assert!((a.rho.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let mdp = make_grid_env(3, 0.5).unwrap();
        let ds = collect_dataset(&mdp, &Policy::uniform(9, 9), 50, 3, 1, "grid3").unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# env=grid3 seed=1 n_steps=50"));
        assert!(text.lines().nth(1) == Some("s,a,s_next"));
        let back = TransitionDataset::read_csv(&buf[..]).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn out_of_bounds_transitions_are_rejected() {
        let t = Transition { s: 0, a: 3, s_next: 0 };
        assert!(TransitionDataset::new("x", 0, 2, 2, vec![t]).is_err());
    }

    #[test]
    fn sampling_frequencies() {
        let est = MeasureEstimate {
            kind: MeasureKind::Exact,
            n_actions: 2,
            state_marginal: vec![1.0],
            sa_marginal: vec![0.5, 0.5],
            clamped: 0,
        };
        let n = 4096;
        let draws = est.sample(n, 9, None).unwrap();
        let a0 = draws.iter().filter(|d| d.a == 0).count() as f64;
        let sd = (0.25 / n as f64).sqrt();
        assert!((a0 / n as f64 - 0.5).abs() <= 3.0 * sd);
        assert_eq!(est.sample(1, 0, None).unwrap().len(), 1);
        assert_eq!(est.sample(10, 3, None).unwrap(), est.sample(10, 3, None).unwrap());
    }

    #[test]
    fn lifted_samples_stay_in_their_cell() {
        let layout = GridLayout { side: 9 };
        let mut sa = vec![0.0; 81 * 2];
        sa[2 * 30] = 1.0;
        let est = MeasureEstimate {
            kind: MeasureKind::Exact,
            n_actions: 2,
            state_marginal: vec![0.0; 81],
            sa_marginal: sa,
            clamped: 0,
        };
        for d in est.sample(200, 1, Some(&layout)).unwrap() {
            assert_eq!(layout.cell_at(d.point.unwrap()), 30);
        }
    }

    #[test]
    fn explicit_matches_exact_on_a_deterministic_env() {
        let mdp = make_grid_env(5, 0.5).unwrap();
        let behavior = Policy::uniform(25, 25);
        let ds = collect_dataset(&mdp, &behavior, 3000, 2, 0, "grid5").unwrap();
        let model = ExplicitMeasureModel::fit(&ds, 0.5, ExplicitConfig::default()).unwrap();
        let probs: Vec<f64> = (0..25 * 25).map(|i| ((i * 7) % 11) as f64 + 1.0).collect();
        let rows: Vec<Vec<f64>> = probs
            .chunks(25)
            .map(|c| {
                let t: f64 = c.iter().sum();
                c.iter().map(|x| x / t).collect()
            })
            .collect();
        let pi = Policy::from_rows(&rows).unwrap();
        let est = model.estimate(&pi, mdp.initial_dist()).unwrap();
        let exact = exact_measure(&mdp, &pi).unwrap();
        assert!(l1_distance(&est.sa_marginal, &exact.sa_marginal) < 1e-10);
    }

    #[test]
    fn explicit_counterexample_rows() {
        let mdp = make_counterexample(0.5).unwrap();
        let ds = collect_dataset(&mdp, &Policy::uniform(1, 2), 100, 5, 0, "counterexample")
            .unwrap();
        let model = ExplicitMeasureModel::fit(&ds, 0.5, ExplicitConfig::default()).unwrap();
        let always_a0 = Policy::deterministic(2, &[0]).unwrap();
        let row = model.row(0, 1, &always_a0).unwrap();
        assert!((row[0] - 0.5).abs() < 1e-12 && (row[1] - 0.5).abs() < 1e-12);
    }
}
