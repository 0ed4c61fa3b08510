//! The single-state, two-action demonstration: greedy FB policies are
//! deterministic and never reach the maximum-entropy occupancy, soft ones do
//! at `z = 0`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use softfb::envs::counterexample;
use softfb::linalg::Matrix;
use softfb::softfb::embedding::sample_sphere;
use softfb::softfb::exact::ExactFbModel;
use softfb::softfb::PolicyMode;
use softfb::utilities::preset;

use crate::{HarnessError, Result};

pub const MATRIX_TOL: f64 = 1e-12;
pub const LOG2_TOL: f64 = 1e-9;
/// Random sphere directions checked in hard mode, on top of the axes and the tie.
pub const HARD_DIRECTIONS: usize = 1000;

#[derive(Clone, Debug)]
pub struct CounterexampleReport {
    pub gamma: f64,
    /// Computed successor-measure matrices for `z0 > z1` and `z0 <= z1`.
    pub computed: [Matrix<f64>; 2],
    /// The closed form with `C = (1 - γ) γ`.
    pub stated: [Matrix<f64>; 2],
    pub matrix_error: f64,
    /// Largest state-action entropy over all hard-mode embeddings tried.
    pub hard_entropy_max: f64,
    pub hard_directions: usize,
    pub soft_entropy_at_zero: f64,
}

impl CounterexampleReport {
    pub fn matrices_match(&self) -> bool {
        self.matrix_error <= MATRIX_TOL
    }

    pub fn hard_is_zero(&self) -> bool {
        self.hard_entropy_max == 0.0
    }

    pub fn soft_is_log2(&self) -> bool {
        (self.soft_entropy_at_zero - std::f64::consts::LN_2).abs() <= LOG2_TOL
    }

    pub fn passed(&self) -> bool {
        self.matrices_match() && self.hard_is_zero() && self.soft_is_log2()
    }

    /// `quantity, entry, computed, stated, abs_error`.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["quantity", "entry", "computed", "stated", "abs_error"])?;
        for (k, name) in ["m_z0_gt_z1", "m_z0_le_z1"].iter().enumerate() {
            for i in 0..2 {
                for j in 0..2 {
                    let (c, s) = (self.computed[k][(i, j)], self.stated[k][(i, j)]);
                    w.write_record([
                        name.to_string(),
                        format!("{i}{j}"),
                        c.to_string(),
                        s.to_string(),
                        (c - s).abs().to_string(),
                    ])?;
                }
            }
        }
        let ln2 = std::f64::consts::LN_2;
        w.write_record([
            "hard_entropy_max".into(),
            self.hard_directions.to_string(),
            self.hard_entropy_max.to_string(),
            "0".into(),
            self.hard_entropy_max.abs().to_string(),
        ])?;
        w.write_record([
            "soft_entropy_z0".into(),
            String::new(),
            self.soft_entropy_at_zero.to_string(),
            ln2.to_string(),
            (self.soft_entropy_at_zero - ln2).abs().to_string(),
        ])?;
        w.into_inner().map_err(|e| HarnessError::runtime(e.error()))
    }
}

fn stated_matrices(gamma: f64) -> [Matrix<f64>; 2] {
    let c = (1.0 - gamma) * gamma;
    [
        Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0 - c, c]]).expect("2x2"),
        Matrix::from_rows(&[vec![c, 1.0 - c], vec![0.0, 1.0]]).expect("2x2"),
    ]
}

pub fn run(seed: u64) -> Result<CounterexampleReport> {
    let env = counterexample(softfb::envs::DEFAULT_GAMMA).map_err(HarnessError::runtime)?;
    let gamma = env.mdp.discount();
    let entropy = preset("entropy", &env).map_err(HarnessError::runtime)?;
    let model = ExactFbModel::identity(env.mdp.clone()).map_err(HarnessError::runtime)?;
    let slice = |z: &[f64], mode| model.fixed_point(z, mode).map_err(HarnessError::runtime);

    let computed = [
        slice(&[1.0, 0.0], PolicyMode::Hard)?.measure.sa_matrix,
        slice(&[0.0, 1.0], PolicyMode::Hard)?.measure.sa_matrix,
    ];
    let stated = stated_matrices(gamma);
    let matrix_error = computed
        .iter()
        .zip(&stated)
        .map(|(a, b)| a.max_abs_diff(b))
        .fold(0.0, f64::max);

    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut dirs = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![s, s], vec![-s, -s]];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dirs.extend((0..HARD_DIRECTIONS).map(|_| sample_sphere(&mut rng, 2)));
    let mut hard_entropy_max = f64::NEG_INFINITY;
    for z in &dirs {
        let m = slice(z, PolicyMode::Hard)?.measure.marginals();
        hard_entropy_max = hard_entropy_max.max(entropy.exact_eval(&m).map_err(HarnessError::runtime)?);
    }
    let soft = slice(&[0.0, 0.0], PolicyMode::Soft)?.measure.marginals();
    let soft_entropy_at_zero = entropy.exact_eval(&soft).map_err(HarnessError::runtime)?;
    Ok(CounterexampleReport {
        gamma,
        computed,
        stated,
        matrix_error,
        hard_entropy_max,
        hard_directions: dirs.len(),
        soft_entropy_at_zero,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_parts_hold() {
        let r = run(0).unwrap();
        assert!(r.hard_is_zero());
        assert!(r.soft_is_log2(), "{}", r.soft_entropy_at_zero);
    }

    #[test]
    fn computed_matrices_follow_the_normalised_measure() {
        // Oracle: truncated series (1 - γ) Σ γ^t P^t with the deterministic
        // pair chain of always-a0.
        let r = run(0).unwrap();
        let g = r.gamma;
        let mut acc = [[0.0; 2]; 2];
        let mut pow = [[1.0, 0.0], [0.0, 1.0]];
        let p = [[1.0, 0.0], [1.0, 0.0]];
        for t in 0..200 {
            for i in 0..2 {
                for j in 0..2 {
                    acc[i][j] += (1.0 - g) * g.powi(t) * pow[i][j];
                }
            }
            let mut next = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    next[i][j] = (0..2).map(|k| pow[i][k] * p[k][j]).sum();
                }
            }
            pow = next;
        }
        for i in 0..2 {
            for j in 0..2 {
                assert!((r.computed[0][(i, j)] - acc[i][j]).abs() < 1e-12);
            }
        }
    }
}
