//! Built-in environments: the single-state counterexample, the discretised
//! bandit-like grid, and seeded random MDPs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::error::{contract, Error, Result};
use crate::mdp::TabularMdp;
use crate::scalar::Scalar;
use crate::Mdp;

pub const DEFAULT_GRID_SIDE: usize = 9;
pub const DEFAULT_GAMMA: f64 = 0.5;

/// Square grid of cells covering `[-1, 1]²`, indexed row-major from the
/// bottom-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridLayout {
    pub side: usize,
}

impl GridLayout {
    pub fn n_cells(&self) -> usize {
        self.side * self.side
    }

    pub fn cell_width(&self) -> f64 {
        2.0 / self.side as f64
    }

    pub fn half_width(&self) -> f64 {
        1.0 / self.side as f64
    }

    pub fn center_cell(&self) -> usize {
        self.n_cells() / 2
    }

    pub fn center(&self, cell: usize) -> [f64; 2] {
        let w = self.cell_width();
        let (row, col) = (cell / self.side, cell % self.side);
        [-1.0 + (col as f64 + 0.5) * w, -1.0 + (row as f64 + 0.5) * w]
    }

    /// Cell whose square contains `p`, with points outside clamped to the border.
    pub fn cell_at(&self, p: [f64; 2]) -> usize {
        let idx = |v: f64| {
            let k = ((v + 1.0) / self.cell_width()).floor();
            (k.max(0.0) as usize).min(self.side - 1)
        };
        idx(p[1]) * self.side + idx(p[0])
    }

    /// Lebesgue area of one cell, used to move between discrete and
    /// differential entropies.
    pub fn cell_area(&self) -> f64 {
        self.cell_width() * self.cell_width()
    }
}

#[derive(Clone, Debug)]
pub struct Environment {
    pub name: String,
    pub mdp: Mdp,
    pub layout: Option<GridLayout>,
}

impl Environment {
    pub fn coords(&self, s: usize) -> Option<[f64; 2]> {
        self.layout.map(|l| l.center(s))
    }
}

/// Discretised didactic environment: from the centre cell, action `a` moves
/// to cell `a`; every other cell is absorbing.
pub fn make_grid_env<T: Scalar>(side: usize, gamma: T) -> Result<TabularMdp<T>> {
    contract(side >= 3 && side % 2 == 1, || {
        format!("grid side must be odd and at least 3, got {side}")
    })?;
    let n = side * side;
    let center = n / 2;
    let mut p = vec![T::zero(); n * n * n];
    for s in 0..n {
        for a in 0..n {
            let next = if s == center { a } else { s };
            p[(s * n + a) * n + next] = T::one();
        }
    }
    let mut mu0 = vec![T::zero(); n];
    mu0[center] = T::one();
    TabularMdp::new(n, n, p, mu0, gamma)
}

/// One state, two actions, both self-looping.
pub fn make_counterexample<T: Scalar>(gamma: T) -> Result<TabularMdp<T>> {
    TabularMdp::new(1, 2, vec![T::one(), T::one()], vec![T::one()], gamma)
}

/// Random MDP with Dirichlet(1) transition rows and initial distribution.
pub fn make_random_mdp<T: Scalar>(
    n_states: usize,
    n_actions: usize,
    gamma: T,
    seed: u64,
) -> Result<TabularMdp<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dirichlet = |n: usize| -> Vec<T> {
        let raw: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1) + 1e-12).collect();
        let total: f64 = raw.iter().sum();
        let mut row: Vec<T> = raw.iter().map(|x| T::lit(x / total)).collect();
        // push the rounding residue onto the largest entry
        let drift = T::one() - row.iter().copied().sum::<T>();
        let big = crate::scalar::argmax(&row);
        row[big] = row[big] + drift;
        row
    };
    let mut p = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        p.extend(dirichlet(n_states));
    }
    let mu0 = dirichlet(n_states);
    TabularMdp::new(n_states, n_actions, p, mu0, gamma)
}

pub fn grid_env(side: usize, gamma: f64) -> Result<Environment> {
    Ok(Environment {
        name: format!("grid{side}"),
        mdp: make_grid_env(side, gamma)?,
        layout: Some(GridLayout { side }),
    })
}

pub fn counterexample(gamma: f64) -> Result<Environment> {
    Ok(Environment {
        name: "counterexample".into(),
        mdp: make_counterexample(gamma)?,
        layout: None,
    })
}

/// Sizes and discount for `random:<seed>` are drawn from the seed itself.
pub fn random_env(seed: u64) -> Result<Environment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_1a7e);
    let n_states = rng.gen_range(2..=6);
    let n_actions = rng.gen_range(2..=4);
    Ok(Environment {
        name: format!("random:{seed}"),
        mdp: make_random_mdp(n_states, n_actions, 0.9, seed)?,
        layout: None,
    })
}

/// Resolve `counterexample`, `grid<side>` or `random:<seed>`.
pub fn by_name(name: &str) -> Result<Environment> {
    if name == "counterexample" {
        return counterexample(DEFAULT_GAMMA);
    }
    if let Some(seed) = name.strip_prefix("random:") {
        let seed = seed
            .parse()
            .map_err(|_| Error::Contract(format!("bad seed in environment name {name:?}")))?;
        return random_env(seed);
    }
    if let Some(side) = name.strip_prefix("grid") {
        let side = side
            .parse()
            .map_err(|_| Error::Contract(format!("bad side in environment name {name:?}")))?;
        return grid_env(side, DEFAULT_GAMMA);
    }
    Err(Error::Contract(format!("unknown environment {name:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{marginals, StochasticPolicy};

    #[test]
    fn grid_construction() {
        let mdp = make_grid_env::<f64>(3, 0.5).unwrap();
        assert_eq!((mdp.n_states(), mdp.n_actions()), (9, 9));
        assert_eq!(mdp.initial_dist()[4], 1.0);
        assert_eq!(mdp.next_dist(4, 0)[0], 1.0);
        for a in 0..9 {
            assert_eq!(mdp.next_dist(0, a)[0], 1.0);
        }
        assert!(make_grid_env::<f64>(4, 0.5).is_err());
        assert!(make_grid_env::<f64>(1, 0.5).is_err());
    }

    #[test]
    fn layout_is_a_bijection() {
        let l = GridLayout { side: 9 };
        for c in 0..l.n_cells() {
            assert_eq!(l.cell_at(l.center(c)), c);
        }
        assert_eq!(l.center(l.center_cell()), [0.0, 0.0]);
    }

    #[test]
    fn goal_policy_marginal_mass() {
        let mdp = make_grid_env::<f64>(5, 0.5).unwrap();
        let center = 12;
        for g in [0, 7, center, 24] {
            let actions: Vec<usize> = (0..25).map(|s| if s == center { g } else { 0 }).collect();
            let pi = StochasticPolicy::deterministic(25, &actions).unwrap();
            let m = marginals(&mdp, &pi).unwrap();
            let expected = 0.5 + 0.5 * f64::from(u8::from(g == center));
            assert!((m.state[g] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn random_mdps_are_valid_and_seeded() {
        for seed in 0..1000 {
            let m = make_random_mdp::<f64>(1 + (seed as usize % 8), 2 + seed as usize % 3, 0.9, seed);
            assert!(m.is_ok(), "seed {seed}");
        }
        let a = make_random_mdp::<f64>(4, 3, 0.9, 7).unwrap();
        let b = make_random_mdp::<f64>(4, 3, 0.9, 7).unwrap();
        assert_eq!(a, b);
        for s in 0..4 {
            for act in 0..3 {
                let total: f64 = a.next_dist(s, act).iter().sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn names_resolve() {
        assert_eq!(by_name("grid9").unwrap().mdp.n_states(), 81);
        assert_eq!(by_name("counterexample").unwrap().mdp.n_actions(), 2);
        let r = by_name("random:3").unwrap();
        assert_eq!(r.mdp, by_name("random:3").unwrap().mdp);
        assert!(by_name("maze").is_err());
        assert!(by_name("random:x").is_err());
    }
}
