//! Sample-based utilities against exact ones on grid-env measures.

use softfb::envs::{grid_env, Environment};
use softfb::measures::{exact_measure, MeasureEstimate};
use softfb::utilities::{line_cells, preset};
use softfb::Policy;
use rand::{Rng, SeedableRng};

const DRAWS: usize = 4096;
const TOL: f64 = 0.15;

/// Uniform over all cells, a random stochastic policy and a policy that only
/// jumps to the line cells.
fn grid_measures(env: &Environment) -> Vec<(&'static str, MeasureEstimate)> {
    let mdp = &env.mdp;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let layout = env.layout.unwrap();
    let uniform = Policy::uniform(ns, na);

    let center = layout.center_cell();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let mut soft = uniform.probs().to_vec();
    let row = &mut soft[center * na..(center + 1) * na];
    row.iter_mut().for_each(|p| *p = rng.gen::<f64>().powi(3));
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= total);
    let soft = Policy::new(ns, na, soft).unwrap();

    let line = line_cells(&layout);
    let weights = [0.1, 0.15, 0.2, 0.25, 0.3];
    let mut probs = uniform.probs().to_vec();
    let row = &mut probs[center * na..(center + 1) * na];
    row.iter_mut().for_each(|p| *p = 0.0);
    for (&c, &w) in line.iter().zip(&weights) {
        row[c] = w;
    }
    let on_line = Policy::new(ns, na, probs).unwrap();

    vec![
        ("uniform", exact_measure(mdp, &uniform).unwrap()),
        ("random", exact_measure(mdp, &soft).unwrap()),
        ("line", exact_measure(mdp, &on_line).unwrap()),
    ]
}

#[test]
fn sample_estimates_track_exact_values() {
    let env = grid_env(9, 0.5).unwrap();
    let layout = env.layout.unwrap();
    let measures = grid_measures(&env);
    let mut cases = Vec::new();
    for name in ["linear", "goal", "entropy", "robust", "constrained"] {
        for m in &measures {
            cases.push((name, m));
        }
    }
    // KNN divergence only where the measure lies inside the expert's support
    cases.push(("stoch_il", &measures[2]));
    for (name, (mname, m)) in cases {
        let obj = preset(name, &env).unwrap();
        let exact = obj.exact_eval(&m.marginals()).unwrap();
        let mean_err = (0..10)
            .map(|seed| {
                let draws = m.sample(DRAWS, seed, Some(&layout)).unwrap();
                (obj.sample_eval(&draws).unwrap() - exact).abs()
            })
            .sum::<f64>()
            / 10.0;
        assert!(mean_err <= TOL, "{name} on {mname}: mean error {mean_err} (exact {exact})");
    }
}

#[test]
fn linear_mean_within_three_sigma() {
    let env = grid_env(9, 0.5).unwrap();
    let layout = env.layout.unwrap();
    let obj = preset("linear", &env).unwrap();
    for (_, m) in grid_measures(&env) {
        let r = match &obj.utility {
            softfb::utilities::Utility::Linear { reward } => reward.clone(),
            _ => unreachable!(),
        };
        let exact = obj.exact_eval(&m.marginals()).unwrap();
        let var: f64 = m
            .state_marginal
            .iter()
            .zip(&r)
            .map(|(p, x)| p * (x - exact).powi(2))
            .sum();
        let draws = m.sample(DRAWS, 11, Some(&layout)).unwrap();
        let est = obj.sample_eval(&draws).unwrap();
        assert!((est - exact).abs() <= 3.0 * (var / DRAWS as f64).sqrt());
    }
}

#[test]
fn estimates_improve_with_more_draws() {
    let env = grid_env(9, 0.5).unwrap();
    let layout = env.layout.unwrap();
    let obj = preset("entropy", &env).unwrap();
    let m = &grid_measures(&env)[0].1;
    let exact = obj.exact_eval(&m.marginals()).unwrap();
    let err = |n: usize| {
        (0..10)
            .map(|s| (obj.sample_eval(&m.sample(n, 100 + s, Some(&layout)).unwrap()).unwrap() - exact).abs())
            .sum::<f64>()
            / 10.0
    };
    assert!(err(8192) < err(128));
}
