use proptest::prelude::*;
use softfb::envs::{make_random_mdp, Environment};
use softfb::mdp::{soft_value_iteration, RewardVector, SolverOptions};
use softfb::utilities::{brute_force_optimum, kl_divergence, preset};
use softfb::Policy;

fn distribution(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn log_policy_reward_reproduces_the_policy(
        seed in 0u64..10_000,
        ns in 1usize..5,
        na in 2usize..4,
        raw in prop::collection::vec(0.05f64..1.0, 16),
    ) {
        let mdp = make_random_mdp(ns, na, 0.9, seed).unwrap();
        let rows: Vec<Vec<f64>> = (0..ns).map(|s| distribution(&raw[s * na..(s + 1) * na])).collect();
        let pi = Policy::from_rows(&rows).unwrap();
        let r = RewardVector::state_action(pi.probs().iter().map(|p| p.ln()).collect());
        let out = soft_value_iteration(&mdp, &r, &SolverOptions::default()).unwrap();
        prop_assert!(out.policy.max_tv(&pi) <= 1e-6);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_only_on_equality(
        p in prop::collection::vec(0.01f64..1.0, 6),
        q in prop::collection::vec(0.01f64..1.0, 6),
    ) {
        let (p, q) = (distribution(&p), distribution(&q));
        let d = kl_divergence(&p, &q);
        prop_assert!(d >= 0.0);
        prop_assert!(kl_divergence(&p, &p).abs() <= 1e-12);
        let l1: f64 = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum();
        if l1 > 1e-9 {
            prop_assert!(d > 0.0);
        }
    }
}

#[test]
fn random_mdps_are_valid_for_many_seeds() {
    for seed in 0..1000 {
        let ns = 1 + (seed as usize % 6);
        let na = 1 + (seed as usize / 6 % 4);
        let mdp = make_random_mdp(ns, na, 0.9, seed).unwrap();
        for s in 0..ns {
            for a in 0..na {
                let row = mdp.next_dist(s, a);
                assert!(row.iter().all(|&p| p >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
        assert!((mdp.initial_dist().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn brute_force_is_monotone_in_resolution() {
    // resolutions 3, 5, 9 and 17 give nested policy grids
    let mdp = make_random_mdp(2, 2, 0.8, 3).unwrap();
    let env = Environment {
        name: "tiny".into(),
        mdp: mdp.clone(),
        layout: None,
    };
    let obj = preset("entropy", &env).unwrap();
    let mut last = f64::NEG_INFINITY;
    for res in [3, 5, 9, 17] {
        let v = brute_force_optimum(&obj, &mdp, res).unwrap().value;
        assert!(v >= last);
        last = v;
    }
}

#[test]
fn robust_min_of_one_hot_rewards_peaks_at_an_interior_policy() {
    use softfb::mdp::{marginals, Support};
    use softfb::utilities::{ScoreNormalizer, Utility, UtilityObjective};
    let env = softfb::envs::counterexample(0.5).unwrap();
    let obj = UtilityObjective {
        name: "robust".into(),
        utility: Utility::RobustMin {
            rewards: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        },
        support: Support::StateAction,
        n_states: 1,
        n_actions: 2,
        layout: None,
        normalizer: ScoreNormalizer::new(0.0, 0.5).unwrap(),
    };
    let score = |p: f64| {
        let pi = Policy::from_rows(&[vec![p, 1.0 - p]]).unwrap();
        obj.exact_eval(&marginals(&env.mdp, &pi).unwrap()).unwrap()
    };
    assert!((score(0.5) - 0.5).abs() < 1e-12);
    assert_eq!(score(1.0), 0.0);
    assert_eq!(score(0.0), 0.0);
    let brute = brute_force_optimum(&obj, &env.mdp, 101).unwrap();
    assert!((brute.value - 0.5).abs() < 1e-12);
}
