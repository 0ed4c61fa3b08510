use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softfb::envs::{counterexample, grid_env, make_random_mdp, random_env};
use softfb::inference::{
    attach_ground_truth, evaluate_ground_truth, infer_linear, infer_maxent, zero_order_search,
    Sampler, SearchConfig, SearchContext, SearchMethod,
};
use softfb::linalg::norm;
use softfb::mdp::{
    hard_value_iteration, linear_return, soft_value_iteration, RewardVector, SolverOptions, Support,
};
use softfb::measures::MeasureKind;
use softfb::softfb::embedding::unreparameterize;
use softfb::softfb::exact::ExactFbModel;
use softfb::softfb::{FbModel, PolicyMode};
use softfb::utilities::{brute_force_optimum, preset, ScoreNormalizer, Utility, UtilityObjective};
use softfb::{Mdp, Reward};

fn linear_objective(mdp: &Mdp, reward: Vec<f64>) -> UtilityObjective {
    UtilityObjective {
        name: "linear".into(),
        utility: Utility::Linear { reward },
        support: Support::StateAction,
        n_states: mdp.n_states(),
        n_actions: mdp.n_actions(),
        layout: None,
        normalizer: ScoreNormalizer::new(0.0, 1.0).unwrap(),
    }
}

#[test]
fn linear_embedding_examples() {
    let env = counterexample(0.5).unwrap();
    let model = ExactFbModel::identity(env.mdp.clone()).unwrap();
    let z = infer_linear(&model, &Reward::state_action(vec![1.0, 0.0])).unwrap();
    assert_eq!(z, vec![1.0, 0.0]);

    let r = Reward::state_action(vec![2.0, 1.0]);
    let z = infer_linear(&model, &r).unwrap();
    let pi = model.policy(&z, PolicyMode::Hard).unwrap().policy;
    let oracle = hard_value_iteration(&env.mdp, &r, &SolverOptions::default()).unwrap();
    assert_eq!(pi, oracle.policy);
    assert_eq!(pi.prob(0, 0), 1.0);

    let z5 = infer_linear(&model, &r.scaled(5.0)).unwrap();
    for (a, b) in z.iter().zip(&z5) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!(infer_linear(&model, &Reward::state_action(vec![0.0, 0.0])).is_err());
}

#[test]
fn maxent_norm_on_a_single_state() {
    // With one state every row of the successor measure sums to one, so the
    // statistic is c and the norm c / (c + 1).
    let env = counterexample(0.5).unwrap();
    let model = ExactFbModel::identity(env.mdp.clone()).unwrap();
    let mu0 = env.mdp.initial_dist();
    let z0 = infer_maxent(&model, &Reward::state_action(vec![0.0, 0.0]), mu0).unwrap();
    assert_eq!(z0, vec![0.0, 0.0]);
    let pi = model.policy(&z0, PolicyMode::Soft).unwrap().policy;
    assert!((pi.prob(0, 0) - 0.5).abs() < 1e-12);
    let mut last = 0.0;
    for c in [0.1, 1.0, 10.0] {
        let z = infer_maxent(&model, &Reward::state_action(vec![c, c]), mu0).unwrap();
        let n = norm(&z);
        assert!((n - c / (c + 1.0)).abs() < 1e-12, "c={c}: {n}");
        assert!(n > last && n < 1.0);
        last = n;
    }
}

#[test]
fn maxent_policy_matches_soft_oracle_on_random_mdps() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = make_random_mdp(3, 2, 0.8, seed).unwrap();
        let model = ExactFbModel::identity(mdp.clone()).unwrap();
        let r: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z = infer_maxent(&model, &Reward::state_action(r), mdp.initial_dist()).unwrap();
        assert!(norm(&z) < 1.0);
        // the induced instance: reward B⁺ unreparameterize(z) with B = I
        let induced = RewardVector::state_action(unreparameterize(&z));
        let oracle = soft_value_iteration(&mdp, &induced, &SolverOptions::default()).unwrap();
        let pi = model.policy(&z, PolicyMode::Soft).unwrap().policy;
        assert!(pi.max_tv(&oracle.policy) <= 1e-5);
    }
}

fn search(n: usize, sampler: Sampler, method: SearchMethod, seed: u64) -> SearchConfig {
    SearchConfig {
        n_candidates: n,
        sampler,
        method,
        seed,
        ..SearchConfig::default()
    }
}

#[test]
fn ball_candidates_reach_log2_sphere_ones_stay_at_zero() {
    let env = counterexample(0.5).unwrap();
    let model = ExactFbModel::identity(env.mdp.clone()).unwrap();
    let obj = preset("entropy", &env).unwrap();
    let ctx = SearchContext {
        mdp: &env.mdp,
        explicit: None,
    };
    let ball = zero_order_search(
        &model,
        &obj,
        MeasureKind::Exact,
        &ctx,
        &search(1024, Sampler::BallUniform, SearchMethod::Shooting, 1),
    )
    .unwrap();
    let best = evaluate_ground_truth(&env.mdp, &model, &ball.z_best, PolicyMode::Soft, &obj).unwrap();
    assert!((best - std::f64::consts::LN_2).abs() <= 0.01);
    let mut sphere = zero_order_search(
        &model,
        &obj,
        MeasureKind::Exact,
        &ctx,
        &search(1024, Sampler::SphereUniform, SearchMethod::Shooting, 1),
    )
    .unwrap();
    attach_ground_truth(&mut sphere, &env.mdp, &model, PolicyMode::Hard, &obj).unwrap();
    assert!(sphere.candidates.iter().all(|c| c.ground_truth == Some(0.0)));
    assert!(best > 0.0);
}

#[test]
fn one_shooting_candidate_is_returned() {
    let env = counterexample(0.5).unwrap();
    let model = ExactFbModel::identity(env.mdp.clone()).unwrap();
    let obj = preset("entropy", &env).unwrap();
    let ctx = SearchContext {
        mdp: &env.mdp,
        explicit: None,
    };
    let res = zero_order_search(
        &model,
        &obj,
        MeasureKind::Exact,
        &ctx,
        &search(1, Sampler::BallUniform, SearchMethod::Shooting, 3),
    )
    .unwrap();
    assert_eq!(res.candidates.len(), 1);
    assert_eq!(res.z_best, res.candidates[0].z);
    assert_eq!(res.best_index, 0);
}

#[test]
fn cem_keeps_up_with_shooting_on_the_grid_goal() {
    let env = grid_env(3, 0.5).unwrap();
    let model = ExactFbModel::identity(env.mdp.clone()).unwrap();
    let obj = preset("goal", &env).unwrap();
    let ctx = SearchContext {
        mdp: &env.mdp,
        explicit: None,
    };
    for seed in 0..3 {
        let cem_cfg = search(0, Sampler::BallUniform, SearchMethod::Cem, seed);
        let budget = cem_cfg.budget();
        assert_eq!(budget, 1024);
        let cem = zero_order_search(&model, &obj, MeasureKind::Exact, &ctx, &cem_cfg).unwrap();
        let shoot = zero_order_search(
            &model,
            &obj,
            MeasureKind::Exact,
            &ctx,
            &search(budget, Sampler::BallUniform, SearchMethod::Shooting, seed),
        )
        .unwrap();
        assert_eq!(cem.candidates.len(), budget);
        assert!(
            cem.offline_score >= shoot.offline_score - 0.02,
            "seed {seed}: cem {} shooting {}",
            cem.offline_score,
            shoot.offline_score
        );
    }
}

#[test]
fn ground_truth_examples() {
    let env = counterexample(0.5).unwrap();
    let model = ExactFbModel::identity(env.mdp.clone()).unwrap();
    let r = vec![0.3, 0.7];
    let obj = linear_objective(&env.mdp, r.clone());
    let reward = Reward::state_action(r);
    let z = infer_linear(&model, &reward).unwrap();
    let gt = evaluate_ground_truth(&env.mdp, &model, &z, PolicyMode::Hard, &obj).unwrap();
    let oracle = hard_value_iteration(&env.mdp, &reward, &SolverOptions::default()).unwrap();
    let best = linear_return(&env.mdp, &oracle.policy, &reward).unwrap();
    assert!((gt - best).abs() <= 1e-6);

    let entropy = preset("entropy", &env).unwrap();
    let h = evaluate_ground_truth(&env.mdp, &model, &[0.0, 0.0], PolicyMode::Soft, &entropy).unwrap();
    assert!((h - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn ground_truth_never_beats_brute_force() {
    let env = random_env(7).unwrap();
    let mdp = make_random_mdp(2, 2, 0.9, 7).unwrap();
    let tiny = softfb::envs::Environment {
        name: "tiny".into(),
        mdp: mdp.clone(),
        layout: None,
    };
    assert!(env.mdp.n_states() >= 2);
    let obj = preset("entropy", &tiny).unwrap();
    let brute = brute_force_optimum(&obj, &mdp, 201).unwrap();
    let model = ExactFbModel::identity(mdp.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let z = softfb::softfb::embedding::sample_ball(&mut rng, model.dim());
        let gt = evaluate_ground_truth(&mdp, &model, &z, PolicyMode::Soft, &obj).unwrap();
        assert!(gt <= brute.score + 1e-3, "{gt} > {}", brute.score);
    }
}

#[test]
fn soft_dominates_hard_on_nonlinear_objectives() {
    let ce = counterexample(0.5).unwrap();
    let grid = grid_env(3, 0.5).unwrap();
    let cases = [(&ce, "entropy"), (&grid, "entropy"), (&grid, "stoch_il")];
    for (env, name) in cases {
        let model = ExactFbModel::identity(env.mdp.clone()).unwrap();
        let obj = preset(name, env).unwrap();
        let ctx = SearchContext {
            mdp: &env.mdp,
            explicit: None,
        };
        let best = |sampler: Sampler| {
            let mut res = zero_order_search(
                &model,
                &obj,
                MeasureKind::Exact,
                &ctx,
                &search(256, sampler, SearchMethod::Shooting, 5),
            )
            .unwrap();
            attach_ground_truth(&mut res, &env.mdp, &model, sampler.mode(), &obj).unwrap();
            res.candidates
                .iter()
                .map(|c| c.ground_truth.unwrap())
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let (soft, hard) = (best(Sampler::BallUniform), best(Sampler::SphereUniform));
        assert!(soft >= hard, "{} {name}: soft {soft} hard {hard}", env.name);
    }
}
