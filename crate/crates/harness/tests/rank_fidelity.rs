//! Offline scores from the explicit measure model rank candidates closer to
//! their true order than implicit ones, averaged over seeds.
//!
//! Runs on a 5x5 grid so five trainings fit in a test run; the 9x9 model is
//! covered by the acceptance suite.

use softfb::envs::grid_env;
use softfb::inference::{attach_ground_truth, zero_order_search, SearchConfig, SearchContext};
use softfb::measures::{collect_dataset, ExplicitConfig, ExplicitMeasureModel, MeasureKind};
use softfb::softfb::learned::{ModelSpec, TrainConfig};
use softfb::utilities::preset;
use softfb::Policy;
use softfb_harness::experiment::train_learned;
use softfb_harness::stats::spearman;

#[test]
fn explicit_ranks_better_than_implicit_on_entropy() {
    let env = grid_env(5, 0.5).unwrap();
    let (ns, na) = (env.mdp.n_states(), env.mdp.n_actions());
    let obj = preset("entropy", &env).unwrap();
    let mut rho = [0.0; 2];
    for seed in 0..5u64 {
        let data = collect_dataset(&env.mdp, &Policy::uniform(ns, na), 20_000, 2, seed, &env.name).unwrap();
        let cfg = TrainConfig {
            steps: 20_000,
            ..TrainConfig::default()
        };
        let model = train_learned(&env, &data, &ModelSpec::default(), &cfg, seed).unwrap();
        let explicit = ExplicitMeasureModel::fit(&data, 0.5, ExplicitConfig::default()).unwrap();
        let ctx = SearchContext {
            mdp: &env.mdp,
            explicit: Some(&explicit),
        };
        let search = SearchConfig {
            n_candidates: 64,
            seed,
            ..SearchConfig::default()
        };
        for (i, kind) in [MeasureKind::Explicit, MeasureKind::Implicit].into_iter().enumerate() {
            let mut res = zero_order_search(&model, &obj, kind, &ctx, &search).unwrap();
            attach_ground_truth(&mut res, &env.mdp, &model, search.sampler.mode(), &obj).unwrap();
            let (xs, ys): (Vec<f64>, Vec<f64>) = res
                .candidates
                .iter()
                .map(|c| (c.offline_score, c.ground_truth.unwrap()))
                .unzip();
            rho[i] += spearman(&xs, &ys).unwrap().rho / 5.0;
        }
    }
    println!("mean spearman: explicit {:.3}, implicit {:.3}", rho[0], rho[1]);
    assert!(rho[0] > rho[1]);
}
