use std::path::PathBuf;

use mprio_core::sim::batch::{sample_thresholds, BenchmarkMode};
use mprio_core::sim::{
    benchmark_modes, run_batch, run_batch_with, run_replay, run_trial_with, settles, ReplayConfig, Role, SceneConfig,
    TrialOptions, TrialSequence,
};
use mprio_core::Priority;
use proptest::prelude::*;

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn with_still_manufacturing(base: &SceneConfig, shift: f64) -> SceneConfig {
    let mut file = base.file.clone();
    for r in &mut file.robots {
        if r.role == Role::Manufacturing {
            r.stiffness = [0.0; 3];
            r.base.translation[1] += shift;
        }
    }
    SceneConfig::from_file(file).unwrap()
}

#[test]
fn shipped_configs_match_the_builtin_scenes() {
    let default = SceneConfig::load(config_path("default.toml")).unwrap();
    assert_eq!(default.digest(), SceneConfig::default_scene().digest());
    let prelim = SceneConfig::load(config_path("preliminary.toml")).unwrap();
    assert_eq!(prelim.digest(), SceneConfig::preliminary_scene().digest());
    assert_eq!(default.n_manufacturing(), 3);
    assert_eq!(prelim.n_manufacturing(), 1);
}

#[test]
fn batches_are_reproducible() {
    let scene = SceneConfig::default_scene();
    let l = [0.1, 0.3, 0.45];
    let a = run_batch(&scene, &l, 8, 77).unwrap();
    let b = run_batch(&scene, &l, 8, 77).unwrap();
    assert_eq!(a, b);
    let c = run_batch(&scene, &l, 8, 78).unwrap();
    assert_ne!(a.x_risk, c.x_risk);
}

#[test]
fn still_manufacturing_robots_give_the_isolated_reach_time() {
    let scene = SceneConfig::preliminary_scene();
    let still = with_still_manufacturing(&scene, 0.0);
    let isolated = with_still_manufacturing(&scene, 10.0);
    let dt = scene.file.dt;
    let opts = TrialOptions::default();
    let mut compared = 0;
    for seed in 0..40 {
        let a = run_trial_with(&still, &[0.25], seed, &opts).unwrap();
        let b = run_trial_with(&isolated, &[0.25], seed, &opts).unwrap();
        assert_eq!(a.total_tasks(), 0);
        assert!(b.min_pair_distance.unwrap() > 5.0);
        // Without a pair inside the influence distance the problems decouple.
        if a.min_pair_distance.unwrap() >= scene.file.collision.d_i {
            assert!((a.risk_time - b.risk_time).abs() <= dt + 1e-12, "seed {seed}");
            compared += 1;
        } else {
            assert!(a.risk_time >= b.risk_time - dt);
        }
    }
    assert!(compared > 0);
}

#[test]
fn task_counts_match_target_switches_in_the_log() {
    let scene = SceneConfig::default_scene();
    let opts = TrialOptions {
        record: true,
        ..TrialOptions::default()
    };
    for seed in 0..5 {
        let t = run_trial_with(&scene, &[0.5, 0.2, 0.0], seed, &opts).unwrap();
        let log = t.trajectory_log.as_ref().unwrap();
        assert_eq!(log.time.len(), log.positions.len());
        for (k, &m) in scene.roles.manufacturing.iter().enumerate() {
            let switches = log.targets.windows(2).filter(|w| w[0][m] != w[1][m]).count() as u32;
            let events = log.task_events.iter().filter(|e| e.robot == m).count() as u32;
            assert_eq!(t.tasks_completed[k], events);
            assert_eq!(t.tasks_completed[k], switches, "seed {seed}, robot {m}");
        }
    }
}

#[test]
fn each_task_starts_where_the_previous_one_ended() {
    let scene = SceneConfig::default_scene();
    let opts = TrialOptions {
        record: true,
        ..TrialOptions::default()
    };
    let r = scene.roles.recovery;
    let mut seq = TrialSequence::new(&scene, &[0.2, 0.2, 0.2], 4, &opts).unwrap();
    let first = seq.next_trial().unwrap();
    let log = first.trajectory_log.as_ref().unwrap();
    assert!((log.positions[0][r] - scene.home_poses[r].position).norm() < 1e-12);
    let mut last_drop = first.drop_position;
    let mut last_positions = log.positions.last().unwrap().clone();
    for _ in 0..5 {
        let t = seq.next_trial().unwrap();
        let log = t.trajectory_log.as_ref().unwrap();
        assert!((log.positions[0][r] - last_drop).norm() <= scene.file.reach_tol);
        // Nothing moves between the arrival and the relocation.
        assert_eq!(log.positions[0], last_positions);
        assert_eq!(log.time.len(), t.ticks + 1);
        last_drop = t.drop_position;
        last_positions = log.positions.last().unwrap().clone();
    }
    let batch = run_batch_with(&scene, &[0.2, 0.2, 0.2], 6, 4, &TrialOptions::default()).unwrap();
    assert_eq!(batch.trials[0].drop_position, first.drop_position);
    assert_eq!(batch.trials[5].drop_position, last_drop);
}

#[test]
fn larger_thresholds_raise_both_means() {
    let scene = SceneConfig::preliminary_scene();
    let low = run_batch(&scene, &[0.0], 100, 5).unwrap();
    let high = run_batch(&scene, &[scene.l_max()], 100, 5).unwrap();
    assert!(low.x_risk <= high.x_risk, "{} vs {}", low.x_risk, high.x_risk);
    assert!(
        low.x_product <= high.x_product,
        "{} vs {}",
        low.x_product,
        high.x_product
    );
}

#[test]
fn risk_variance_is_stable_across_seeds() {
    let scene = SceneConfig::preliminary_scene();
    let a = run_batch(&scene, &[0.3], 100, 11).unwrap();
    let b = run_batch(&scene, &[0.3], 100, 12).unwrap();
    let ratio = (a.risk_sd / b.risk_sd).powi(2);
    assert!((0.5..=1.5).contains(&ratio), "variance ratio {ratio}");
}

#[test]
fn benchmark_modes_relate_to_the_threshold_rule() {
    let scene = SceneConfig::default_scene();
    let rows = benchmark_modes(&scene, 10, 3).unwrap();
    let by = |m: BenchmarkMode| &rows.iter().find(|r| r.mode == m).unwrap().outcome;
    let nc = by(BenchmarkMode::NonContinuous);
    assert!(nc.record.min_pair_distance.is_none());
    assert!(nc.trials.iter().all(|t| t.total_tasks() == 0));
    // p ≡ 1 is the threshold rule at l̄ = 0, trial for trial.
    let zeros = run_batch(&scene, &[0.0; 3], 10, 3).unwrap();
    assert_eq!(by(BenchmarkMode::AlwaysRecovery).record, zeros);
    let p0 = by(BenchmarkMode::AlwaysManufacturing);
    let sat = run_batch_with(&scene, &[scene.l_max(); 3], 10, 3, &TrialOptions::default()).unwrap();
    for (a, b) in p0.trials.iter().zip(&sat.trials) {
        assert_eq!(a.drop_position, b.drop_position);
    }
    assert!((p0.record.x_product - sat.record.x_product).abs() <= 0.5 * p0.record.product_sd.max(1.0));
}

#[test]
fn replay_flips_priority_and_settles() {
    let scene = SceneConfig::preliminary_scene();
    let rep = run_replay(&scene, &ReplayConfig::default()).unwrap();
    let order: Vec<Priority> = rep.episodes.iter().map(|e| e.priority).collect();
    assert_eq!(order, [Priority::Recovery, Priority::Manufacturing]);
    for e in &rep.episodes {
        assert!(e.prioritized_error <= 1e-3, "{e:?}");
        assert!(e.yielding_deviation > e.prioritized_error);
    }
    assert!(rep.min_pair_distance >= scene.file.collision.d_s - 0.01);
    for j in 0..2 {
        let series: Vec<f64> = rep.resume_deviation.iter().map(|d| d[j]).collect();
        assert!(settles(&series, 1e-3, 1e-9));
        assert!(rep.final_errors[j] <= scene.file.reach_tol);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn separation_holds_for_any_thresholds(seed in any::<u64>()) {
        let scene = SceneConfig::default_scene();
        let l = &sample_thresholds(&scene, 1, seed)[0];
        let out = run_batch_with(&scene, l, 6, seed, &TrialOptions::default()).unwrap();
        prop_assert_eq!(out.record.hard_failures, 0);
        for t in &out.trials {
            prop_assert!(t.min_pair_distance.unwrap_or(f64::INFINITY) >= scene.file.collision.d_s - 0.01);
            prop_assert!(t.risk_time <= scene.file.trial_timeout);
            prop_assert_eq!(t.qp_infeasible, 0);
        }
    }
}
