use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use onevision::frameworks::{FrameworkConfig, FrameworkKind, RegretWeights};
use onevision::lti_verify::LtiTestSystem;
use onevision::sim::{
    compute_metrics, gap_error, ideal_oracle, prepare_run, run_simulation, run_sweep, simulate,
    NoiseSpec, Realization, RunConfig, RunLog, SimSettings, SweepAxis, TaskKind, TaskParams,
};
use onevision::timeline::{DelaySpec, Tick, Trajectory};

fn quiet(task: TaskKind, framework: FrameworkKind) -> RunConfig {
    RunConfig {
        task,
        framework,
        sensor_noise: 0.0,
        disturbance: 0.0,
        ..Default::default()
    }
}

fn one_tick(framework: FrameworkKind) -> RunConfig {
    RunConfig {
        obs_ms: 10.0,
        act_ms: 10.0,
        comm_ms: 10.0,
        control_hz: 100.0,
        duration_s: 5.0,
        ..quiet(TaskKind::LeaderLinear, framework)
    }
}

#[test]
fn one_tick_delays_make_naive_centralized_at_rest() {
    let sys = LtiTestSystem::canonical();
    let mut scenario = sys.scenario().unwrap();
    // both agents parked on their references
    scenario.x0 = vec![1.0, 0.5, 0.0, 0.0, -1.0, 0.5, 0.0, 0.0];
    let n = 300;
    let settings = SimSettings {
        framework: FrameworkKind::Naive,
        config: Arc::new(FrameworkConfig {
            delays: DelaySpec::new(1, 1, 1, 1).unwrap(),
            weights: RegretWeights::scaled_identity(4, 2, 1.0, 0.1).unwrap(),
            horizon: 20,
            optimizer: Default::default(),
            record_replans: false,
        }),
        n_ticks: n,
        initial_offset: None,
        belief_offset: None,
    };
    let sim = simulate(&scenario, &settings, &Realization::zero(&scenario, n)).unwrap();
    let worst = sim.regret.iter().cloned().fold(0.0, f64::max);
    assert!(worst < 1e-9, "worst per-tick regret {worst:e}");
}

#[test]
fn one_tick_delays_leave_naive_one_tick_stale() {
    // a cruising peer seen one tick late puts the gap off by v·dt
    let log = run_simulation(&one_tick(FrameworkKind::Naive)).unwrap();
    let worst = log.regret.iter().cloned().fold(0.0, f64::max);
    assert!(worst > 0.0 && worst < 1e-3, "{worst:e}");
}

#[test]
fn one_tick_delays_make_onevision_centralized() {
    let log = run_simulation(&one_tick(FrameworkKind::OneVision)).unwrap();
    for ((_, x), (_, xi)) in log.x.iter().zip(log.x_ideal.iter()) {
        for (a, b) in x.iter().zip(xi) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn onevision_without_noise_tracks_the_ideal() {
    let log = run_simulation(&quiet(TaskKind::LeaderLinear, FrameworkKind::OneVision)).unwrap();
    assert!(
        log.metrics.avg_regret < 1e-6,
        "{:e}",
        log.metrics.avg_regret
    );
}

#[test]
fn same_seed_same_log() {
    for task in [TaskKind::LeaderObstacle, TaskKind::FormationDriving] {
        let cfg = RunConfig {
            task,
            duration_s: 3.0,
            seed: 11,
            ..Default::default()
        };
        let a = run_simulation(&cfg).unwrap();
        let b = run_simulation(&cfg).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes(), "{task}");
        let other = run_simulation(&RunConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.checksum, other.checksum);
    }
}

#[test]
fn default_run_logs_two_thousand_ticks() {
    let log = run_simulation(&RunConfig {
        framework: FrameworkKind::ConstU,
        ..Default::default()
    })
    .unwrap();
    assert_eq!(log.n_ticks(), 2000);
    assert_eq!(log.x_ideal.len(), 2000);
    assert_eq!(log.regret.len(), 2000);
    assert_eq!(log.stats.causality_violations, 0);
    let back = RunLog::from_bytes(&log.to_bytes()).unwrap();
    assert_eq!(back, log);
}

#[test]
fn every_message_arrives_exactly_on_time() {
    // one broadcast per agent per tick; the last T^c ticks are still in flight
    let cfg = RunConfig {
        duration_s: 2.0,
        ..Default::default()
    };
    let log = run_simulation(&cfg).unwrap();
    let sent = 2 * 200;
    let in_flight = 2 * cfg.delays().unwrap().comm();
    // each delivered message reaches the one other agent
    assert_eq!(log.messages_delivered, sent - in_flight);
}

#[test]
fn sweep_row_matches_a_direct_run() {
    let base = RunConfig {
        duration_s: 4.0,
        ..Default::default()
    };
    let table = run_sweep(
        &base,
        SweepAxis::Delay,
        &[100.0],
        &[FrameworkKind::OneVision],
        1,
    )
    .unwrap();
    let row = table.data_rows().next().unwrap();
    let direct = run_simulation(&RunConfig {
        comm_ms: 100.0,
        seed: 1,
        ..base
    })
    .unwrap();
    assert_eq!(row.metrics.unwrap(), direct.metrics);
    assert_eq!(table.rows.len(), 3);
}

#[test]
fn oracle_matches_the_closed_form_lti_solution() {
    let sys = LtiTestSystem::canonical();
    let scenario = sys.scenario().unwrap();
    let n = 400;
    let ideal = ideal_oracle(&scenario, 1, &Realization::zero(&scenario, n), n);
    // stacked [x; z] evolves by [[A − B Kx, B Kz], [0, C]]
    let a = sys.fleet_a();
    let b = sys.fleet_b();
    let nx = a.nrows();
    let nz = sys.kz.ncols();
    let mut m = DMatrix::<f64>::zeros(nx + nz, nx + nz);
    m.view_mut((0, 0), (nx, nx)).copy_from(&(&a - &b * &sys.kx));
    m.view_mut((0, nx), (nx, nz)).copy_from(&(&b * &sys.kz));
    m.view_mut((nx, nx), (nz, nz))
        .copy_from(&onevision::lti_verify::block_diag(&sys.c));
    let mut s = DVector::from_iterator(nx + nz, sys.x0.iter().chain(&sys.z0).cloned());
    let mut power = DMatrix::<f64>::identity(nx + nz, nx + nz);
    for t in 0..n as u64 {
        let closed =
            &power * DVector::from_iterator(nx + nz, sys.x0.iter().chain(&sys.z0).cloned());
        let x = ideal.x.at(Tick(t));
        for k in 0..nx {
            assert!((x[k] - closed[k]).abs() < 1e-10, "tick {t} component {k}");
        }
        power = &m * power;
        s = &m * s;
    }
    assert!(s.iter().all(|v| v.is_finite()));
}

#[test]
fn oracle_is_pure_and_scores_zero_against_itself() {
    let cfg = RunConfig {
        duration_s: 3.0,
        ..Default::default()
    };
    let run = prepare_run(&cfg).unwrap();
    let a = ideal_oracle(&run.scenario, 5, &run.realization, 300);
    let b = ideal_oracle(&run.scenario, 5, &run.realization, 300);
    assert_eq!(a.x, b.x);
    assert_eq!(a.u, b.u);
    let w = RegretWeights::scaled_identity(2, 1, 1.0, 0.1).unwrap();
    for t in 0..300 {
        let t = Tick(t);
        assert_eq!(
            w.fleet_loss(
                &run.scenario.model,
                a.x.at(t),
                a.x.at(t),
                a.u.at(t),
                a.u.at(t)
            ),
            0.0
        );
    }
}

#[test]
fn simulation_shares_the_realization_with_the_ideal() {
    let cfg = RunConfig {
        duration_s: 2.0,
        ..Default::default()
    };
    let run = prepare_run(&cfg).unwrap();
    let sim = simulate(&run.scenario, &run.settings, &run.realization).unwrap();
    let direct = ideal_oracle(&run.scenario, 5, &run.realization, 200);
    assert_eq!(sim.ideal.x, direct.x);
    let log = run_simulation(&cfg).unwrap();
    assert_eq!(log.checksum, run.realization.disturbance.checksum());
}

#[test]
fn metric_hand_cases() {
    // constant 1 m gap error: leader 2.5 m ahead for a 1.5 m reference
    let x = Trajectory::from_flat(Tick(0), 4, [2.5, 2.0, 0.0, 2.0].repeat(50));
    assert!((gap_error(&x, 1.5) - 1.0).abs() < 1e-12);
    let z = Trajectory::from_flat(Tick(0), 2, [2.0, 0.0].repeat(50));
    let m = compute_metrics(
        TaskKind::LeaderLinear,
        &TaskParams::default(),
        &x,
        &z,
        &[0.0; 50],
    );
    assert_eq!(m.avg_regret, 0.0);
    assert!((m.avg_distance.unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn noise_free_realization_has_no_effect() {
    let cfg = quiet(TaskKind::FormationSwitching, FrameworkKind::Naive);
    let run = prepare_run(&RunConfig {
        duration_s: 1.0,
        ..cfg
    })
    .unwrap();
    let noisy = Realization::sample(&run.scenario, NoiseSpec::NONE, 100.0, 100, 99);
    let settings = SimSettings {
        config: Arc::clone(&run.settings.config),
        ..run.settings.clone()
    };
    let a = simulate(&run.scenario, &settings, &noisy).unwrap();
    let b = simulate(&run.scenario, &settings, &run.realization).unwrap();
    assert_eq!(a.x, b.x);
}

#[test]
fn longer_horizon_lowers_regret() {
    let base = RunConfig {
        duration_s: 5.0,
        ..Default::default()
    };
    let table = run_sweep(
        &base,
        SweepAxis::Horizon,
        &[1.0, 20.0],
        &[FrameworkKind::OneVision],
        2,
    )
    .unwrap();
    let short = table
        .mean(FrameworkKind::OneVision, 1.0)
        .unwrap()
        .avg_regret;
    let long = table
        .mean(FrameworkKind::OneVision, 20.0)
        .unwrap()
        .avg_regret;
    assert!(short > long, "H=1 {short:e} vs H=20 {long:e}");
}
