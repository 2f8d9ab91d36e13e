use std::io::BufReader;

use approx::assert_relative_eq;
use mesoplatoon::platoon::ExtendedPairState;
use mesoplatoon::sim::{simulate_from, simulate_with_leader, Disturbance, InitialConditionSpec, Scenario, SpeedBreakpoint};
use mesoplatoon::{simulate, Error, Policy, Rho, TrajectoryLog};

const POLICIES: [Policy; 2] = [Policy::ConstantSpacing, Policy::VariableSpacing];

fn short(policy: Policy, t_end: f64) -> Scenario {
    let mut sc = Scenario::paper(policy);
    sc.t_end = t_end;
    sc
}

fn speeds(log: &TrajectoryLog, k: usize) -> Vec<f64> {
    let mut v = log.v_ref[k];
    log.vehicles
        .iter()
        .map(|s| {
            v += s.dv[k];
            v
        })
        .collect()
}

#[test]
fn runs_are_deterministic() {
    for policy in POLICIES {
        let sc = short(policy, 12.0);
        assert_eq!(simulate(&sc).unwrap(), simulate(&sc).unwrap());
    }
}

#[test]
fn log_shape_and_time_grid() {
    let log = simulate(&short(Policy::VariableSpacing, 2.0)).unwrap();
    assert_eq!(log.len(), 201);
    assert_eq!(log.n_vehicles(), 31);
    assert!(log.vehicles.iter().all(|s| s.rho.len() == 2 && s.dp.len() == 201));
    assert_relative_eq!(log.time[200], 2.0, epsilon = 1e-12);
    assert_eq!(log.index_at(1.0), 100);
}

#[test]
fn vehicle_zero_sees_no_upstream_aggregate() {
    let log = simulate(&short(Policy::ConstantSpacing, 1.0)).unwrap();
    assert!(log.vehicles[0].psi_dp.iter().all(|&p| p == 0.0));
    assert!(log.vehicles[0].psi_dv.iter().all(|&p| p == 0.0));
    assert!(log.vehicles[5].psi_dp.iter().any(|&p| p != 0.0));
}

#[test]
fn leader_speed_step_enters_as_pair_speed_jump() {
    let log = simulate(&short(Policy::ConstantSpacing, 10.5)).unwrap();
    let k = log.index_at(10.0);
    assert_eq!(log.v_ref[k - 1], 14.0);
    assert_eq!(log.v_ref[k], 25.0);
    let jump = log.vehicles[0].dv[k] - log.vehicles[0].dv[k - 1];
    assert_relative_eq!(jump, -11.0, epsilon = 0.05);
    // downstream pairs only react through their own dynamics
    assert!((log.vehicles[3].dv[k] - log.vehicles[3].dv[k - 1]).abs() < 0.05);
}

#[test]
fn inputs_and_speeds_respect_limits() {
    for policy in POLICIES {
        let sc = Scenario::paper(policy);
        let log = simulate(&sc).unwrap();
        let a = sc.limits.a_max;
        for s in &log.vehicles {
            assert!(s.u_app.iter().all(|u| u.abs() <= a + 1e-12));
        }
        for k in 0..log.len() {
            for v in speeds(&log, k) {
                assert!(v >= sc.limits.v_min - 1e-9 && v <= sc.limits.v_max + 1e-9, "speed {v}");
            }
        }
    }
}

#[test]
fn saturation_is_logged_honestly() {
    let mut sc = short(Policy::ConstantSpacing, 3.0);
    sc.limits.a_max = 0.5;
    let log = simulate(&sc).unwrap();
    let clipped = log
        .vehicles
        .iter()
        .flat_map(|s| s.u_cmd.iter().zip(&s.u_app))
        .filter(|(c, a)| c.abs() > 0.5 && a.abs() <= 0.5 + 1e-12)
        .count();
    assert!(clipped > 0);
}

#[test]
fn speed_floor_holds_when_commands_push_below_it() {
    let mut sc = Scenario::disturbance_free(Policy::ConstantSpacing);
    sc.t_end = 20.0;
    sc.limits.v_min = 13.5;
    sc.ic = InitialConditionSpec::at_equilibrium();
    sc.disturbances = vec![Disturbance::pulse(0, -4.0, 1.0, 6.0)];
    let log = simulate(&sc).unwrap();
    let min = (0..log.len()).flat_map(|k| speeds(&log, k)).fold(f64::INFINITY, f64::min);
    assert!(min >= 13.5 - 1e-9, "min speed {min}");
    assert!(min < 13.6);
}

#[test]
fn gaps_stay_positive_on_the_reference_runs() {
    for policy in POLICIES {
        let log = simulate(&Scenario::paper(policy)).unwrap();
        let min_gap = log
            .vehicles
            .iter()
            .flat_map(|s| s.dp.iter().map(|dp| -dp))
            .fold(f64::INFINITY, f64::min);
        assert!(min_gap > 10.0, "{policy}: min gap {min_gap}");
    }
}

#[test]
fn single_pair_recovers_after_a_pulse() {
    for policy in POLICIES {
        let mut sc = Scenario::disturbance_free(policy);
        sc.n_vehicles = 2;
        sc.t_end = 30.0;
        sc.ic = InitialConditionSpec::at_equilibrium();
        sc.disturbances = vec![Disturbance::pulse(0, 2.0, 1.0, 3.0)];
        let log = simulate(&sc).unwrap();
        let mid = log.error_state(0, log.index_at(3.0)).norm();
        assert!(mid > 0.1, "{policy}: pulse should excite vehicle 0, got {mid}");
        let end = log.len() - 1;
        assert!(log.error_state(0, end).norm() < 1e-4);
        assert!(log.error_state(1, end).norm() < 1e-4);
    }
}

#[test]
fn uncommunicated_disturbance_reaches_the_follower() {
    let mut sc = Scenario::disturbance_free(Policy::ConstantSpacing);
    sc.n_vehicles = 3;
    sc.t_end = 6.0;
    sc.ic = InitialConditionSpec::at_equilibrium();
    sc.disturbances = vec![Disturbance::pulse(1, 1.0, 1.0, 2.0)];
    let log = simulate(&sc).unwrap();
    let k = log.index_at(2.0);
    assert_eq!(log.error_state(0, k).norm(), 0.0);
    assert!(log.error_state(1, k).norm() > 0.05);
    assert!(log.error_state(2, k).norm() > 0.01);
    // broadcast command excludes the disturbance, applied input includes it
    let s = &log.vehicles[1];
    let k1 = log.index_at(1.5);
    assert_relative_eq!(s.u_app[k1] - s.u_cmd[k1], 1.0, epsilon = 1e-12);
}

#[test]
fn coarser_aggregate_refresh_is_supported() {
    let mut sc = short(Policy::VariableSpacing, 2.0);
    sc.psi_sample_period = 0.05;
    let log = simulate(&sc).unwrap();
    let p = &log.vehicles[4].psi_dp;
    assert_eq!(p[1], p[0]);
    assert_eq!(p[4], p[0]);
    assert_ne!(p[5], p[0]);
}

#[test]
fn leader_travels_at_reference_speed() {
    let mut sc = Scenario::disturbance_free(Policy::ConstantSpacing);
    sc.t_end = 5.0;
    sc.speed_schedule = vec![
        SpeedBreakpoint { t_start: 0.0, v_ref: 14.0 },
        SpeedBreakpoint { t_start: 2.0, v_ref: 20.0 },
    ];
    let out = simulate_with_leader(&sc).unwrap();
    assert_relative_eq!(out.leader.v, 20.0);
    assert_relative_eq!(out.leader.p, 14.0 * 2.0 + 20.0 * 3.0, epsilon = 1e-9);
}

#[test]
fn restart_reproduces_the_run() {
    let sc = short(Policy::VariableSpacing, 4.0);
    let full = simulate(&sc).unwrap();
    let k = full.index_at(2.0);
    let pairs: Vec<ExtendedPairState> = (0..full.n_vehicles()).map(|i| full.pair(i, k)).collect();
    let tail = simulate_from(&sc, full.time[k], &pairs).unwrap();
    assert_eq!(tail.len(), full.len() - k);
    for i in 0..full.n_vehicles() {
        let (a, b) = (&full.vehicles[i], &tail.vehicles[i]);
        assert_relative_eq!(a.dp[full.len() - 1], b.dp[tail.len() - 1], epsilon = 1e-9);
        assert_relative_eq!(a.dv[full.len() - 1], b.dv[tail.len() - 1], epsilon = 1e-9);
    }
}

#[test]
fn restart_rejects_bad_state() {
    let sc = short(Policy::ConstantSpacing, 1.0);
    let good = ExtendedPairState::new(mesoplatoon::CarFollowingState::new(-20.0, 0.0), Rho::Scalar(0.0));
    assert!(matches!(simulate_from(&sc, 0.0, &[good]), Err(Error::Dimension { .. })));
    let pairs = vec![good; 31];
    assert!(simulate_from(&sc, 1.0, &pairs).is_err());
    let wrong = vec![ExtendedPairState::new(good.chi, Rho::Pair([0.0, 0.0])); 31];
    assert!(matches!(simulate_from(&sc, 0.0, &wrong), Err(Error::Dimension { .. })));
}

#[test]
fn divergence_is_reported() {
    let mut sc = short(Policy::ConstantSpacing, 60.0);
    sc.controller.k_dp = -5.0;
    sc.limits.a_max = 1e9;
    sc.limits.v_max = 1e12;
    sc.limits.v_min = -1e12;
    match simulate(&sc) {
        Err(Error::Diverged { .. }) | Err(Error::InvalidParameter { .. }) => {}
        other => panic!("expected divergence or rejection, got {:?}", other.map(|l| l.len())),
    }
}

#[test]
fn csv_round_trip() {
    for policy in POLICIES {
        let sc = short(policy, 1.0);
        let log = simulate(&sc).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), log.len() + 1);
        let back = TrajectoryLog::read_csv(BufReader::new(&buf[..]), log.controller.clone(), log.eq, 1).unwrap();
        assert_eq!(back.len(), log.len());
        for (a, b) in log.vehicles.iter().zip(&back.vehicles) {
            for k in 0..log.len() {
                assert_relative_eq!(a.dp[k], b.dp[k], max_relative = 1e-8);
                assert_relative_eq!(a.u_app[k], b.u_app[k], max_relative = 1e-8, epsilon = 1e-300);
                assert_relative_eq!(a.psi_dv[k], b.psi_dv[k], max_relative = 1e-6, epsilon = 1e-9);
            }
        }
    }
}

#[test]
fn csv_reader_rejects_malformed_input() {
    let log = simulate(&short(Policy::ConstantSpacing, 0.05)).unwrap();
    let mut buf = Vec::new();
    log.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let read = |s: &str, policy: Policy| {
        TrajectoryLog::read_csv(BufReader::new(s.as_bytes()), mesoplatoon::ControllerParams::paper(policy), log.eq, 1)
    };
    assert!(read(&text, Policy::ConstantSpacing).is_ok());
    assert!(matches!(read(&text, Policy::VariableSpacing), Err(Error::Schema(_))));
    assert!(matches!(read("", Policy::ConstantSpacing), Err(Error::Schema(_))));
    let bad = text.replacen("dp_0", "dq_0", 1);
    assert!(matches!(read(&bad, Policy::ConstantSpacing), Err(Error::Schema(_))));
    let mut lines: Vec<&str> = text.lines().collect();
    lines[2] = "1,2,3";
    assert!(matches!(read(&lines.join("\n"), Policy::ConstantSpacing), Err(Error::Schema(_))));
    let nan = text.lines().take(2).collect::<Vec<_>>().join("\n") + "\n" + &text.lines().nth(2).unwrap().replacen(',', ",x", 1);
    assert!(matches!(read(&nan, Policy::ConstantSpacing), Err(Error::Schema(_))));
}
