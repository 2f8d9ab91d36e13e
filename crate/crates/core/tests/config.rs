use std::path::Path;

use proptest::prelude::*;

use mesoplatoon::config::{parse, serialize, set_scalar, RunConfig, SCALAR_KEYS};
use mesoplatoon::sim::{DisturbanceKind, Scenario};
use mesoplatoon::stability::DerivativeSource;
use mesoplatoon::{Error, Policy};

fn configs_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
}

fn line_of(e: Error) -> Option<usize> {
    match e {
        Error::Config { line, .. } => line,
        other => panic!("expected a config error, got {other}"),
    }
}

#[test]
fn minimal_config_uses_reference_scenario() {
    for (name, policy) in [("constant", Policy::ConstantSpacing), ("variable", Policy::VariableSpacing)] {
        let cfg = parse(&format!("scenario.policy = {name}\n")).unwrap();
        assert_eq!(cfg, RunConfig::reference(policy));
        assert_eq!(cfg.scenario, Scenario::paper(policy));
    }
}

#[test]
fn bundled_configs_parse() {
    let mut count = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "cfg") {
            let cfg = RunConfig::from_path(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert_eq!(parse(&serialize(&cfg)).unwrap(), cfg);
            count += 1;
        }
    }
    assert!(count >= 6);
}

#[test]
fn bundled_reference_configs_match_builtin_scenarios() {
    let cp = RunConfig::from_path(&configs_dir().join("paper_cp.cfg")).unwrap();
    assert_eq!(cp.scenario, Scenario::paper(Policy::ConstantSpacing));
    let vp = RunConfig::from_path(&configs_dir().join("paper_vp.cfg")).unwrap();
    assert_eq!(vp.scenario, Scenario::paper(Policy::VariableSpacing));
    let eq = RunConfig::from_path(&configs_dir().join("equilibrium.cfg")).unwrap();
    assert!(eq.scenario.disturbances.is_empty());
    assert_eq!(eq.scenario.speed_schedule.len(), 1);
    let sweep = RunConfig::from_path(&configs_dir().join("sweep_ab.cfg")).unwrap();
    assert_eq!(sweep.sweep.size(), 25);
    assert_eq!(sweep.sweep.axes[0].0, "controller.a");
}

#[test]
fn comments_and_whitespace() {
    let cfg = parse("# header\n\n  scenario.policy = variable   # trailing\ncontroller.a=0.75\n").unwrap();
    assert_eq!(cfg.scenario.controller.rho.a, 0.75);
}

#[test]
fn indexed_groups_replace_defaults() {
    let text = "scenario.policy = constant
schedule.1.t = 5
schedule.1.v = 18
schedule.0.t = 0
schedule.0.v = 14
disturbance.0.kind = sinusoid
disturbance.0.target = 3
disturbance.0.amplitude = 1.5
disturbance.0.frequency = 2
disturbance.0.t_start = 10
disturbance.0.t_end = 20
";
    let cfg = parse(text).unwrap();
    let s = &cfg.scenario;
    assert_eq!(s.speed_schedule.len(), 2);
    assert_eq!((s.speed_schedule[1].t_start, s.speed_schedule[1].v_ref), (5.0, 18.0));
    assert_eq!(s.disturbances.len(), 1);
    assert_eq!(s.disturbances[0].kind, DisturbanceKind::Sinusoid { frequency: 2.0 });
    assert_eq!(s.disturbances[0].target, 3);

    let none = parse("scenario.policy = constant\ndisturbance.count = 0\n").unwrap();
    assert!(none.scenario.disturbances.is_empty());
}

#[test]
fn analysis_and_sweep_settings() {
    let text = "scenario.policy = constant
analysis.iss = no
analysis.iss_source = realized
analysis.iss_tolerance = 1e-4
analysis.attenuation = none
sweep.axis.controller.b = 0.1, 0.2
sweep.axis.scenario.n_vehicles = 6, 16, 31
sweep.simulate = true
sweep.workers = 2
";
    let cfg = parse(text).unwrap();
    assert!(!cfg.analysis.iss);
    assert_eq!(cfg.analysis.iss_source, DerivativeSource::Realized);
    assert_eq!(cfg.analysis.iss_tolerance, 1e-4);
    assert_eq!(cfg.analysis.attenuation_window, None);
    assert_eq!(cfg.sweep.axes[0].0, "controller.b");
    assert_eq!(cfg.sweep.axes[1].1, vec![6.0, 16.0, 31.0]);
    assert_eq!(cfg.sweep.size(), 6);
    assert!(cfg.sweep.simulate);
    assert_eq!(parse(&serialize(&cfg)).unwrap(), cfg);
}

#[test]
fn errors_carry_line_numbers() {
    let cases = [
        ("scenario.policy = constant\ncontroller.a = abc\n", Some(2)),
        ("scenario.policy = constant\n\nbogus.key = 1\n", Some(3)),
        ("scenario.policy = constant\ncontroller.a = 1\ncontroller.a = 2\n", Some(3)),
        ("scenario.policy = sideways\n", Some(1)),
        ("scenario.policy = constant\nno equals sign\n", Some(2)),
        ("scenario.policy = constant\ncontroller.lambda2 = 1\n", Some(2)),
        ("scenario.policy = constant\nschedule.x = 1\n", Some(2)),
        ("scenario.policy = constant\nschedule.0.speed = 1\n", Some(2)),
        ("scenario.policy = constant\ndisturbance.0.kind = wobble\ndisturbance.0.target = 0\n", Some(2)),
        ("scenario.policy = constant\nscenario.dt = -1\n", Some(2)),
        ("scenario.policy = constant\nscenario.n_vehicles = 2.5\n", Some(2)),
        ("scenario.policy = constant\nanalysis.iss = maybe\n", Some(2)),
        ("scenario.policy = constant\nsweep.axis.controller.policy = 1\n", Some(2)),
        ("scenario.policy = constant\nic.seed = -3\n", Some(2)),
        ("scenario.policy = constant\nlimits.a_max = inf\n", Some(2)),
        ("scenario.policy = constant\nschedule.count = 1\nschedule.3.t = 0\nschedule.3.v = 1\n", Some(3)),
    ];
    for (text, line) in cases {
        let e = parse(text).expect_err(text);
        assert_eq!(line_of(e), line, "{text}");
    }
    assert!(matches!(parse("controller.a = 1\n"), Err(Error::Config { line: None, .. })));
    assert!(parse("scenario.policy = constant\nschedule.count = 2\nschedule.0.t = 0\nschedule.0.v = 1\n").is_err());
    let msg = parse("scenario.policy = constant\ncontroller.a = abc\n").unwrap_err().to_string();
    assert!(msg.contains("line 2") && msg.contains("controller.a"), "{msg}");
}

#[test]
fn set_scalar_covers_every_key() {
    for key in SCALAR_KEYS {
        let mut sc = Scenario::paper(Policy::VariableSpacing);
        set_scalar(&mut sc, key, 7.0, None).unwrap();
        assert_ne!(sc, Scenario::paper(Policy::VariableSpacing), "{key}");
    }
    let mut sc = Scenario::paper(Policy::ConstantSpacing);
    assert!(set_scalar(&mut sc, "controller.nope", 1.0, None).is_err());
}

fn scenario_strategy() -> impl Strategy<Value = RunConfig> {
    (
        prop_oneof![Just(Policy::ConstantSpacing), Just(Policy::VariableSpacing)],
        2usize..64,
        0.1..5.0f64,
        0.1..5.0f64,
        0.0..2.0f64,
        0.0..2.0f64,
        0.5..0.99f64,
        any::<u64>(),
        0.0..5.0f64,
        prop::collection::vec((0.0..50.0f64, 1.0..30.0f64), 1..6),
    )
        .prop_map(|(policy, n, kdp, kdv, a, b, ups, seed, hw, sched)| {
            let mut cfg = RunConfig::reference(policy);
            let sc = &mut cfg.scenario;
            sc.n_vehicles = n;
            sc.controller.k_dp = kdp;
            sc.controller.k_dv = kdv;
            sc.controller.rho.a = a;
            sc.controller.rho.b = b;
            sc.controller.upsilon = ups;
            sc.ic.seed = seed;
            sc.ic.dp_halfwidth = hw;
            let mut times: Vec<f64> = sched.iter().map(|s| s.0).collect();
            times.sort_by(f64::total_cmp);
            times.dedup();
            sc.speed_schedule = times
                .iter()
                .zip(&sched)
                .map(|(&t, s)| mesoplatoon::sim::SpeedBreakpoint { t_start: t, v_ref: s.1 })
                .collect();
            sc.disturbances.retain(|d| d.target < n);
            cfg.analysis.attenuation_window = if a > 1.0 { None } else { Some((a, 60.0)) };
            cfg
        })
}

proptest! {
    #[test]
    fn serialize_parse_round_trip(cfg in scenario_strategy()) {
        let text = serialize(&cfg);
        let back = parse(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(serialize(&back), text);
    }
}
