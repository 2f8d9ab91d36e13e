//! Acceptance criteria. Prints one `PASS`/`FAIL` line per criterion and
//! exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mesoplatoon::aggregates::{check_lemma2_bounds, check_variance_property};
use mesoplatoon::sim::{step_halving, InitialConditionSpec, Scenario};
use mesoplatoon::stability::{
    attenuation_profile, certificate_matrices, constants, iss_trajectory_check, string_metrics,
    DerivativeSource, TRAJECTORY_TOL,
};
use mesoplatoon::{simulate, CarFollowingState, ControllerParams, EquilibriumSpec, Policy, TrajectoryLog};

const POLICIES: [Policy; 2] = [Policy::ConstantSpacing, Policy::VariableSpacing];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn max_error_at(log: &TrajectoryLog, k: usize) -> f64 {
    (0..log.n_vehicles())
        .map(|i| log.error_state(i, k).norm())
        .fold(0.0, f64::max)
}

fn gamma_reproduction() -> Outcome {
    let cp = constants(&ControllerParams::paper(Policy::ConstantSpacing)).unwrap();
    let vp = constants(&ControllerParams::paper(Policy::VariableSpacing)).unwrap();
    let pass = (cp.gamma_tilde - 0.5237).abs() <= 0.005 && (vp.gamma_tilde - 0.5).abs() <= 1e-9;
    outcome(
        pass,
        format!("gamma_tilde cp {:.7} (0.5237 +- 0.005), vp {:.10} (0.5 +- 1e-9)", cp.gamma_tilde, vp.gamma_tilde),
    )
}

fn certificate_internals() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (policy, expected) in [(Policy::ConstantSpacing, 1.5), (Policy::VariableSpacing, 2.0)] {
        let p = ControllerParams::paper(policy);
        let m = certificate_matrices(&p).unwrap();
        let c = constants(&p).unwrap();
        let min = m.q_diagonal().into_iter().fold(f64::INFINITY, f64::min);
        pass &= (min - expected).abs() <= 1e-12 && (c.alpha - expected).abs() <= 1e-12;
        parts.push(format!("{policy} min diag Q {min} alpha {}", c.alpha));
    }
    outcome(pass, parts.join(", "))
}

fn equilibrium_preservation() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for policy in POLICIES {
        let mut sc = Scenario::disturbance_free(policy);
        sc.ic = InitialConditionSpec::at_equilibrium();
        let start = Instant::now();
        let err = simulate(&sc).unwrap().max_error_norm();
        let secs = start.elapsed().as_secs_f64();
        pass &= err <= 1e-9 && secs < 5.0;
        parts.push(format!("{policy} max error {err:.2e} in {secs:.2} s"));
    }
    outcome(pass, parts.join(", "))
}

fn phase_one_convergence() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for policy in POLICIES {
        let log = simulate(&Scenario::paper(policy)).unwrap();
        // last sample before the leader speed step at t = 10 s
        let k = log.index_at(10.0) - 1;
        let e10 = max_error_at(&log, k);
        let free = simulate(&Scenario::disturbance_free(policy)).unwrap();
        let e60 = max_error_at(&free, free.len() - 1);
        pass &= e10 < 0.05 && e60 < 1e-3;
        parts.push(format!("{policy} |e(10-)| {e10:.2e} |e(60)| {e60:.2e}"));
    }
    outcome(pass, parts.join(", "))
}

fn theorem_bound() -> Outcome {
    let start = Instant::now();
    let policy = Policy::ConstantSpacing;
    let logs: Vec<_> = [5usize, 15, 30]
        .iter()
        .map(|&n| {
            let mut sc = Scenario::disturbance_free(policy);
            sc.n_vehicles = n + 1;
            simulate(&sc).unwrap()
        })
        .collect();
    let consts = constants(&ControllerParams::paper(policy)).unwrap();
    let s = string_metrics(&logs, &consts, 1.1).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let runs: Vec<_> = s
        .runs
        .iter()
        .map(|r| format!("N={} peak {:.3} bound {:.3} e0 {:.3}", r.n_vehicles - 1, r.platoon_peak, r.bound, r.initial_max))
        .collect();
    outcome(
        s.all_within_bound() && s.size_independent() && secs < 30.0,
        format!(
            "{}; within bound {}; peak ratio {:.3} (<= 1.1: {}); {secs:.2} s",
            runs.join(", "),
            s.all_within_bound(),
            s.peak_ratio,
            s.size_independent()
        ),
    )
}

fn iss_decrease() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for policy in POLICIES {
        let log = simulate(&Scenario::paper(policy)).unwrap();
        let consts = constants(&log.controller).unwrap();
        let r = iss_trajectory_check(&log, &consts, DerivativeSource::ClosedLoop, None, TRAJECTORY_TOL).unwrap();
        let mut bad = consts;
        bad.upsilon = 1.5;
        let neg = iss_trajectory_check(&log, &bad, DerivativeSource::ClosedLoop, None, TRAJECTORY_TOL).unwrap();
        pass &= r.passed() && neg.flag_count() >= 1;
        let first = r
            .violations
            .first()
            .map(|v| format!(" first at vehicle {} t={:.2}", v.vehicle, v.t))
            .unwrap_or_default();
        parts.push(format!(
            "{policy} {} violations (max excess {:.3e}{first}), negative control {} flags",
            r.violation_count,
            r.max_excess,
            neg.flag_count()
        ));
    }
    outcome(pass, parts.join(", "))
}

fn lemma_suite() -> Outcome {
    let eq = EquilibriumSpec::new(20.0, 14.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut history = Vec::with_capacity(1000);
    let mut variance_failures = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=31);
        let scale = 10f64.powf(rng.random_range(-3.0..2.0));
        let pairs: Vec<_> = (0..n)
            .map(|_| {
                CarFollowingState::new(
                    -20.0 + scale * rng.random_range(-1.0..=1.0),
                    scale * rng.random_range(-1.0..=1.0),
                )
            })
            .collect();
        let dp: Vec<f64> = pairs.iter().map(|c| c.dp).collect();
        let dv: Vec<f64> = pairs.iter().map(|c| c.dv).collect();
        for values in [dp, dv] {
            if !check_variance_property(&values).unwrap() {
                variance_failures += 1;
            }
        }
        history.push(pairs);
    }
    let mut lemma = 0;
    for policy in POLICIES {
        lemma += check_lemma2_bounds(&history, &ControllerParams::paper(policy).rho, &eq).len();
    }
    outcome(
        lemma == 0 && variance_failures == 0,
        format!("1000 samples: {lemma} bound violations, {variance_failures} variance violations"),
    )
}

fn attenuation() -> Outcome {
    let mut tails = Vec::new();
    let mut parts = Vec::new();
    let mut pass = true;
    for policy in POLICIES {
        let log = simulate(&Scenario::paper(policy)).unwrap();
        let a = attenuation_profile(&log, (35.0, 60.0)).unwrap();
        pass &= a.tail_attenuated();
        let tail_gap = *a.gap_peaks.last().unwrap();
        let tail_dp = (log.index_at(35.0)..log.len())
            .map(|k| (log.vehicles[log.n_vehicles() - 1].dp[k] + log.eq.dp_bar).abs())
            .fold(0.0, f64::max);
        parts.push(format!(
            "{policy} peak |dv_2| {:.3} |dv_N| {:.3}, tail distance excursion {tail_dp:.3} (gap error {tail_gap:.3})",
            a.speed_peaks[0],
            a.speed_peaks.last().unwrap()
        ));
        tails.push(tail_dp);
    }
    let ordering = tails[1] <= tails[0];
    parts.push(format!("vp <= cp: {ordering}"));
    outcome(pass && ordering, parts.join(", "))
}

fn integrator_order() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for policy in POLICIES {
        let sc = Scenario::disturbance_free(policy);
        let smooth = step_halving(&sc, true, 1.0).unwrap();
        let full = step_halving(&sc, false, 1.0).unwrap();
        pass &= smooth.ratio() >= 8.0 && !smooth.saturated;
        parts.push(format!(
            "{policy} smooth phase from t={:.2}: ratio {:.2} (full horizon with saturation {:.2})",
            smooth.t_start,
            smooth.ratio(),
            full.ratio()
        ));
    }
    outcome(pass, parts.join(", "))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 gamma reproduction", gamma_reproduction),
        ("2 certificate internals", certificate_internals),
        ("3 equilibrium preservation", equilibrium_preservation),
        ("4 phase-1 convergence", phase_one_convergence),
        ("5 string stability bound", theorem_bound),
        ("6 ISS decrease condition", iss_decrease),
        ("7 lemma suite", lemma_suite),
        ("8 attenuation", attenuation),
        ("9 integrator order", integrator_order),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!("criterion {name}: {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
