use std::fmt;
use std::str::FromStr;

use crate::control::{closed_loop_error_derivative, rho_derivative, ControllerParams, Policy};
use crate::error::{invalid, Error, Result};
use crate::platoon::{ErrorState, Rho};
use crate::sim::TrajectoryLog;

use super::constants::{DomainFlag, LyapunovConstants};
use super::lyapunov::lyapunov_derivative;

/// Absolute tolerance of pointwise trajectory inequalities.
pub const TRAJECTORY_TOL: f64 = 1e-6;

/// Which state derivative `Ẇ` is evaluated with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DerivativeSource {
    /// Nominal closed loop `f_cl(χ̃_i) + g_cl(ψ^{i−1})` at the logged state:
    /// exact feedforward, no saturation, no external disturbance.
    #[default]
    ClosedLoop,
    /// Derivative realised in the run, built from the applied accelerations.
    Realized,
}

impl DerivativeSource {
    pub fn as_str(self) -> &'static str {
        match self {
            DerivativeSource::ClosedLoop => "closed_loop",
            DerivativeSource::Realized => "realized",
        }
    }
}

impl fmt::Display for DerivativeSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DerivativeSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "closed_loop" => Ok(DerivativeSource::ClosedLoop),
            "realized" => Ok(DerivativeSource::Realized),
            _ => Err(invalid("iss_source", format!("unknown derivative source `{s}`"))),
        }
    }
}

/// One sample where the conditional decrease inequality fails.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IssViolation {
    pub vehicle: usize,
    pub sample: usize,
    pub t: f64,
    pub norm: f64,
    pub w_dot: f64,
    /// `−(1 − Υ)α|χ̃_i|²`.
    pub bound: f64,
}

/// Result of checking `Ẇ_i ≤ −(1 − Υ)α|χ̃_i|²` wherever
/// `|χ̃_i| ≥ d/(αΥ) · max_{j<i}|χ̃_j|`.
#[derive(Debug, Clone, PartialEq)]
pub struct IssReport {
    pub policy: Policy,
    pub source: DerivativeSource,
    pub tolerance: f64,
    pub samples_checked: usize,
    /// Samples inside the region where the inequality is required.
    pub samples_active: usize,
    pub violation_count: usize,
    /// Largest `Ẇ − bound` among violations.
    pub max_excess: f64,
    /// First violations, at most [`IssReport::KEPT_VIOLATIONS`].
    pub violations: Vec<IssViolation>,
    pub domain_flags: Vec<DomainFlag>,
}

impl IssReport {
    pub const KEPT_VIOLATIONS: usize = 32;

    /// Violations plus domain flags.
    pub fn flag_count(&self) -> usize {
        self.violation_count + self.domain_flags.len()
    }

    pub fn passed(&self) -> bool {
        self.flag_count() == 0
    }
}

fn check_policy(log: &TrajectoryLog, consts: &LyapunovConstants) -> Result<()> {
    if log.policy() != consts.policy {
        return Err(Error::Mismatch(format!(
            "log uses {} spacing, constants are for {} spacing",
            log.policy(),
            consts.policy
        )));
    }
    Ok(())
}

fn realized_derivative(log: &TrajectoryLog, i: usize, k: usize) -> Result<ErrorState> {
    let s = &log.vehicles[i];
    let u_prev = if i == 0 { 0.0 } else { log.vehicles[i - 1].u_app[k] };
    let pair = log.pair(i, k);
    let rho: Rho = rho_derivative(&pair.rho, log.psi(i, k), &log.controller.rho)?;
    Ok(ErrorState {
        dp: s.dv[k],
        dv: s.u_app[k] - u_prev,
        rho,
    })
}

/// Evaluate the conditional decrease inequality at every logged sample.
///
/// `Ẇ_i` is the analytic gradient of `W` dotted with the derivative chosen
/// by `source`. Samples outside `window` (if given) are skipped. Constants
/// outside their domain are reported as flags; the check still runs.
pub fn iss_trajectory_check(
    log: &TrajectoryLog,
    consts: &LyapunovConstants,
    source: DerivativeSource,
    window: Option<(f64, f64)>,
    tolerance: f64,
) -> Result<IssReport> {
    check_policy(log, consts)?;
    let params: &ControllerParams = &log.controller;
    let threshold = consts.iss_threshold();
    let rate = consts.iss_rate();
    let mut report = IssReport {
        policy: consts.policy,
        source,
        tolerance,
        samples_checked: 0,
        samples_active: 0,
        violation_count: 0,
        max_excess: 0.0,
        violations: Vec::new(),
        domain_flags: consts.domain_flags(),
    };
    for k in 0..log.len() {
        let t = log.time[k];
        if let Some((a, b)) = window {
            if t < a - 1e-9 || t > b + 1e-9 {
                continue;
            }
        }
        let mut upstream_max: f64 = 0.0;
        for i in 0..log.n_vehicles() {
            let err = log.error_state(i, k);
            let norm = err.norm();
            report.samples_checked += 1;
            if norm >= threshold * upstream_max {
                report.samples_active += 1;
                let deriv = match source {
                    DerivativeSource::ClosedLoop => {
                        closed_loop_error_derivative(params, &err, log.psi(i, k))?
                    }
                    DerivativeSource::Realized => realized_derivative(log, i, k)?,
                };
                let w_dot = lyapunov_derivative(params, &err, &deriv)?;
                let bound = -rate * norm * norm;
                let excess = w_dot - bound;
                if excess > tolerance {
                    report.violation_count += 1;
                    report.max_excess = report.max_excess.max(excess);
                    if report.violations.len() < IssReport::KEPT_VIOLATIONS {
                        report.violations.push(IssViolation {
                            vehicle: i,
                            sample: k,
                            t,
                            norm,
                            w_dot,
                            bound,
                        });
                    }
                }
            }
            upstream_max = upstream_max.max(norm);
        }
    }
    Ok(report)
}

/// String-stability figures of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct StringStabilityMetrics {
    /// `N + 1`.
    pub n_vehicles: usize,
    /// `A_i = sup_t |χ̃_i(t)|`.
    pub peaks: Vec<f64>,
    /// `|χ̃_i(t_end)|`.
    pub terminal: Vec<f64>,
    /// `max_i A_i`.
    pub platoon_peak: f64,
    /// `max_i |χ̃_i(0)|`.
    pub initial_max: f64,
    /// `(1/(1 − γ̃)) · √(ᾱ/α̲) · max_i|χ̃_i(0)|`.
    pub bound: f64,
}

impl StringStabilityMetrics {
    pub fn within_bound(&self) -> bool {
        self.platoon_peak <= self.bound + TRAJECTORY_TOL
    }

    pub fn terminal_max(&self) -> f64 {
        self.terminal.iter().copied().fold(0.0, f64::max)
    }
}

/// Per-run metrics over a family of platoon sizes plus the size-scaling
/// verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct StringScaling {
    pub runs: Vec<StringStabilityMetrics>,
    /// `max / min` of the platoon peaks across runs.
    pub peak_ratio: f64,
    /// Allowed growth, e.g. `1.1`.
    pub max_ratio: f64,
}

impl StringScaling {
    pub fn all_within_bound(&self) -> bool {
        self.runs.iter().all(StringStabilityMetrics::within_bound)
    }

    pub fn size_independent(&self) -> bool {
        self.peak_ratio <= self.max_ratio
    }
}

/// Peaks, terminal errors and the Theorem-style bound of a single run.
pub fn run_metrics(log: &TrajectoryLog, consts: &LyapunovConstants) -> Result<StringStabilityMetrics> {
    check_policy(log, consts)?;
    if log.is_empty() {
        return Err(Error::Empty("trajectory log"));
    }
    let last = log.len() - 1;
    let n = log.n_vehicles();
    let mut peaks = vec![0.0f64; n];
    let mut terminal = vec![0.0; n];
    let mut initial_max: f64 = 0.0;
    for (i, (peak, term)) in peaks.iter_mut().zip(terminal.iter_mut()).enumerate() {
        for k in 0..log.len() {
            *peak = peak.max(log.error_state(i, k).norm());
        }
        *term = log.error_state(i, last).norm();
        initial_max = initial_max.max(log.error_state(i, 0).norm());
    }
    let platoon_peak = peaks.iter().copied().fold(0.0, f64::max);
    Ok(StringStabilityMetrics {
        n_vehicles: n,
        peaks,
        terminal,
        platoon_peak,
        initial_max,
        bound: consts.chain_coefficient() * consts.overshoot() * initial_max,
    })
}

/// Metrics for logs of different platoon sizes sharing one controller.
/// `max_ratio` is the tolerated `max/min` spread of the platoon peaks.
pub fn string_metrics(
    logs: &[TrajectoryLog],
    consts: &LyapunovConstants,
    max_ratio: f64,
) -> Result<StringScaling> {
    let first = logs.first().ok_or(Error::Empty("string_metrics needs at least one log"))?;
    for log in &logs[1..] {
        if log.controller != first.controller || log.eq != first.eq {
            return Err(Error::Mismatch(
                "logs were produced with different controller or equilibrium parameters".into(),
            ));
        }
    }
    let runs = logs
        .iter()
        .map(|l| run_metrics(l, consts))
        .collect::<Result<Vec<_>>>()?;
    let hi = runs.iter().map(|r| r.platoon_peak).fold(0.0, f64::max);
    let lo = runs.iter().map(|r| r.platoon_peak).fold(f64::INFINITY, f64::min);
    let peak_ratio = if hi == 0.0 { 1.0 } else { hi / lo };
    Ok(StringScaling {
        runs,
        peak_ratio,
        max_ratio,
    })
}

/// Peak excursions of vehicles `2..=N` inside a time window.
#[derive(Debug, Clone, PartialEq)]
pub struct AttenuationProfile {
    pub window: (f64, f64),
    /// Vehicle indices the peaks refer to.
    pub vehicles: Vec<usize>,
    /// Peak `|Δv_i|`.
    pub speed_peaks: Vec<f64>,
    /// Peak `|Δp_i − Δp_i^r|`, the gap error against the policy's own
    /// reference (`−Δp̄` or `−Δp̄ − ρ₁`).
    pub gap_peaks: Vec<f64>,
    /// Fraction of adjacent pairs along the platoon whose speed peak
    /// decreases.
    pub decreasing_fraction: f64,
}

impl AttenuationProfile {
    /// Peak `|Δv_N| < ` peak `|Δv_2|`.
    pub fn tail_attenuated(&self) -> bool {
        match (self.speed_peaks.first(), self.speed_peaks.last()) {
            (Some(head), Some(tail)) => tail < head,
            _ => false,
        }
    }
}

/// Peak speed and gap errors of vehicles `2..=N` over `window`.
pub fn attenuation_profile(log: &TrajectoryLog, window: (f64, f64)) -> Result<AttenuationProfile> {
    let (t0, t1) = window;
    if !(t0 <= t1) || log.is_empty() || t0 > *log.time.last().unwrap() + 1e-9 {
        return Err(invalid("window", "window must lie within the log"));
    }
    let n = log.n_vehicles();
    if n < 3 {
        return Err(invalid("window", "attenuation needs vehicles 2..N"));
    }
    let samples: Vec<usize> = (0..log.len())
        .filter(|&k| log.time[k] >= t0 - 1e-9 && log.time[k] <= t1 + 1e-9)
        .collect();
    let vehicles: Vec<usize> = (2..n).collect();
    let mut speed_peaks = Vec::with_capacity(vehicles.len());
    let mut gap_peaks = Vec::with_capacity(vehicles.len());
    for &i in &vehicles {
        let s = &log.vehicles[i];
        let mut dv: f64 = 0.0;
        let mut gap: f64 = 0.0;
        for &k in &samples {
            dv = dv.max(s.dv[k].abs());
            let rho1 = match log.policy() {
                Policy::ConstantSpacing => 0.0,
                Policy::VariableSpacing => s.rho[0][k],
            };
            gap = gap.max((s.dp[k] + log.eq.dp_bar + rho1).abs());
        }
        speed_peaks.push(dv);
        gap_peaks.push(gap);
    }
    let decreasing = speed_peaks.windows(2).filter(|w| w[1] < w[0]).count();
    let decreasing_fraction = if speed_peaks.len() > 1 {
        decreasing as f64 / (speed_peaks.len() - 1) as f64
    } else {
        0.0
    };
    Ok(AttenuationProfile {
        window,
        vehicles,
        speed_peaks,
        gap_peaks,
        decreasing_fraction,
    })
}
