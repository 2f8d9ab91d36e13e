use crate::error::{invalid, Result};

use super::engine::{simulate_from, simulate};
use super::log::TrajectoryLog;
use super::Scenario;

/// Step-halving study of the integrator.
#[derive(Debug, Clone, PartialEq)]
pub struct StepHalvingReport {
    /// Time the compared runs start from.
    pub t_start: f64,
    /// Step sizes `dt, dt/2, dt/4`.
    pub steps: [f64; 3],
    /// Sup-norm differences `|x_dt − x_{dt/2}|` and `|x_{dt/2} − x_{dt/4}|`
    /// over all pair states on the coarse grid.
    pub diffs: [f64; 2],
    /// Whether any of the compared runs hit actuator or speed limits.
    pub saturated: bool,
}

impl StepHalvingReport {
    /// `diffs[0] / diffs[1]`; about 16 for a fourth-order scheme.
    pub fn ratio(&self) -> f64 {
        self.diffs[0] / self.diffs[1]
    }
}

fn saturated(log: &TrajectoryLog, scenario: &Scenario) -> bool {
    log.vehicles.iter().any(|s| {
        s.u_cmd
            .iter()
            .zip(&s.u_app)
            .any(|(c, a)| c.abs() >= scenario.limits.a_max || a != c)
    })
}

/// Last logged time at which a command reached the actuator limit or the
/// applied input differed from the command.
pub fn last_saturation_time(log: &TrajectoryLog, a_max: f64) -> Option<f64> {
    (0..log.len())
        .rev()
        .find(|&k| {
            log.vehicles
                .iter()
                .any(|s| s.u_cmd[k].abs() >= a_max || s.u_app[k] != s.u_cmd[k])
        })
        .map(|k| log.time[k])
}

fn sup_diff(coarse: &TrajectoryLog, fine: &TrajectoryLog) -> f64 {
    let factor = (fine.len() - 1) / (coarse.len() - 1);
    let mut m: f64 = 0.0;
    for k in 0..coarse.len() {
        let kf = k * factor;
        for (a, b) in coarse.vehicles.iter().zip(&fine.vehicles) {
            m = m.max((a.dp[k] - b.dp[kf]).abs()).max((a.dv[k] - b.dv[kf]).abs());
            for (ra, rb) in a.rho.iter().zip(&b.rho) {
                m = m.max((ra[k] - rb[kf]).abs());
            }
        }
    }
    m
}

/// Integrate the same scenario with `dt`, `dt/2` and `dt/4` and compare the
/// trajectories on the coarse grid.
///
/// With `smooth_only`, the comparison starts from the coarse run's state
/// `margin` seconds after the last saturation event, so the three runs see
/// the same smooth, non-saturated dynamics. The aggregates keep their own
/// refresh period, so all runs integrate the same sampled-data system.
pub fn step_halving(scenario: &Scenario, smooth_only: bool, margin: f64) -> Result<StepHalvingReport> {
    scenario.validate()?;
    let dt = scenario.dt;
    let coarse = simulate(scenario)?;
    let mut t_start = 0.0;
    let mut start_row = 0;
    if smooth_only {
        if let Some(t) = last_saturation_time(&coarse, scenario.limits.a_max) {
            let period = scenario.psi_sample_period.max(dt);
            t_start = ((t + margin) / period).ceil() * period;
            start_row = coarse.index_at(t_start);
            t_start = coarse.time[start_row];
        }
        if t_start >= scenario.t_end - 4.0 * dt {
            return Err(invalid("step_halving", "no smooth phase left before t_end"));
        }
    }
    let pairs: Vec<_> = (0..coarse.n_vehicles()).map(|i| coarse.pair(i, start_row)).collect();
    let mut logs = Vec::with_capacity(3);
    for level in 0..3 {
        let mut sc = scenario.clone();
        sc.dt = dt / f64::from(1u32 << level);
        if sc.psi_sample_period < dt {
            sc.psi_sample_period = dt;
        }
        let log = if t_start > 0.0 {
            simulate_from(&sc, t_start, &pairs)?
        } else {
            simulate(&sc)?
        };
        logs.push((log, sc));
    }
    let saturated = logs.iter().any(|(l, sc)| saturated(l, sc));
    Ok(StepHalvingReport {
        t_start,
        steps: [dt, dt / 2.0, dt / 4.0],
        diffs: [sup_diff(&logs[0].0, &logs[1].0), sup_diff(&logs[1].0, &logs[2].0)],
        saturated,
    })
}
