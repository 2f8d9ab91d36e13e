use crate::aggregates::{upstream_psi, PsiPair};
use crate::control::control;
use crate::error::{ensure_finite, invalid, Error, Result};
use crate::platoon::{
    virtual_leader_advance, CarFollowingState, ExtendedPairState, Rho, VehicleState,
};

use super::log::TrajectoryLog;
use super::{draw_initial_conditions, reference_speed_at, Scenario};

/// Largest magnitude any state may reach before the run is declared divergent.
const DIVERGENCE_LIMIT: f64 = 1e6;

/// Offset used when comparing grid times against schedule and disturbance
/// edges, so `n * dt` rounding never shifts an edge by one step.
const EDGE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default)]
struct Actuation {
    u_cmd: f64,
    u_app: f64,
}

struct Layout {
    n: usize,
    stride: usize,
}

impl Layout {
    fn pair(&self, y: &[f64], i: usize) -> ExtendedPairState {
        let base = i * self.stride;
        let chi = CarFollowingState::new(y[base], y[base + 1]);
        let rho = match self.stride {
            3 => Rho::Scalar(y[base + 2]),
            _ => Rho::Pair([y[base + 2], y[base + 3]]),
        };
        ExtendedPairState::new(chi, rho)
    }

    fn chis(&self, y: &[f64]) -> Vec<CarFollowingState> {
        (0..self.n)
            .map(|i| CarFollowingState::new(y[i * self.stride], y[i * self.stride + 1]))
            .collect()
    }
}

/// Inputs held fixed over one integration step.
struct StepInputs<'a> {
    psi: &'a [PsiPair],
    leader_v: f64,
    /// Disturbances switched on for this step.
    active: Vec<usize>,
}

struct Model<'a> {
    scenario: &'a Scenario,
    layout: Layout,
}

impl Model<'_> {
    /// Evaluates the coupled vector field in index order. Each vehicle
    /// receives its predecessor's saturated command as feedforward; the
    /// plant applies the command plus any disturbance, saturated again.
    fn rhs(&self, t: f64, y: &[f64], inputs: &StepInputs, dy: &mut [f64], act: &mut [Actuation]) -> Result<()> {
        let sc = self.scenario;
        let limits = &sc.limits;
        let mut u_bcast_prev = 0.0;
        let mut u_app_prev = 0.0;
        let mut v_abs = inputs.leader_v;
        for i in 0..self.layout.n {
            let pair = self.layout.pair(y, i);
            v_abs += pair.chi.dv;
            let decision = control(&pair, inputs.psi[i], u_bcast_prev, &sc.controller, &sc.eq)?;
            let w: f64 = inputs
                .active
                .iter()
                .map(|&k| &sc.disturbances[k])
                .filter(|d| d.target == i)
                .map(|d| d.value(t))
                .sum();
            let mut u_app = limits.saturate(decision.u_cmd + w);
            if (v_abs <= limits.v_min && u_app < 0.0) || (v_abs >= limits.v_max && u_app > 0.0) {
                u_app = 0.0;
            }
            let base = i * self.layout.stride;
            dy[base] = pair.chi.dv;
            dy[base + 1] = u_app - u_app_prev;
            let rho_dot = crate::control::rho_derivative(&pair.rho, inputs.psi[i], &sc.controller.rho)?;
            for (k, r) in rho_dot.as_slice().iter().enumerate() {
                dy[base + 2 + k] = *r;
            }
            act[i] = Actuation {
                u_cmd: decision.u_cmd,
                u_app,
            };
            u_bcast_prev = limits.saturate(decision.u_cmd);
            u_app_prev = u_app;
        }
        Ok(())
    }

    fn rk4_step(&self, t: f64, dt: f64, y: &mut [f64], inputs: &StepInputs, scratch: &mut Rk4Scratch) -> Result<()> {
        let Rk4Scratch { k1, k2, k3, k4, tmp, act } = scratch;
        self.rhs(t, y, inputs, k1, act)?;
        for j in 0..y.len() {
            tmp[j] = y[j] + 0.5 * dt * k1[j];
        }
        self.rhs(t + 0.5 * dt, tmp, inputs, k2, act)?;
        for j in 0..y.len() {
            tmp[j] = y[j] + 0.5 * dt * k2[j];
        }
        self.rhs(t + 0.5 * dt, tmp, inputs, k3, act)?;
        for j in 0..y.len() {
            tmp[j] = y[j] + dt * k3[j];
        }
        self.rhs(t + dt, tmp, inputs, k4, act)?;
        for j in 0..y.len() {
            y[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        Ok(())
    }

    /// Clamp absolute speeds to `[v_min, v_max]` and rebuild the pair speeds.
    fn project_speeds(&self, y: &mut [f64], leader_v: f64) {
        let limits = &self.scenario.limits;
        let stride = self.layout.stride;
        let mut v = leader_v;
        let mut speeds = Vec::with_capacity(self.layout.n);
        let mut clamped = false;
        for i in 0..self.layout.n {
            v += y[i * stride + 1];
            let c = v.clamp(limits.v_min, limits.v_max);
            clamped |= c != v;
            speeds.push(c);
        }
        if !clamped {
            return;
        }
        let mut prev = leader_v;
        for (i, &s) in speeds.iter().enumerate() {
            y[i * stride + 1] = s - prev;
            prev = s;
        }
    }
}

struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
    act: Vec<Actuation>,
}

impl Rk4Scratch {
    fn new(len: usize, n: usize) -> Self {
        Self {
            k1: vec![0.0; len],
            k2: vec![0.0; len],
            k3: vec![0.0; len],
            k4: vec![0.0; len],
            tmp: vec![0.0; len],
            act: vec![Actuation::default(); n],
        }
    }
}

/// Result of a run: the log plus the final leader state.
#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub log: TrajectoryLog,
    pub leader: VehicleState,
}

/// Integrate the closed-loop platoon over the scenario horizon with
/// classical RK4.
///
/// Per step: the leader speed is looked up (a schedule change is a jump in
/// `Δv_0`), the aggregates `ψ^{i−1}` are refreshed when due and then held,
/// and the coupled pair and controller states are advanced. Speeds are
/// projected onto `[v_min, v_max]` after each step. Runs are bit-for-bit
/// deterministic for a given scenario.
pub fn simulate(scenario: &Scenario) -> Result<TrajectoryLog> {
    simulate_with_leader(scenario).map(|o| o.log)
}

/// Like [`simulate`], also returning the virtual leader's final state.
pub fn simulate_with_leader(scenario: &Scenario) -> Result<SimulationOutcome> {
    scenario.validate()?;
    let ics = draw_initial_conditions(&scenario.ic, &scenario.eq, scenario.n_vehicles);
    let r = scenario.controller.policy.rho_dim();
    let pairs: Vec<_> = ics
        .into_iter()
        .map(|chi| ExtendedPairState::new(chi, Rho::zeros(r).expect("rho dimension")))
        .collect();
    run(scenario, 0.0, &pairs)
}

/// Integrate from an explicit state at time `t0` up to the scenario horizon,
/// ignoring the scenario's initial-condition spec. The time grid is
/// `t0 + k·dt`.
pub fn simulate_from(scenario: &Scenario, t0: f64, pairs: &[ExtendedPairState]) -> Result<TrajectoryLog> {
    scenario.validate()?;
    if !t0.is_finite() || t0 < 0.0 || t0 >= scenario.t_end {
        return Err(invalid("t0", "start time must lie in [0, t_end)"));
    }
    if pairs.len() != scenario.n_vehicles {
        return Err(Error::Dimension {
            expected: scenario.n_vehicles,
            got: pairs.len(),
        });
    }
    let r = scenario.controller.policy.rho_dim();
    for p in pairs {
        if p.rho.dim() != r {
            return Err(Error::Dimension {
                expected: r,
                got: p.rho.dim(),
            });
        }
        ensure_finite(&[p.chi.dp, p.chi.dv], "initial state")?;
        ensure_finite(p.rho.as_slice(), "initial state")?;
    }
    run(scenario, t0, pairs).map(|o| o.log)
}

fn run(scenario: &Scenario, t0: f64, pairs: &[ExtendedPairState]) -> Result<SimulationOutcome> {
    let n = scenario.n_vehicles;
    let r = scenario.controller.policy.rho_dim();
    let layout = Layout { n, stride: 2 + r };
    let model = Model { scenario, layout };
    let dt = scenario.dt;
    let n_steps = ((scenario.t_end - t0) / dt - 1e-9).ceil() as usize;
    let psi_stride = scenario.psi_stride()?;

    let stride = model.layout.stride;
    let mut y = vec![0.0; n * stride];
    for (i, p) in pairs.iter().enumerate() {
        y[i * stride] = p.chi.dp;
        y[i * stride + 1] = p.chi.dv;
        y[i * stride + 2..(i + 1) * stride].copy_from_slice(p.rho.as_slice());
    }

    let v0 = reference_speed_at(&scenario.speed_schedule, t0 + EDGE_EPS);
    let mut leader = VehicleState::new(0.0, v0);
    let mut log = TrajectoryLog::with_capacity(scenario, n_steps + 1);
    let mut psi = vec![PsiPair::ZERO; n];
    let mut scratch = Rk4Scratch::new(y.len(), n);
    let mut act = vec![Actuation::default(); n];
    let mut dy = vec![0.0; y.len()];

    for step in 0..=n_steps {
        let t = t0 + step as f64 * dt;
        let v_ref = reference_speed_at(&scenario.speed_schedule, t + EDGE_EPS);
        if v_ref != leader.v {
            y[1] += leader.v - v_ref;
            leader.v = v_ref;
        }
        if step % psi_stride == 0 {
            psi = upstream_psi(&model.layout.chis(&y), &scenario.eq, &scenario.controller.rho);
        }
        let active = scenario
            .disturbances
            .iter()
            .enumerate()
            .filter(|(_, d)| d.is_active(t + EDGE_EPS))
            .map(|(k, _)| k)
            .collect();
        let inputs = StepInputs {
            psi: &psi,
            leader_v: leader.v,
            active,
        };

        model.rhs(t, &y, &inputs, &mut dy, &mut act)?;
        log.push_row(t, v_ref, |i| {
            let pair = model.layout.pair(&y, i);
            (pair, act[i].u_cmd, act[i].u_app, psi[i])
        });

        if step == n_steps {
            break;
        }
        model.rk4_step(t, dt, &mut y, &inputs, &mut scratch)?;
        model.project_speeds(&mut y, leader.v);
        leader = virtual_leader_advance(leader, v_ref, dt)?;

        if let Some(j) = y.iter().position(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            return Err(Error::Diverged {
                step: step + 1,
                t: t + dt,
                vehicle: j / stride,
            });
        }
    }
    Ok(SimulationOutcome { log, leader })
}
