//! Closed-loop platoon simulation.
//!
//! A [`Scenario`] fixes the platoon size, time grid, leader speed schedule,
//! external disturbances, seeded initial conditions, actuator limits and the
//! controller. [`simulate`] integrates all pair and controller states with a
//! fixed-step RK4 scheme and returns a [`TrajectoryLog`].

mod convergence;
mod engine;
mod log;

pub use convergence::{last_saturation_time, step_halving, StepHalvingReport};
pub use engine::{simulate, simulate_from, simulate_with_leader, SimulationOutcome};
pub use log::{TrajectoryLog, VehicleSeries};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::{ControllerParams, Policy};
use crate::error::{ensure_finite, invalid, Result};
use crate::platoon::{CarFollowingState, EquilibriumSpec, Limits};

/// Start of a constant-speed interval of the leader reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedBreakpoint {
    pub t_start: f64,
    pub v_ref: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DisturbanceKind {
    Pulse,
    /// `A sin(ω (t − t_start))`, `ω` in rad/s.
    Sinusoid { frequency: f64 },
}

/// Acceleration disturbance acting on one vehicle's plant. It is never
/// communicated to the follower.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disturbance {
    pub target: usize,
    pub kind: DisturbanceKind,
    /// m/s².
    pub amplitude: f64,
    pub t_start: f64,
    pub t_end: f64,
}

impl Disturbance {
    pub fn pulse(target: usize, amplitude: f64, t_start: f64, t_end: f64) -> Self {
        Self {
            target,
            kind: DisturbanceKind::Pulse,
            amplitude,
            t_start,
            t_end,
        }
    }

    pub fn sinusoid(target: usize, amplitude: f64, frequency: f64, t_start: f64, t_end: f64) -> Self {
        Self {
            target,
            kind: DisturbanceKind::Sinusoid { frequency },
            amplitude,
            t_start,
            t_end,
        }
    }

    /// Whether the disturbance is on during `[t_start, t_end)`.
    pub fn is_active(&self, t: f64) -> bool {
        self.t_start <= t && t < self.t_end
    }

    /// Disturbance value at `t`, ignoring the activity window.
    pub fn value(&self, t: f64) -> f64 {
        match self.kind {
            DisturbanceKind::Pulse => self.amplitude,
            DisturbanceKind::Sinusoid { frequency } => {
                self.amplitude * (frequency * (t - self.t_start)).sin()
            }
        }
    }

    fn validate(&self, n_vehicles: usize) -> Result<()> {
        ensure_finite(&[self.amplitude, self.t_start, self.t_end], "disturbance")?;
        if self.target >= n_vehicles {
            return Err(invalid("disturbance.target", format!("vehicle {} does not exist", self.target)));
        }
        if self.t_start >= self.t_end {
            return Err(invalid("disturbance.t_end", "must be after t_start"));
        }
        if let DisturbanceKind::Sinusoid { frequency } = self.kind {
            ensure_finite(&[frequency], "disturbance.frequency")?;
        }
        Ok(())
    }
}

/// Seeded uniform draw around the equilibrium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialConditionSpec {
    pub seed: u64,
    pub dp_halfwidth: f64,
    pub dv_halfwidth: f64,
}

impl Default for InitialConditionSpec {
    fn default() -> Self {
        Self {
            seed: 42,
            dp_halfwidth: 2.0,
            dv_halfwidth: 1.0,
        }
    }
}

impl InitialConditionSpec {
    pub fn at_equilibrium() -> Self {
        Self {
            seed: 0,
            dp_halfwidth: 0.0,
            dv_halfwidth: 0.0,
        }
    }
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// `N + 1`.
    pub n_vehicles: usize,
    pub dt: f64,
    pub t_end: f64,
    /// Refresh period of the aggregates `ψ`; they are held in between.
    pub psi_sample_period: f64,
    pub speed_schedule: Vec<SpeedBreakpoint>,
    pub disturbances: Vec<Disturbance>,
    pub ic: InitialConditionSpec,
    pub limits: Limits,
    pub controller: ControllerParams,
    pub eq: EquilibriumSpec,
}

impl Scenario {
    /// The four-phase experiment with 31 vehicles over 60 s: convergence,
    /// leader speed steps, an uncommunicated pulse on vehicle 0, then a
    /// sinusoidal disturbance with further speed steps.
    pub fn paper(policy: Policy) -> Self {
        Self {
            n_vehicles: 31,
            dt: 0.01,
            t_end: 60.0,
            psi_sample_period: 0.01,
            speed_schedule: vec![
                SpeedBreakpoint { t_start: 0.0, v_ref: 14.0 },
                SpeedBreakpoint { t_start: 10.0, v_ref: 25.0 },
                SpeedBreakpoint { t_start: 20.0, v_ref: 20.0 },
                SpeedBreakpoint { t_start: 35.0, v_ref: 14.0 },
                SpeedBreakpoint { t_start: 45.0, v_ref: 25.0 },
            ],
            disturbances: vec![
                Disturbance::pulse(0, 4.0, 25.0, 30.0),
                Disturbance::sinusoid(0, 2.0, 1.0, 35.0, 60.0),
            ],
            ic: InitialConditionSpec::default(),
            limits: Limits::default(),
            controller: ControllerParams::paper(policy),
            eq: EquilibriumSpec { dp_bar: 20.0, v_bar: 14.0 },
        }
    }

    /// Constant leader speed, no disturbances.
    pub fn disturbance_free(policy: Policy) -> Self {
        Self {
            speed_schedule: vec![SpeedBreakpoint { t_start: 0.0, v_ref: 14.0 }],
            disturbances: Vec::new(),
            ..Self::paper(policy)
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite(&[self.dt, self.t_end, self.psi_sample_period], "scenario")?;
        if self.n_vehicles < 2 {
            return Err(invalid("n_vehicles", "need at least one follower (N >= 1)"));
        }
        if self.dt <= 0.0 {
            return Err(invalid("dt", "time step must be positive"));
        }
        if self.t_end <= 0.0 {
            return Err(invalid("t_end", "horizon must be positive"));
        }
        if self.psi_sample_period <= 0.0 {
            return Err(invalid("psi_sample_period", "must be positive"));
        }
        self.psi_stride()?;
        if self.speed_schedule.is_empty() {
            return Err(invalid("speed_schedule", "needs at least one breakpoint"));
        }
        for w in self.speed_schedule.windows(2) {
            if w[1].t_start <= w[0].t_start {
                return Err(invalid("speed_schedule", "breakpoint times must be strictly increasing"));
            }
        }
        for bp in &self.speed_schedule {
            ensure_finite(&[bp.t_start, bp.v_ref], "speed_schedule")?;
            if bp.v_ref <= 0.0 {
                return Err(invalid("speed_schedule", "reference speeds must be positive"));
            }
        }
        for d in &self.disturbances {
            d.validate(self.n_vehicles)?;
        }
        if self.ic.dp_halfwidth < 0.0 || self.ic.dv_halfwidth < 0.0 {
            return Err(invalid("ic", "half-widths must be non-negative"));
        }
        EquilibriumSpec::new(self.eq.dp_bar, self.eq.v_bar)?;
        Limits::new(self.limits.a_max, self.limits.v_max, self.limits.v_min)?;
        self.controller.validate()
    }

    /// Number of integration steps per aggregate refresh.
    pub fn psi_stride(&self) -> Result<usize> {
        let ratio = self.psi_sample_period / self.dt;
        if ratio < 1.0 + 1e-9 {
            return Ok(1);
        }
        let stride = ratio.round();
        if (ratio - stride).abs() > 1e-6 {
            return Err(invalid(
                "psi_sample_period",
                format!("must be a multiple of dt = {}", self.dt),
            ));
        }
        Ok(stride as usize)
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil() as usize
    }
}

/// Piecewise-constant lookup with left-closed intervals; times before the
/// first breakpoint take the first value.
pub fn reference_speed_at(schedule: &[SpeedBreakpoint], t: f64) -> f64 {
    schedule
        .iter()
        .take_while(|bp| bp.t_start <= t)
        .last()
        .or_else(|| schedule.first())
        .map(|bp| bp.v_ref)
        .unwrap_or(f64::NAN)
}

/// Uniform draws `Δp_i ∈ [−Δp̄ − h_p, −Δp̄ + h_p]`, `Δv_i ∈ [−h_v, h_v]` for
/// every vehicle, vehicle 0 included. Controller states start at zero.
pub fn draw_initial_conditions(
    spec: &InitialConditionSpec,
    eq: &EquilibriumSpec,
    n: usize,
) -> Vec<CarFollowingState> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut uniform = |h: f64| if h > 0.0 { rng.random_range(-h..=h) } else { 0.0 };
    (0..n)
        .map(|_| {
            let dp = -eq.dp_bar + uniform(spec.dp_halfwidth);
            let dv = uniform(spec.dv_halfwidth);
            CarFollowingState::new(dp, dv)
        })
        .collect()
}
