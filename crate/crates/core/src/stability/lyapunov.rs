use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::{isolated_field, ControllerParams};
use crate::error::{invalid, Error, Result};
use crate::platoon::{ErrorState, Rho};

use super::constants::LyapunovConstants;

fn check_dim(params: &ControllerParams, err: &ErrorState) -> Result<()> {
    let r = params.policy.rho_dim();
    if err.rho.dim() != r {
        return Err(Error::Dimension {
            expected: r,
            got: err.rho.dim(),
        });
    }
    Ok(())
}

/// Sum-of-squares Lyapunov function.
///
/// Constant spacing: `½x² + ½(Δv + K_Δp x)² + ½ρ²` with `x = Δp + Δp̄`.
/// Variable spacing: `½e² + ½s² + ½ρ₁² + ½ρ₂²` with `e = x + ρ₁` the gap
/// tracking error and `s = Δv − Δv^r` the speed tracking error.
pub fn lyapunov_value(params: &ControllerParams, err: &ErrorState) -> Result<f64> {
    check_dim(params, err)?;
    let k = params.k_dp;
    Ok(match err.rho {
        Rho::Scalar(r) => {
            let s = err.dv + k * err.dp;
            0.5 * (err.dp * err.dp + s * s + r * r)
        }
        Rho::Pair([r1, r2]) => {
            let (e, s) = vp_tracking(params, err.dp, err.dv, r1, r2);
            0.5 * (e * e + s * s + r1 * r1 + r2 * r2)
        }
    })
}

fn vp_tracking(params: &ControllerParams, x: f64, dv: f64, r1: f64, r2: f64) -> (f64, f64) {
    let k = params.k_dp;
    let l1 = params.rho.lambdas[0];
    let e = x + r1;
    let s = dv - (l1 * r1 - r2 - k * e);
    (e, s)
}

/// Gradient of [`lyapunov_value`] with respect to `(Δp, Δv, ρ)`.
pub fn lyapunov_gradient(params: &ControllerParams, err: &ErrorState) -> Result<ErrorState> {
    check_dim(params, err)?;
    let k = params.k_dp;
    Ok(match err.rho {
        Rho::Scalar(r) => {
            let s = err.dv + k * err.dp;
            ErrorState {
                dp: err.dp + k * s,
                dv: s,
                rho: Rho::Scalar(r),
            }
        }
        Rho::Pair([r1, r2]) => {
            let l1 = params.rho.lambdas[0];
            let (e, s) = vp_tracking(params, err.dp, err.dv, r1, r2);
            // ∂e = (1, 0, 1, 0); ∂s = (K, 1, K − λ₁, 1).
            ErrorState {
                dp: e + k * s,
                dv: s,
                rho: Rho::Pair([e + (k - l1) * s + r1, s + r2]),
            }
        }
    })
}

/// `∇W(χ̃) · χ̃̇` for a given derivative of the error coordinates.
pub fn lyapunov_derivative(
    params: &ControllerParams,
    err: &ErrorState,
    derivative: &ErrorState,
) -> Result<f64> {
    check_dim(params, derivative)?;
    let g = lyapunov_gradient(params, err)?;
    Ok(g.to_vec()
        .iter()
        .zip(derivative.to_vec())
        .map(|(a, b)| a * b)
        .sum())
}

/// `−Ẇ` along the isolated closed-loop field.
pub fn isolated_decrease(params: &ControllerParams, err: &ErrorState) -> Result<f64> {
    let f = isolated_field(params, err)?;
    Ok(-lyapunov_derivative(params, err, &f)?)
}

/// Outcome of sampling `α̲|χ̃|² ≤ W(χ̃) ≤ ᾱ|χ̃|²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SandwichReport {
    pub samples: usize,
    pub lower_violations: usize,
    pub upper_violations: usize,
    /// Smallest observed `W/|χ̃|²`.
    pub min_ratio: f64,
    /// Largest observed `W/|χ̃|²`.
    pub max_ratio: f64,
}

impl SandwichReport {
    pub fn holds(&self) -> bool {
        self.lower_violations == 0 && self.upper_violations == 0
    }
}

fn random_error_state(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Result<ErrorState> {
    let v: Vec<f64> = (0..dim).map(|_| scale * rng.random_range(-1.0..=1.0)).collect();
    ErrorState::from_slice(&v)
}

/// Check the quadratic sandwich on `samples` seeded random error states
/// with entries uniform in `[−10, 10]`.
pub fn sandwich_check(
    params: &ControllerParams,
    consts: &LyapunovConstants,
    samples: usize,
    seed: u64,
) -> Result<SandwichReport> {
    let dim = 2 + params.policy.rho_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SandwichReport {
        samples: 0,
        lower_violations: 0,
        upper_violations: 0,
        min_ratio: f64::INFINITY,
        max_ratio: 0.0,
    };
    for _ in 0..samples {
        let err = random_error_state(&mut rng, dim, 10.0)?;
        let n2 = err.norm_sq();
        if n2 == 0.0 {
            continue;
        }
        let w = lyapunov_value(params, &err)?;
        let tol = 1e-12 * n2;
        report.samples += 1;
        report.min_ratio = report.min_ratio.min(w / n2);
        report.max_ratio = report.max_ratio.max(w / n2);
        if w < consts.alpha_lower * n2 - tol {
            report.lower_violations += 1;
        }
        if w > consts.alpha_upper * n2 + tol {
            report.upper_violations += 1;
        }
    }
    Ok(report)
}

/// Outcome of integrating one isolated pair (`ψ ≡ 0`, exact feedforward).
#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub w: Vec<f64>,
    pub dt: f64,
    /// Largest one-step increase of `W`, relative to `W(0)`.
    pub max_increase: f64,
    /// Samples where `W(t) > W(0) exp(−(α/ᾱ) t)` beyond tolerance.
    pub bound_violations: usize,
    /// Largest `W(t) / (W(0) exp(−(α/ᾱ) t))`.
    pub worst_bound_ratio: f64,
}

impl DecayReport {
    pub fn nonincreasing(&self, tol: f64) -> bool {
        self.max_increase <= tol
    }
}

/// RK4 integration of the isolated error dynamics from `err0`, tracking
/// `W` against the exponential envelope with rate `α/ᾱ` from `consts`.
pub fn isolated_decay(
    params: &ControllerParams,
    consts: &LyapunovConstants,
    err0: &ErrorState,
    t_end: f64,
    dt: f64,
    tol: f64,
) -> Result<DecayReport> {
    if !(dt > 0.0) || !(t_end > 0.0) {
        return Err(invalid("dt", "step and horizon must be positive"));
    }
    let n_steps = (t_end / dt - 1e-9).ceil() as usize;
    let field = |x: &[f64]| -> Result<Vec<f64>> {
        Ok(isolated_field(params, &ErrorState::from_slice(x)?)?.to_vec())
    };
    let mut x = err0.to_vec();
    let w0 = lyapunov_value(params, err0)?;
    let rate = consts.alpha / consts.alpha_upper;
    let mut report = DecayReport {
        w: vec![w0],
        dt,
        max_increase: 0.0,
        bound_violations: 0,
        worst_bound_ratio: if w0 > 0.0 { 1.0 } else { 0.0 },
    };
    let axpy = |x: &[f64], k: &[f64], h: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + h * b).collect() };
    for step in 1..=n_steps {
        let k1 = field(&x)?;
        let k2 = field(&axpy(&x, &k1, 0.5 * dt))?;
        let k3 = field(&axpy(&x, &k2, 0.5 * dt))?;
        let k4 = field(&axpy(&x, &k3, dt))?;
        for j in 0..x.len() {
            x[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        let w = lyapunov_value(params, &ErrorState::from_slice(&x)?)?;
        let prev = *report.w.last().unwrap();
        if w0 > 0.0 {
            report.max_increase = report.max_increase.max((w - prev) / w0);
            let envelope = w0 * (-rate * step as f64 * dt).exp();
            let ratio = w / envelope;
            report.worst_bound_ratio = report.worst_bound_ratio.max(ratio);
            if w > envelope + tol * w0 {
                report.bound_violations += 1;
            }
        }
        report.w.push(w);
    }
    Ok(report)
}
