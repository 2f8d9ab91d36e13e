//! Macroscopic aggregates of the upstream platoon.
//!
//! Vehicle `i` receives the population mean and variance of the pair
//! distances and speed differences of vehicles `0..i`, folded into two
//! signed dispersion signals `ψ_Δp`, `ψ_Δv`. These drive the controller
//! filter `ρ̇ = Λρ + G_ρ ψ`.

use crate::error::{ensure_finite, invalid, Error, Result};
use crate::platoon::{CarFollowingState, EquilibriumSpec};

/// Population mean and variance of `Δp_j` and `Δv_j` over `j = 0..=i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateStats {
    pub mu_dp: f64,
    pub var_dp: f64,
    pub mu_dv: f64,
    pub var_dv: f64,
    pub count: usize,
}

/// Distance and speed-error macroscopic function values.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PsiPair {
    pub psi_dp: f64,
    pub psi_dv: f64,
}

impl PsiPair {
    pub const ZERO: PsiPair = PsiPair {
        psi_dp: 0.0,
        psi_dv: 0.0,
    };
}

/// Parameters of the `ρ` filter and the macroscopic functions.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoParams {
    /// Filter poles, one per controller state (`r` entries).
    pub lambdas: Vec<f64>,
    /// Weight on `ψ_Δp`.
    pub a: f64,
    /// Weight on `ψ_Δv`.
    pub b: f64,
    pub gamma_dp: f64,
    pub gamma_dv: f64,
}

impl RhoParams {
    pub fn validate(&self) -> Result<()> {
        ensure_finite(&self.lambdas, "rho.lambdas")?;
        ensure_finite(&[self.a, self.b, self.gamma_dp, self.gamma_dv], "rho params")?;
        if self.lambdas.is_empty() || self.lambdas.len() > 2 {
            return Err(Error::Dimension {
                expected: 2,
                got: self.lambdas.len(),
            });
        }
        if self.lambdas.iter().any(|&l| l <= 0.0) {
            return Err(invalid("lambda", "filter poles must be positive"));
        }
        if self.a < 0.0 || self.b < 0.0 {
            return Err(invalid("a/b", "weights must be non-negative"));
        }
        if self.gamma_dp <= 0.0 || self.gamma_dv <= 0.0 {
            return Err(invalid("gamma", "must be positive"));
        }
        Ok(())
    }

    /// Filter input `a ψ_Δp + b ψ_Δv`.
    pub fn weighted(&self, psi: PsiPair) -> f64 {
        self.a * psi.psi_dp + self.b * psi.psi_dv
    }

    /// `d = a γ_Δp + b γ_Δv`, the gain from upstream errors to the filter input.
    pub fn interconnection_gain(&self) -> f64 {
        self.a * self.gamma_dp + self.b * self.gamma_dv
    }
}

/// Sign with `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn mean_var(values: impl Iterator<Item = f64> + Clone, n: f64) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Two-pass population statistics with divisor `i + 1`.
pub fn aggregate_stats(pairs: &[CarFollowingState]) -> Result<AggregateStats> {
    if pairs.is_empty() {
        return Err(Error::Empty("aggregate_stats needs at least one pair"));
    }
    let n = pairs.len() as f64;
    let (mu_dp, var_dp) = mean_var(pairs.iter().map(|c| c.dp), n);
    let (mu_dv, var_dv) = mean_var(pairs.iter().map(|c| c.dv), n);
    Ok(AggregateStats {
        mu_dp,
        var_dp,
        mu_dv,
        var_dv,
        count: pairs.len(),
    })
}

/// `ψ_Δp = γ_Δp sign(Δp̄ + μ_Δp) σ_Δp`, `ψ_Δv = γ_Δv sign(μ_Δv) σ_Δv`.
pub fn psi(stats: &AggregateStats, eq: &EquilibriumSpec, params: &RhoParams) -> PsiPair {
    PsiPair {
        psi_dp: params.gamma_dp * sign(eq.dp_bar + stats.mu_dp) * stats.var_dp.sqrt(),
        psi_dv: params.gamma_dv * sign(stats.mu_dv) * stats.var_dv.sqrt(),
    }
}

/// The macroscopic input seen by every vehicle: entry `i` is `ψ^{i−1}`,
/// computed over pairs `0..i`, with `ψ^{−1} = 0` for vehicle 0.
pub fn upstream_psi(
    pairs: &[CarFollowingState],
    eq: &EquilibriumSpec,
    params: &RhoParams,
) -> Vec<PsiPair> {
    (0..pairs.len())
        .map(|i| match i {
            0 => PsiPair::ZERO,
            _ => {
                let stats = aggregate_stats(&pairs[..i]).expect("non-empty prefix");
                psi(&stats, eq, params)
            }
        })
        .collect()
}

/// `ρ̇ = −λρ + a ψ_Δp + b ψ_Δv` (constant-spacing filter, `r = 1`).
pub fn rho_derivative_cp(rho: f64, psi_prev: PsiPair, params: &RhoParams) -> Result<f64> {
    match params.lambdas.as_slice() {
        &[lambda] => Ok(-lambda * rho + params.weighted(psi_prev)),
        other => Err(Error::Dimension {
            expected: 1,
            got: other.len(),
        }),
    }
}

/// `ρ̇₁ = −λ₁ρ₁ + ρ₂`, `ρ̇₂ = −λ₂ρ₂ + a ψ_Δp + b ψ_Δv` (variable-spacing
/// filter, `r = 2`).
pub fn rho_derivative_vp(rho: [f64; 2], psi_prev: PsiPair, params: &RhoParams) -> Result<[f64; 2]> {
    match params.lambdas.as_slice() {
        &[l1, l2] => Ok([
            -l1 * rho[0] + rho[1],
            -l2 * rho[1] + params.weighted(psi_prev),
        ]),
        other => Err(Error::Dimension {
            expected: 2,
            got: other.len(),
        }),
    }
}

/// Steady-state gain `−Λ⁻¹G_ρ` of the filter, one row per controller state.
/// Each row maps a constant `(ψ_Δp, ψ_Δv)` input to that state's limit.
pub fn filter_dc_gain(params: &RhoParams) -> Result<Vec<[f64; 2]>> {
    match params.lambdas.as_slice() {
        &[l] => Ok(vec![[params.a / l, params.b / l]]),
        &[l1, l2] => Ok(vec![
            [params.a / (l1 * l2), params.b / (l1 * l2)],
            [params.a / l2, params.b / l2],
        ]),
        other => Err(Error::Dimension {
            expected: 2,
            got: other.len(),
        }),
    }
}

/// Which macroscopic quantity a bound refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Distance,
    Speed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LemmaBound {
    /// `|ψ^i| ≤ γ max_j |l_j + e_l|`
    Max,
    /// `|ψ^i| ≤ γ/√(i+1) Σ_j |l_j + e_l|`
    Sum,
    /// `a ψ_Δp + b ψ_Δv ≤ (a γ_Δp + b γ_Δv) max_j |χ̃_j|`
    Composition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaViolation {
    pub sample: usize,
    pub index: usize,
    pub quantity: Option<Quantity>,
    pub bound: LemmaBound,
    pub lhs: f64,
    pub rhs: f64,
}

const BOUND_RTOL: f64 = 1e-12;

fn exceeds(lhs: f64, rhs: f64) -> bool {
    lhs > rhs + BOUND_RTOL * (1.0 + rhs.abs())
}

/// Check the max- and sum-bounds on `ψ^i` for every prefix `0..=i` of every
/// sampled pair set, plus the composed bound on the filter input (with
/// `|χ̃_j|` taken over the pair coordinates). Returns the violations.
pub fn check_lemma2_bounds(
    history: &[Vec<CarFollowingState>],
    params: &RhoParams,
    eq: &EquilibriumSpec,
) -> Vec<LemmaViolation> {
    let mut out = Vec::new();
    for (sample, pairs) in history.iter().enumerate() {
        for i in 0..pairs.len() {
            let prefix = &pairs[..=i];
            let stats = aggregate_stats(prefix).expect("non-empty prefix");
            let p = psi(&stats, eq, params);
            let root = ((i + 1) as f64).sqrt();
            let dev_dp: Vec<f64> = prefix.iter().map(|c| (c.dp + eq.dp_bar).abs()).collect();
            let dev_dv: Vec<f64> = prefix.iter().map(|c| c.dv.abs()).collect();
            let checks = [
                (Quantity::Distance, p.psi_dp, params.gamma_dp, dev_dp),
                (Quantity::Speed, p.psi_dv, params.gamma_dv, dev_dv),
            ];
            for (quantity, value, gamma, devs) in checks {
                let max = devs.iter().copied().fold(0.0, f64::max);
                let sum: f64 = devs.iter().sum();
                let bounds = [
                    (LemmaBound::Max, gamma * max),
                    (LemmaBound::Sum, gamma / root * sum),
                ];
                for (bound, rhs) in bounds {
                    if exceeds(value.abs(), rhs) {
                        out.push(LemmaViolation {
                            sample,
                            index: i,
                            quantity: Some(quantity),
                            bound,
                            lhs: value.abs(),
                            rhs,
                        });
                    }
                }
            }
            let chi_max = prefix
                .iter()
                .map(|c| (c.dp + eq.dp_bar).hypot(c.dv))
                .fold(0.0, f64::max);
            let lhs = params.weighted(p);
            let rhs = params.interconnection_gain() * chi_max;
            if exceeds(lhs, rhs) {
                out.push(LemmaViolation {
                    sample,
                    index: i,
                    quantity: None,
                    bound: LemmaBound::Composition,
                    lhs,
                    rhs,
                });
            }
        }
    }
    out
}

/// Population variance never exceeds a quarter of the squared range.
pub fn check_variance_property(values: &[f64]) -> Result<bool> {
    if values.is_empty() {
        return Err(Error::Empty("check_variance_property needs values"));
    }
    ensure_finite(values, "check_variance_property")?;
    let n = values.len() as f64;
    let (_, var) = mean_var(values.iter().copied(), n);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let bound = 0.25 * (max - min) * (max - min);
    Ok(!exceeds(var, bound))
}
