use std::fmt;

use nalgebra::DMatrix;

use crate::control::{ControllerParams, Policy};
use crate::error::{invalid, Error, Result};
use crate::platoon::ErrorState;

use super::lyapunov::{isolated_decrease, lyapunov_value};

/// Tolerance for eigenvalue positivity and matrix-entry comparisons.
pub const EIGEN_TOL: f64 = 1e-10;

/// Certificate constants of one spacing policy, as given by the closed-form
/// expressions for the quadratic Lyapunov function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovConstants {
    pub policy: Policy,
    /// `α̲` in `α̲|χ̃|² ≤ W(χ̃)`.
    pub alpha_lower: f64,
    /// `ᾱ` in `W(χ̃) ≤ ᾱ|χ̃|²`.
    pub alpha_upper: f64,
    /// Decrease rate `α` of the isolated subsystem.
    pub alpha: f64,
    /// Interconnection gain `d = aγ_Δp + bγ_Δv`.
    pub d: f64,
    /// ISS gain `γ̃ = √(ᾱ/α̲) · d / (αΥ)`.
    pub gamma_tilde: f64,
    pub upsilon: f64,
}

/// Reason a set of constants does not yield a certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainFlag {
    /// `α ≤ 0`.
    NonPositiveAlpha,
    /// `Υ ∉ (0, 1)`.
    UpsilonOutOfRange,
    /// `γ̃ ∉ (0, 1)`.
    GammaOutOfRange,
}

impl fmt::Display for DomainFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainFlag::NonPositiveAlpha => "alpha_nonpositive",
            DomainFlag::UpsilonOutOfRange => "upsilon_outside_0_1",
            DomainFlag::GammaOutOfRange => "gamma_tilde_outside_0_1",
        })
    }
}

impl LyapunovConstants {
    /// Overshoot constant `√(ᾱ/α̲)` of the class-KL bound `β(s, 0)`.
    pub fn overshoot(&self) -> f64 {
        (self.alpha_upper / self.alpha_lower).sqrt()
    }

    /// Coefficient `1/(1 − γ̃)` of the string-stability bound.
    pub fn chain_coefficient(&self) -> f64 {
        1.0 / (1.0 - self.gamma_tilde)
    }

    /// Ratio `d/(αΥ)` above which the conditional decrease applies.
    pub fn iss_threshold(&self) -> f64 {
        self.d / (self.alpha * self.upsilon)
    }

    /// Guaranteed decrease `(1 − Υ)α` inside the ISS region.
    pub fn iss_rate(&self) -> f64 {
        (1.0 - self.upsilon) * self.alpha
    }

    pub fn domain_flags(&self) -> Vec<DomainFlag> {
        let mut flags = Vec::new();
        if !(self.alpha > 0.0) {
            flags.push(DomainFlag::NonPositiveAlpha);
        }
        if !(self.upsilon > 0.0 && self.upsilon < 1.0) {
            flags.push(DomainFlag::UpsilonOutOfRange);
        }
        if !(self.gamma_tilde > 0.0 && self.gamma_tilde < 1.0) {
            flags.push(DomainFlag::GammaOutOfRange);
        }
        flags
    }

    /// `α > 0`, `Υ ∈ (0, 1)` and `γ̃ ∈ (0, 1)`.
    pub fn certificate_valid(&self) -> bool {
        self.domain_flags().is_empty()
    }
}

fn check_gains(params: &ControllerParams, expected: Policy) -> Result<()> {
    if params.policy != expected {
        return Err(Error::Mismatch(format!(
            "constants for {expected} spacing requested with {} spacing parameters",
            params.policy
        )));
    }
    params.validate()?;
    if params.rho.lambdas.iter().any(|&l| l <= 0.0) {
        return Err(invalid("lambda", "filter poles must be positive"));
    }
    Ok(())
}

fn finish(policy: Policy, alpha_lower: f64, alpha_upper: f64, alpha: f64, params: &ControllerParams) -> LyapunovConstants {
    let d = params.rho.interconnection_gain();
    let gamma_tilde = (alpha_upper / alpha_lower).sqrt() * d / (alpha * params.upsilon);
    LyapunovConstants {
        policy,
        alpha_lower,
        alpha_upper,
        alpha,
        d,
        gamma_tilde,
        upsilon: params.upsilon,
    }
}

/// Constant-spacing constants: `α̲ = 1/2`, `ᾱ = (1 + K_Δp²)/2`,
/// `α = min{K_Δv, K_Δp(1 + K_Δv K_Δp), λ}`.
pub fn constants_cp(params: &ControllerParams) -> Result<LyapunovConstants> {
    check_gains(params, Policy::ConstantSpacing)?;
    let (k, kv, lambda) = (params.k_dp, params.k_dv, params.rho.lambdas[0]);
    let alpha = kv.min(k * (1.0 + kv * k)).min(lambda);
    Ok(finish(Policy::ConstantSpacing, 0.5, 0.5 * (1.0 + k * k), alpha, params))
}

/// Variable-spacing constants: `α̲ = 1/2`,
/// `ᾱ = ½ max{1 + K_Δp², 2 + (λ₁ − K_Δp)²}`,
/// `α = min{K_Δp(1 + K_Δp K_Δv), K_Δv, K_Δp + λ₁ + K_Δv(λ₁ − K_Δp)², λ₂ + K_Δv}`.
pub fn constants_vp(params: &ControllerParams) -> Result<LyapunovConstants> {
    check_gains(params, Policy::VariableSpacing)?;
    let (k, kv) = (params.k_dp, params.k_dv);
    let (l1, l2) = (params.rho.lambdas[0], params.rho.lambdas[1]);
    let alpha_upper = 0.5 * (1.0 + k * k).max(2.0 + (l1 - k) * (l1 - k));
    let alpha = (k * (1.0 + k * kv))
        .min(kv)
        .min(k + l1 + kv * (l1 - k) * (l1 - k))
        .min(l2 + kv);
    Ok(finish(Policy::VariableSpacing, 0.5, alpha_upper, alpha, params))
}

pub fn constants(params: &ControllerParams) -> Result<LyapunovConstants> {
    match params.policy {
        Policy::ConstantSpacing => constants_cp(params),
        Policy::VariableSpacing => constants_vp(params),
    }
}

/// Entry where a printed certificate matrix disagrees with the quadratic
/// form it is meant to represent.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixDiscrepancy {
    /// `"P"` or `"Q"`.
    pub matrix: &'static str,
    pub row: usize,
    pub col: usize,
    /// Symmetrised printed entry.
    pub printed: f64,
    /// Entry derived from the sum-of-squares expression.
    pub derived: f64,
}

/// Bounds computed from the eigenvalues of the derived symmetric matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralBounds {
    /// `½ λ_min(∇²W)`.
    pub alpha_lower: f64,
    /// `½ λ_max(∇²W)`.
    pub alpha_upper: f64,
    /// `λ_min` of the symmetric matrix `S` with `−Ẇ = χ̃ᵀSχ̃` (isolated).
    pub alpha: f64,
}

/// The printed upper-triangular certificate matrices next to the symmetric
/// matrices derived from `W` and its isolated derivative.
#[derive(Debug, Clone)]
pub struct CertificateMatrices {
    pub policy: Policy,
    /// `W = ½ χ̃ᵀ P χ̃`, upper-triangular as printed.
    pub p_printed: DMatrix<f64>,
    /// `−Ẇ = χ̃ᵀ Q χ̃` (isolated), upper-triangular as printed.
    pub q_printed: DMatrix<f64>,
    /// `∇²W`; symmetric.
    pub w_hessian: DMatrix<f64>,
    /// Symmetric `S` with `−Ẇ = χ̃ᵀSχ̃` along the isolated field.
    pub decrease_matrix: DMatrix<f64>,
    pub diagonals_positive: bool,
    /// The closed-form `α` equals the smallest diagonal entry of `Q`.
    pub alpha_is_min_q_diagonal: bool,
    pub discrepancies: Vec<MatrixDiscrepancy>,
    pub spectral: SpectralBounds,
}

#[rustfmt::skip]
fn printed_p(params: &ControllerParams) -> DMatrix<f64> {
    let k = params.k_dp;
    match params.policy {
        Policy::ConstantSpacing => DMatrix::from_row_slice(
            3,
            3,
            &[1.0 + k * k, 2.0 * k, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        ),
        Policy::VariableSpacing => {
            let l1 = params.rho.lambdas[0];
            let p1 = 2.0 * k;
            let p2 = 2.0 * (1.0 + k * k - l1 * k);
            let p3 = 2.0 * (k - l1);
            DMatrix::from_row_slice(
                4,
                4,
                &[
                    1.0 + k * k, p1, p2, p1,
                    0.0, 1.0, p3, 2.0,
                    0.0, 0.0, 2.0 + (l1 - k) * (l1 - k), p3,
                    0.0, 0.0, 0.0, 2.0,
                ],
            )
        }
    }
}

#[rustfmt::skip]
fn printed_q(params: &ControllerParams) -> DMatrix<f64> {
    let (k, kv) = (params.k_dp, params.k_dv);
    match params.policy {
        Policy::ConstantSpacing => {
            let lambda = params.rho.lambdas[0];
            let p = k * (1.0 + kv * k);
            DMatrix::from_row_slice(
                3,
                3,
                &[p, 2.0 * kv * k, k, 0.0, kv, 1.0, 0.0, 0.0, lambda],
            )
        }
        Policy::VariableSpacing => {
            let (l1, l2) = (params.rho.lambdas[0], params.rho.lambdas[1]);
            let q1 = k * (1.0 + k * kv);
            let q2 = 2.0 * k * (1.0 + kv * (k - l1));
            let q3 = 2.0 * kv * (k - l1);
            let q4 = k + l1 + kv * (l1 - k) * (l1 - k);
            let q5 = 1.0 - 2.0 * kv * (k - l1);
            DMatrix::from_row_slice(
                4,
                4,
                &[
                    q1, 2.0 * k * kv, q2, 2.0 * k * kv,
                    0.0, kv, q3, 2.0 * kv,
                    0.0, 0.0, q4, q5,
                    0.0, 0.0, 0.0, l2 + kv,
                ],
            )
        }
    }
}

/// Hessian of a quadratic form by polarisation on unit vectors.
fn quadratic_hessian(n: usize, f: impl Fn(&[f64]) -> Result<f64>) -> Result<DMatrix<f64>> {
    let unit = |i: usize, j: usize| {
        let mut v = vec![0.0; n];
        v[i] += 1.0;
        v[j] += 1.0;
        v
    };
    let mut diag = vec![0.0; n];
    for (i, d) in diag.iter_mut().enumerate() {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        *d = f(&v)?;
    }
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        h[(i, i)] = 2.0 * diag[i];
        for j in (i + 1)..n {
            let off = f(&unit(i, j))? - diag[i] - diag[j];
            h[(i, j)] = off;
            h[(j, i)] = off;
        }
    }
    Ok(h)
}

fn symmetric_eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = m.clone().symmetric_eigen().eigenvalues;
    (eig.min(), eig.max())
}

/// Assemble the printed matrices, derive the symmetric matrices from the
/// sum-of-squares `W` and its isolated derivative, and list disagreements.
///
/// A printed upper-triangular `M` represents the quadratic form of
/// `(M + Mᵀ)/2`; that symmetrisation is what gets compared. `P` is compared
/// against `∇²W`, `Q` against `½∇²(−Ẇ)`.
pub fn certificate_matrices(params: &ControllerParams) -> Result<CertificateMatrices> {
    let consts = constants(params)?;
    let n = 2 + params.policy.rho_dim();
    let p_printed = printed_p(params);
    let q_printed = printed_q(params);
    let w_hessian = quadratic_hessian(n, |v| lyapunov_value(params, &ErrorState::from_slice(v)?))?;
    let decrease_matrix =
        quadratic_hessian(n, |v| isolated_decrease(params, &ErrorState::from_slice(v)?))? * 0.5;

    let mut discrepancies = Vec::new();
    for (name, printed, derived) in [("P", &p_printed, &w_hessian), ("Q", &q_printed, &decrease_matrix)] {
        let sym = (printed + printed.transpose()) * 0.5;
        for i in 0..n {
            for j in i..n {
                let (a, b) = (sym[(i, j)], derived[(i, j)]);
                if (a - b).abs() > EIGEN_TOL * (1.0 + b.abs()) {
                    discrepancies.push(MatrixDiscrepancy {
                        matrix: name,
                        row: i,
                        col: j,
                        printed: a,
                        derived: b,
                    });
                }
            }
        }
    }

    let p_diag: Vec<f64> = (0..n).map(|i| p_printed[(i, i)]).collect();
    let q_diag: Vec<f64> = (0..n).map(|i| q_printed[(i, i)]).collect();
    let diagonals_positive = p_diag.iter().chain(&q_diag).all(|&x| x > EIGEN_TOL);
    let q_min = q_diag.iter().copied().fold(f64::INFINITY, f64::min);
    let alpha_is_min_q_diagonal = (q_min - consts.alpha).abs() <= 1e-12;

    let (w_min, w_max) = symmetric_eigen_range(&w_hessian);
    let (s_min, _) = symmetric_eigen_range(&decrease_matrix);
    Ok(CertificateMatrices {
        policy: params.policy,
        p_printed,
        q_printed,
        w_hessian,
        decrease_matrix,
        diagonals_positive,
        alpha_is_min_q_diagonal,
        discrepancies,
        spectral: SpectralBounds {
            alpha_lower: 0.5 * w_min,
            alpha_upper: 0.5 * w_max,
            alpha: s_min,
        },
    })
}

impl CertificateMatrices {
    pub fn q_diagonal(&self) -> Vec<f64> {
        self.q_printed.diagonal().iter().copied().collect()
    }

    pub fn p_diagonal(&self) -> Vec<f64> {
        self.p_printed.diagonal().iter().copied().collect()
    }

    /// Constants with `α̲`, `ᾱ`, `α` replaced by the spectral values of the
    /// derived matrices; `d` and `Υ` are kept.
    pub fn spectral_constants(&self, base: &LyapunovConstants) -> LyapunovConstants {
        let SpectralBounds {
            alpha_lower,
            alpha_upper,
            alpha,
        } = self.spectral;
        LyapunovConstants {
            alpha_lower,
            alpha_upper,
            alpha,
            gamma_tilde: (alpha_upper / alpha_lower).sqrt() * base.d / (alpha * base.upsilon),
            ..*base
        }
    }
}
