//! Mesoscopic control laws.
//!
//! Both laws are stateless maps from the local pair state, the controller
//! state `ρ_i`, the upstream aggregate `ψ^{i−1}` and the predecessor's
//! communicated acceleration to a commanded acceleration. The `ρ` filter is
//! integrated by the simulator together with the pair states.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::aggregates::{rho_derivative_cp, rho_derivative_vp, PsiPair, RhoParams};
use crate::error::{ensure_finite, invalid, Error, Result};
use crate::platoon::{CarFollowingState, EquilibriumSpec, ErrorState, ExtendedPairState, Rho};

/// Spacing policy, which also fixes the controller-state dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    /// Constant desired distance, `r = 1`.
    ConstantSpacing,
    /// Distance reference shifted by `ρ₁`, `r = 2`.
    VariableSpacing,
}

impl Policy {
    pub fn rho_dim(self) -> usize {
        match self {
            Policy::ConstantSpacing => 1,
            Policy::VariableSpacing => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::ConstantSpacing => "constant",
            Policy::VariableSpacing => "variable",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" | "cp" | "constant-spacing" => Ok(Policy::ConstantSpacing),
            "variable" | "vp" | "variable-spacing" => Ok(Policy::VariableSpacing),
            _ => Err(invalid("policy", format!("unknown policy `{s}`"))),
        }
    }
}

/// Gains shared by every vehicle of the platoon.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerParams {
    pub policy: Policy,
    pub k_dp: f64,
    pub k_dv: f64,
    pub rho: RhoParams,
    /// ISS margin split `Υ`; only used by the stability analysis.
    pub upsilon: f64,
}

impl ControllerParams {
    /// Constant-spacing gains of the reference experiment.
    pub fn paper_constant_spacing() -> Self {
        Self {
            policy: Policy::ConstantSpacing,
            k_dp: 1.0,
            k_dv: 2.0,
            rho: RhoParams {
                lambdas: vec![1.5],
                a: 0.5,
                b: 0.5,
                gamma_dp: 0.5,
                gamma_dv: 0.5,
            },
            upsilon: 0.9,
        }
    }

    /// Variable-spacing gains of the reference experiment.
    pub fn paper_variable_spacing() -> Self {
        Self {
            policy: Policy::VariableSpacing,
            k_dp: 1.0,
            k_dv: 2.0,
            rho: RhoParams {
                lambdas: vec![1.5, 1.5],
                a: 1.0,
                b: 0.2,
                gamma_dp: 0.5,
                gamma_dv: 0.5,
            },
            upsilon: 0.9,
        }
    }

    pub fn paper(policy: Policy) -> Self {
        match policy {
            Policy::ConstantSpacing => Self::paper_constant_spacing(),
            Policy::VariableSpacing => Self::paper_variable_spacing(),
        }
    }

    /// Checks gains and filter parameters. `Υ` is not checked here: the
    /// analysis reports an out-of-range value instead of refusing it.
    pub fn validate(&self) -> Result<()> {
        ensure_finite(&[self.k_dp, self.k_dv, self.upsilon], "controller params")?;
        if self.k_dp <= 0.0 {
            return Err(invalid("k_dp", "gain must be positive"));
        }
        if self.k_dv <= 0.0 {
            return Err(invalid("k_dv", "gain must be positive"));
        }
        self.rho.validate()?;
        if self.rho.lambdas.len() != self.policy.rho_dim() {
            return Err(Error::Dimension {
                expected: self.policy.rho_dim(),
                got: self.rho.lambdas.len(),
            });
        }
        Ok(())
    }
}

/// Output of a control law evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlDecision {
    /// Commanded acceleration before saturation.
    pub u_cmd: f64,
    /// Distance reference `Δp^r`.
    pub dp_ref: f64,
    /// Relative-speed reference `Δv^r`.
    pub dv_ref: f64,
}

fn check_dim(policy: Policy, rho: &Rho) -> Result<()> {
    if rho.dim() != policy.rho_dim() {
        return Err(Error::Dimension {
            expected: policy.rho_dim(),
            got: rho.dim(),
        });
    }
    Ok(())
}

/// Distance reference: `−Δp̄` (constant) or `−Δp̄ − ρ₁` (variable).
pub fn spacing_reference(policy: Policy, eq: &EquilibriumSpec, rho: &Rho) -> Result<f64> {
    check_dim(policy, rho)?;
    Ok(match policy {
        Policy::ConstantSpacing => -eq.dp_bar,
        Policy::VariableSpacing => -eq.dp_bar - rho.first(),
    })
}

/// Constant-spacing law
/// `u = u_{i−1} + Δv̇^r − K_Δv (Δv − Δv^r) − (Δp − Δp^r) − ρ`
/// with `Δv^r = −K_Δp (Δp − Δp^r)` and `Δv̇^r = −K_Δp Δv`.
pub fn control_cp(
    chi: CarFollowingState,
    rho: f64,
    u_leader: f64,
    params: &ControllerParams,
    eq: &EquilibriumSpec,
) -> ControlDecision {
    let dp_ref = -eq.dp_bar;
    let e_p = chi.dp - dp_ref;
    let dv_ref = -params.k_dp * e_p;
    let dv_ref_dot = -params.k_dp * chi.dv;
    let u_cmd = u_leader + dv_ref_dot - params.k_dv * (chi.dv - dv_ref) - e_p - rho;
    ControlDecision {
        u_cmd,
        dp_ref,
        dv_ref,
    }
}

/// Variable-spacing law with `Δp^r = −Δp̄ − ρ₁` and
/// `Δv^r = λ₁ρ₁ − ρ₂ − K_Δp (Δp − Δp^r)`.
pub fn control_vp(
    chi: CarFollowingState,
    rho: [f64; 2],
    psi_prev: PsiPair,
    u_leader: f64,
    params: &ControllerParams,
    eq: &EquilibriumSpec,
) -> ControlDecision {
    let (l1, l2) = lambdas2(&params.rho);
    let [r1, r2] = rho;
    let k = params.k_dp;
    let dp_ref = -eq.dp_bar - r1;
    let e_p = chi.dp - dp_ref;
    let shaped = l1 * r1 - r2;
    let dv_ref = shaped - k * e_p;
    let u_cmd = u_leader - e_p - params.k_dv * (chi.dv - dv_ref) + (k - l1) * shaped + l2 * r2
        - k * chi.dv
        - params.rho.weighted(psi_prev);
    ControlDecision {
        u_cmd,
        dp_ref,
        dv_ref,
    }
}

fn lambdas2(rho: &RhoParams) -> (f64, f64) {
    match rho.lambdas.as_slice() {
        [l1, l2] => (*l1, *l2),
        [l] => (*l, *l),
        _ => (f64::NAN, f64::NAN),
    }
}

/// Evaluate the law selected by `params.policy`.
pub fn control(
    pair: &ExtendedPairState,
    psi_prev: PsiPair,
    u_leader: f64,
    params: &ControllerParams,
    eq: &EquilibriumSpec,
) -> Result<ControlDecision> {
    check_dim(params.policy, &pair.rho)?;
    Ok(match pair.rho {
        Rho::Scalar(r) => control_cp(pair.chi, r, u_leader, params, eq),
        Rho::Pair(r) => control_vp(pair.chi, r, psi_prev, u_leader, params, eq),
    })
}

/// Controller-state derivative for either policy.
pub fn rho_derivative(rho: &Rho, psi_prev: PsiPair, params: &RhoParams) -> Result<Rho> {
    Ok(match *rho {
        Rho::Scalar(r) => Rho::Scalar(rho_derivative_cp(r, psi_prev, params)?),
        Rho::Pair(r) => Rho::Pair(rho_derivative_vp(r, psi_prev, params)?),
    })
}

/// Isolated closed-loop field `f_cl(χ̃)` in error coordinates.
pub fn isolated_field(params: &ControllerParams, err: &ErrorState) -> Result<ErrorState> {
    check_dim(params.policy, &err.rho)?;
    let k = params.k_dp;
    let kv = params.k_dv;
    let x = err.dp;
    let dv = err.dv;
    Ok(match err.rho {
        Rho::Scalar(r) => {
            let lambda = params.rho.lambdas[0];
            let accel = -k * dv - kv * (dv + k * x) - x - r;
            ErrorState {
                dp: dv,
                dv: accel,
                rho: Rho::Scalar(-lambda * r),
            }
        }
        Rho::Pair([r1, r2]) => {
            let (l1, l2) = lambdas2(&params.rho);
            let e = x + r1;
            let shaped = l1 * r1 - r2;
            let accel = -e - kv * (dv - shaped + k * e) + (k - l1) * shaped + l2 * r2 - k * dv;
            ErrorState {
                dp: dv,
                dv: accel,
                rho: Rho::Pair([-l1 * r1 + r2, -l2 * r2]),
            }
        }
    })
}

/// Interconnection term `g_cl`: the filter input enters the `ρ` row
/// (constant spacing), or the `Δv̇` row negatively and the `ρ₂` row
/// positively (variable spacing).
pub fn interconnection(params: &ControllerParams, psi_prev: PsiPair) -> ErrorState {
    let g = params.rho.weighted(psi_prev);
    match params.policy {
        Policy::ConstantSpacing => ErrorState {
            dp: 0.0,
            dv: 0.0,
            rho: Rho::Scalar(g),
        },
        Policy::VariableSpacing => ErrorState {
            dp: 0.0,
            dv: -g,
            rho: Rho::Pair([0.0, g]),
        },
    }
}

/// `f_cl(χ̃) + g_cl(ψ)`: the closed-loop error dynamics of one pair when its
/// predecessor's acceleration is communicated exactly.
pub fn closed_loop_error_derivative(
    params: &ControllerParams,
    err: &ErrorState,
    psi_prev: PsiPair,
) -> Result<ErrorState> {
    let f = isolated_field(params, err)?;
    let g = interconnection(params, psi_prev);
    let rho: Vec<f64> = f
        .rho
        .as_slice()
        .iter()
        .zip(g.rho.as_slice())
        .map(|(a, b)| a + b)
        .collect();
    Ok(ErrorState {
        dp: f.dp + g.dp,
        dv: f.dv + g.dv,
        rho: Rho::from_slice(&rho)?,
    })
}

/// System matrix of the isolated (linear) error dynamics.
pub fn isolated_system_matrix(params: &ControllerParams) -> Result<DMatrix<f64>> {
    let n = 2 + params.policy.rho_dim();
    let mut a = DMatrix::zeros(n, n);
    for col in 0..n {
        let mut unit = vec![0.0; n];
        unit[col] = 1.0;
        let f = isolated_field(params, &ErrorState::from_slice(&unit)?)?;
        for (row, value) in f.to_vec().into_iter().enumerate() {
            a[(row, col)] = value;
        }
    }
    Ok(a)
}
