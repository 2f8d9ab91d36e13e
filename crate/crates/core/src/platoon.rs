//! Vehicle and car-following state, the virtual leader, and the platoon
//! equilibrium.
//!
//! Every vehicle is a double integrator `ṗ = v, v̇ = u`. The state of record
//! is the car-following pair `χ_i = x_i − x_{i−1}` of each vehicle with its
//! predecessor; vehicle 0 follows a virtual, non-communicating leader that
//! drives at the scheduled reference speed with zero acceleration.
//! Absolute positions and speeds are derived views.

use crate::error::{ensure_finite, invalid, Error, Result};

/// Absolute state of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleState {
    /// Position (m).
    pub p: f64,
    /// Velocity (m/s).
    pub v: f64,
}

impl VehicleState {
    pub fn new(p: f64, v: f64) -> Self {
        Self { p, v }
    }
}

/// Relative state of a follower with respect to its predecessor.
///
/// `dp` is negative while the follower is behind its leader; the physical
/// gap is `-dp`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CarFollowingState {
    pub dp: f64,
    pub dv: f64,
}

impl CarFollowingState {
    pub fn new(dp: f64, dv: f64) -> Self {
        Self { dp, dv }
    }

    /// Pair state of `follower` with respect to `leader`.
    pub fn between(follower: &VehicleState, leader: &VehicleState) -> Self {
        Self {
            dp: follower.p - leader.p,
            dv: follower.v - leader.v,
        }
    }

    /// The pair at rest at the desired distance.
    pub fn equilibrium(eq: &EquilibriumSpec) -> Self {
        Self {
            dp: -eq.dp_bar,
            dv: 0.0,
        }
    }

    pub fn gap(&self) -> f64 {
        -self.dp
    }
}

/// Controller state `ρ_i`; its dimension is fixed by the spacing policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rho {
    /// `r = 1`, constant-spacing policy.
    Scalar(f64),
    /// `r = 2`, variable-spacing policy.
    Pair([f64; 2]),
}

impl Rho {
    pub fn zeros(dim: usize) -> Result<Self> {
        match dim {
            1 => Ok(Rho::Scalar(0.0)),
            2 => Ok(Rho::Pair([0.0, 0.0])),
            got => Err(Error::Dimension { expected: 2, got }),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Rho::Scalar(_) => 1,
            Rho::Pair(_) => 2,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        match self {
            Rho::Scalar(r) => std::slice::from_ref(r),
            Rho::Pair(r) => r,
        }
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        match *values {
            [r] => Ok(Rho::Scalar(r)),
            [r1, r2] => Ok(Rho::Pair([r1, r2])),
            _ => Err(Error::Dimension {
                expected: 2,
                got: values.len(),
            }),
        }
    }

    /// First component; this is `ρ^M` for both policies.
    pub fn first(&self) -> f64 {
        self.as_slice()[0]
    }
}

/// Pair state extended with the controller state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtendedPairState {
    pub chi: CarFollowingState,
    pub rho: Rho,
}

impl ExtendedPairState {
    pub fn new(chi: CarFollowingState, rho: Rho) -> Self {
        Self { chi, rho }
    }

    /// Deviation from the extended equilibrium `(χ̄, 0_r)`.
    pub fn error(&self, eq: &EquilibriumSpec) -> ErrorState {
        ErrorState {
            dp: self.chi.dp + eq.dp_bar,
            dv: self.chi.dv,
            rho: self.rho,
        }
    }
}

/// Error coordinates `χ̃_i = χ̂_i − χ̂_{e,i}` of one pair: distance error
/// `Δp_i + Δp̄`, speed error `Δv_i`, and the controller state.
///
/// Also used to carry time derivatives of the same coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorState {
    pub dp: f64,
    pub dv: f64,
    pub rho: Rho,
}

impl ErrorState {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.dp, self.dv];
        v.extend_from_slice(self.rho.as_slice());
        v
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() < 3 {
            return Err(Error::Dimension {
                expected: 3,
                got: values.len(),
            });
        }
        Ok(Self {
            dp: values[0],
            dv: values[1],
            rho: Rho::from_slice(&values[2..])?,
        })
    }

    pub fn norm_sq(&self) -> f64 {
        self.dp * self.dp
            + self.dv * self.dv
            + self.rho.as_slice().iter().map(|r| r * r).sum::<f64>()
    }

    /// Euclidean norm `|χ̃_i|`.
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn to_extended(&self, eq: &EquilibriumSpec) -> ExtendedPairState {
        ExtendedPairState {
            chi: CarFollowingState::new(self.dp - eq.dp_bar, self.dv),
            rho: self.rho,
        }
    }
}

/// Desired constant gap and leader speed defining `χ̄ = (−Δp̄, 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumSpec {
    pub dp_bar: f64,
    pub v_bar: f64,
}

impl EquilibriumSpec {
    pub fn new(dp_bar: f64, v_bar: f64) -> Result<Self> {
        ensure_finite(&[dp_bar, v_bar], "equilibrium")?;
        if dp_bar <= 0.0 {
            return Err(invalid("dp_bar", "desired gap must be positive"));
        }
        if v_bar <= 0.0 {
            return Err(invalid("v_bar", "leader speed must be positive"));
        }
        Ok(Self { dp_bar, v_bar })
    }
}

/// Actuation and speed limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Limits {
    pub a_max: f64,
    pub v_max: f64,
    pub v_min: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            a_max: 4.0,
            v_max: 36.0,
            v_min: 0.0,
        }
    }
}

impl Limits {
    pub fn new(a_max: f64, v_max: f64, v_min: f64) -> Result<Self> {
        ensure_finite(&[a_max, v_max, v_min], "limits")?;
        if a_max <= 0.0 {
            return Err(invalid("a_max", "must be positive"));
        }
        if !(0.0 <= v_min && v_min < v_max) {
            return Err(invalid("v_min", "need 0 <= v_min < v_max"));
        }
        Ok(Self { a_max, v_max, v_min })
    }

    pub fn saturate(&self, u: f64) -> f64 {
        u.clamp(-self.a_max, self.a_max)
    }
}

/// Lumped platoon state: one extended pair per vehicle `0..=N` plus the
/// virtual leader.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatoonState {
    pub pairs: Vec<ExtendedPairState>,
    pub leader: VehicleState,
    pub absolute: Option<Vec<VehicleState>>,
}

impl PlatoonState {
    pub fn new(pairs: Vec<ExtendedPairState>, leader: VehicleState) -> Self {
        Self {
            pairs,
            leader,
            absolute: None,
        }
    }

    /// Number of vehicles `N + 1`.
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn with_absolute(mut self) -> Self {
        self.absolute = Some(reconstruct_absolute(&self));
        self
    }
}

/// Time derivative of a car-following pair: `(Δv, u_follower − u_leader)`.
pub fn pair_derivative(
    chi: CarFollowingState,
    u_follower: f64,
    u_leader: f64,
) -> Result<CarFollowingState> {
    ensure_finite(&[chi.dp, chi.dv, u_follower, u_leader], "pair_derivative")?;
    Ok(CarFollowingState {
        dp: chi.dv,
        dv: u_follower - u_leader,
    })
}

/// Advance the virtual leader by `dt` at the scheduled speed `v_bar`.
///
/// The leader never accelerates: a schedule change is a jump in its speed.
pub fn virtual_leader_advance(leader: VehicleState, v_bar: f64, dt: f64) -> Result<VehicleState> {
    ensure_finite(&[leader.p, leader.v, v_bar, dt], "virtual_leader_advance")?;
    if dt <= 0.0 {
        return Err(invalid("dt", "time step must be positive"));
    }
    Ok(VehicleState {
        p: leader.p + v_bar * dt,
        v: v_bar,
    })
}

/// Absolute vehicle states `x_i = x_{i−1} + χ_i`, starting from the leader.
pub fn reconstruct_absolute(platoon: &PlatoonState) -> Vec<VehicleState> {
    let mut prev = platoon.leader;
    platoon
        .pairs
        .iter()
        .map(|pair| {
            prev = VehicleState {
                p: prev.p + pair.chi.dp,
                v: prev.v + pair.chi.dv,
            };
            prev
        })
        .collect()
}

/// Inverse of [`reconstruct_absolute`].
pub fn pairs_from_absolute(leader: &VehicleState, vehicles: &[VehicleState]) -> Vec<CarFollowingState> {
    let mut prev = leader;
    vehicles
        .iter()
        .map(|x| {
            let chi = CarFollowingState::between(x, prev);
            prev = x;
            chi
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn pair_derivative_examples() {
        let d = pair_derivative(CarFollowingState::new(-20.0, 0.0), 0.0, 0.0).unwrap();
        assert_eq!(d, CarFollowingState::new(0.0, 0.0));

        let d = pair_derivative(CarFollowingState::new(-20.0, 1.5), 0.2, 0.5).unwrap();
        assert_abs_diff_eq!(d.dp, 1.5);
        assert_abs_diff_eq!(d.dv, -0.3, epsilon = 1e-15);

        let d = pair_derivative(CarFollowingState::new(-18.0, -2.0), -1.0, -1.0).unwrap();
        assert_eq!(d, CarFollowingState::new(-2.0, 0.0));
    }

    #[test]
    fn pair_derivative_rejects_nan() {
        let err = pair_derivative(CarFollowingState::new(f64::NAN, 0.0), 0.0, 0.0);
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert!(pair_derivative(CarFollowingState::default(), f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn leader_advance_examples() {
        let l = virtual_leader_advance(VehicleState::new(0.0, 14.0), 14.0, 1.0).unwrap();
        assert_eq!(l, VehicleState::new(14.0, 14.0));

        let l = virtual_leader_advance(VehicleState::new(140.0, 14.0), 25.0, 0.01).unwrap();
        assert_abs_diff_eq!(l.p, 140.25, epsilon = 1e-12);
        assert_eq!(l.v, 25.0);

        assert!(virtual_leader_advance(VehicleState::new(0.0, 14.0), 14.0, 0.0).is_err());
    }

    #[test]
    fn reconstruct_prefix_sum() {
        let pair = ExtendedPairState::new(CarFollowingState::new(-20.0, 0.0), Rho::Scalar(0.0));
        let platoon = PlatoonState::new(vec![pair; 3], VehicleState::new(100.0, 14.0));
        let xs = reconstruct_absolute(&platoon);
        let ps: Vec<f64> = xs.iter().map(|x| x.p).collect();
        assert_eq!(ps, vec![80.0, 60.0, 40.0]);

        let platoon = PlatoonState::new(vec![pair], VehicleState::new(0.0, 14.0)).with_absolute();
        assert_eq!(platoon.absolute.unwrap()[0].p, -20.0);
    }

    #[test]
    fn equilibrium_and_limits_validation() {
        assert!(EquilibriumSpec::new(0.0, 14.0).is_err());
        assert!(EquilibriumSpec::new(20.0, -1.0).is_err());
        assert!(Limits::new(4.0, 36.0, 36.0).is_err());
        assert!(Limits::new(0.0, 36.0, 0.0).is_err());
        assert_eq!(Limits::default().saturate(-9.0), -4.0);
    }

    #[test]
    fn rho_dimensions() {
        assert_eq!(Rho::zeros(1).unwrap().dim(), 1);
        assert_eq!(Rho::zeros(2).unwrap().as_slice(), &[0.0, 0.0]);
        assert!(Rho::zeros(3).is_err());
        assert!(Rho::from_slice(&[]).is_err());
    }

    fn vehicles() -> impl Strategy<Value = (VehicleState, Vec<VehicleState>)> {
        (
            (-1e3..1e3f64, 0.0..36.0f64),
            prop::collection::vec((-1e3..1e3f64, 0.0..36.0f64), 1..40),
        )
            .prop_map(|((lp, lv), xs)| {
                (
                    VehicleState::new(lp, lv),
                    xs.into_iter().map(|(p, v)| VehicleState::new(p, v)).collect(),
                )
            })
    }

    proptest! {
        #[test]
        fn absolute_round_trip((leader, xs) in vehicles()) {
            let pairs = pairs_from_absolute(&leader, &xs)
                .into_iter()
                .map(|chi| ExtendedPairState::new(chi, Rho::Scalar(0.0)))
                .collect();
            let back = reconstruct_absolute(&PlatoonState::new(pairs, leader));
            for (a, b) in back.iter().zip(&xs) {
                prop_assert!((a.p - b.p).abs() <= 1e-9 * (1.0 + b.p.abs()));
                prop_assert!((a.v - b.v).abs() <= 1e-9 * (1.0 + b.v.abs()));
            }
        }

        #[test]
        fn pairs_are_translation_invariant((leader, xs) in vehicles(), shift in -1e4..1e4f64) {
            let base = pairs_from_absolute(&leader, &xs);
            let moved: Vec<_> = xs.iter().map(|x| VehicleState::new(x.p + shift, x.v)).collect();
            let moved_leader = VehicleState::new(leader.p + shift, leader.v);
            let shifted = pairs_from_absolute(&moved_leader, &moved);
            for (a, b) in base.iter().zip(&shifted) {
                prop_assert!((a.dp - b.dp).abs() <= 1e-9);
                prop_assert_eq!(a.dv, b.dv);
            }
        }
    }
}
