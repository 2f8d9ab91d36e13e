//! Lyapunov/ISS certificates and trajectory-level stability checks.
//!
//! [`constants`] evaluates the closed-form certificate constants of each
//! spacing policy; [`certificate_matrices`] rebuilds the printed quadratic
//! forms and compares them with the matrices derived from the
//! sum-of-squares Lyapunov function. The trajectory checks evaluate the
//! conditional decrease inequality, the string-stability bound and the
//! attenuation of disturbances along a logged run.

mod constants;
mod lyapunov;
mod report;
mod trajectory;

pub use constants::{
    certificate_matrices, constants, constants_cp, constants_vp, CertificateMatrices, DomainFlag,
    LyapunovConstants, MatrixDiscrepancy, SpectralBounds, EIGEN_TOL,
};
pub use lyapunov::{
    isolated_decay, isolated_decrease, lyapunov_derivative, lyapunov_gradient, lyapunov_value,
    sandwich_check, DecayReport, SandwichReport,
};
pub use report::{analyze, certificate, AnalysisOptions, StabilityReport};
pub use trajectory::{
    attenuation_profile, iss_trajectory_check, run_metrics, string_metrics, AttenuationProfile,
    DerivativeSource, IssReport, IssViolation, StringScaling, StringStabilityMetrics,
    TRAJECTORY_TOL,
};
