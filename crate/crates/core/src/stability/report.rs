use std::fmt::Write as _;

use crate::control::ControllerParams;
use crate::error::Result;
use crate::sim::TrajectoryLog;

use super::constants::{certificate_matrices, constants, CertificateMatrices, LyapunovConstants};
use super::trajectory::{
    attenuation_profile, iss_trajectory_check, run_metrics, AttenuationProfile, DerivativeSource,
    IssReport, StringStabilityMetrics, TRAJECTORY_TOL,
};

/// What [`analyze`] evaluates on a log.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    pub iss: bool,
    pub iss_source: DerivativeSource,
    pub iss_tolerance: f64,
    pub string_metrics: bool,
    /// Window of the attenuation profile; `None` skips it.
    pub attenuation_window: Option<(f64, f64)>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            iss: true,
            iss_source: DerivativeSource::ClosedLoop,
            iss_tolerance: TRAJECTORY_TOL,
            string_metrics: true,
            attenuation_window: Some((35.0, 60.0)),
        }
    }
}

/// Constants, certificate verdict and trajectory checks of one run.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub constants: LyapunovConstants,
    /// Constants recomputed from the spectra of the derived matrices.
    pub spectral_constants: LyapunovConstants,
    pub matrices: CertificateMatrices,
    pub iss: Option<IssReport>,
    pub metrics: Option<StringStabilityMetrics>,
    pub attenuation: Option<AttenuationProfile>,
    /// Extra `key = value` lines identifying the run (config, seed, dt).
    pub provenance: Vec<(String, String)>,
}

/// Certificate constants and matrices of a controller, without a log.
pub fn certificate(params: &ControllerParams) -> Result<(LyapunovConstants, CertificateMatrices)> {
    let c = constants(params)?;
    let m = certificate_matrices(params)?;
    Ok((c, m))
}

/// Run the selected checks on `log`.
pub fn analyze(log: &TrajectoryLog, options: &AnalysisOptions) -> Result<StabilityReport> {
    let (consts, matrices) = certificate(&log.controller)?;
    let spectral_constants = matrices.spectral_constants(&consts);
    let iss = if options.iss {
        Some(iss_trajectory_check(
            log,
            &consts,
            options.iss_source,
            None,
            options.iss_tolerance,
        )?)
    } else {
        None
    };
    let metrics = if options.string_metrics {
        Some(run_metrics(log, &consts)?)
    } else {
        None
    };
    let attenuation = match options.attenuation_window {
        Some(w) if log.n_vehicles() >= 3 && w.0 <= *log.time.last().unwrap_or(&0.0) => {
            Some(attenuation_profile(log, w)?)
        }
        _ => None,
    };
    Ok(StabilityReport {
        constants: consts,
        spectral_constants,
        matrices,
        iss,
        metrics,
        attenuation,
        provenance: Vec::new(),
    })
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:.9}"))
        .collect::<Vec<_>>()
        .join(";")
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

impl StabilityReport {
    /// Domain of the constants, positive diagonals and `α = min diag Q`.
    pub fn certificate_pass(&self) -> bool {
        self.constants.certificate_valid()
            && self.matrices.diagonals_positive
            && self.matrices.alpha_is_min_q_diagonal
    }

    pub fn with_provenance(mut self, entries: Vec<(String, String)>) -> Self {
        self.provenance = entries;
        self
    }

    /// Flat `key = value` lines, one per figure.
    pub fn to_kv(&self) -> String {
        let c = &self.constants;
        let s = &self.spectral_constants;
        let m = &self.matrices;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            writeln!(out, "{k} = {v}").unwrap();
        };
        for (k, v) in &self.provenance {
            kv(k, v.clone());
        }
        kv("policy", c.policy.to_string());
        kv("constants.alpha_lower", format!("{:.12}", c.alpha_lower));
        kv("constants.alpha_upper", format!("{:.12}", c.alpha_upper));
        kv("constants.alpha", format!("{:.12}", c.alpha));
        kv("constants.d", format!("{:.12}", c.d));
        kv("constants.upsilon", format!("{:.12}", c.upsilon));
        kv("constants.gamma_tilde", format!("{:.12}", c.gamma_tilde));
        kv("certificate.verdict", verdict(self.certificate_pass()).into());
        kv(
            "certificate.domain_flags",
            c.domain_flags().iter().map(ToString::to_string).collect::<Vec<_>>().join(";"),
        );
        kv("certificate.p_diagonal", join(&m.p_diagonal()));
        kv("certificate.q_diagonal", join(&m.q_diagonal()));
        kv("certificate.diagonals_positive", m.diagonals_positive.to_string());
        kv("certificate.alpha_is_min_q_diagonal", m.alpha_is_min_q_diagonal.to_string());
        kv("certificate.discrepancies", m.discrepancies.len().to_string());
        for (n, d) in m.discrepancies.iter().enumerate() {
            kv(
                &format!("certificate.discrepancy.{n}"),
                format!("{}[{}][{}] printed={:.9} derived={:.9}", d.matrix, d.row, d.col, d.printed, d.derived),
            );
        }
        kv("spectral.alpha_lower", format!("{:.12}", s.alpha_lower));
        kv("spectral.alpha_upper", format!("{:.12}", s.alpha_upper));
        kv("spectral.alpha", format!("{:.12}", s.alpha));
        kv("spectral.gamma_tilde", format!("{:.12}", s.gamma_tilde));
        if let Some(iss) = &self.iss {
            kv("iss.source", iss.source.to_string());
            kv("iss.tolerance", format!("{:e}", iss.tolerance));
            kv("iss.samples_checked", iss.samples_checked.to_string());
            kv("iss.samples_active", iss.samples_active.to_string());
            kv("iss.violations", iss.violation_count.to_string());
            kv("iss.flags", iss.flag_count().to_string());
            kv("iss.max_excess", format!("{:.9e}", iss.max_excess));
            kv("iss.verdict", verdict(iss.passed()).into());
        }
        if let Some(mt) = &self.metrics {
            kv("string.n_vehicles", mt.n_vehicles.to_string());
            kv("string.platoon_peak", format!("{:.9}", mt.platoon_peak));
            kv("string.initial_max", format!("{:.9}", mt.initial_max));
            kv("string.bound", format!("{:.9}", mt.bound));
            kv("string.terminal_max", format!("{:.9e}", mt.terminal_max()));
            kv("string.within_bound", mt.within_bound().to_string());
            kv("string.peaks", join(&mt.peaks));
        }
        if let Some(a) = &self.attenuation {
            kv("attenuation.window", format!("{};{}", a.window.0, a.window.1));
            kv("attenuation.speed_peaks", join(&a.speed_peaks));
            kv("attenuation.gap_peaks", join(&a.gap_peaks));
            kv("attenuation.decreasing_fraction", format!("{:.6}", a.decreasing_fraction));
            kv("attenuation.tail_attenuated", a.tail_attenuated().to_string());
        }
        out
    }

    /// Human-readable summary.
    pub fn to_text(&self) -> String {
        let c = &self.constants;
        let s = &self.spectral_constants;
        let m = &self.matrices;
        let mut out = String::new();
        let w = &mut out;
        writeln!(w, "Stability report ({} spacing)", c.policy).unwrap();
        for (k, v) in &self.provenance {
            writeln!(w, "  {k}: {v}").unwrap();
        }
        writeln!(w).unwrap();
        writeln!(w, "Certificate constants").unwrap();
        writeln!(w, "  alpha_lower   {:.6}", c.alpha_lower).unwrap();
        writeln!(w, "  alpha_upper   {:.6}", c.alpha_upper).unwrap();
        writeln!(w, "  alpha         {:.6}", c.alpha).unwrap();
        writeln!(w, "  d             {:.6}", c.d).unwrap();
        writeln!(w, "  upsilon       {:.6}", c.upsilon).unwrap();
        writeln!(w, "  gamma_tilde   {:.6} (~{:.2})", c.gamma_tilde, c.gamma_tilde).unwrap();
        let flags = c.domain_flags();
        if flags.is_empty() {
            writeln!(w, "  domain        ok").unwrap();
        } else {
            let f: Vec<_> = flags.iter().map(ToString::to_string).collect();
            writeln!(w, "  domain        {}", f.join(", ")).unwrap();
        }
        writeln!(w, "  verdict       {}", verdict(self.certificate_pass())).unwrap();
        writeln!(w).unwrap();
        writeln!(w, "Certificate matrices").unwrap();
        writeln!(w, "  P diagonal    {}", join(&m.p_diagonal())).unwrap();
        writeln!(w, "  Q diagonal    {}", join(&m.q_diagonal())).unwrap();
        writeln!(w, "  alpha = min diag Q: {}", m.alpha_is_min_q_diagonal).unwrap();
        if m.discrepancies.is_empty() {
            writeln!(w, "  printed P, Q agree with the derived quadratic forms").unwrap();
        } else {
            writeln!(w, "  entries where the printed form disagrees with the derived one:").unwrap();
            for d in &m.discrepancies {
                writeln!(
                    w,
                    "    {}[{}][{}]: printed {:.6}, derived {:.6}",
                    d.matrix, d.row, d.col, d.printed, d.derived
                )
                .unwrap();
            }
        }
        writeln!(
            w,
            "  spectral: alpha_lower {:.6}, alpha_upper {:.6}, alpha {:.6}, gamma_tilde {:.6}",
            s.alpha_lower, s.alpha_upper, s.alpha, s.gamma_tilde
        )
        .unwrap();
        if let Some(iss) = &self.iss {
            writeln!(w).unwrap();
            writeln!(w, "Conditional decrease along the log ({})", iss.source).unwrap();
            writeln!(
                w,
                "  {} samples, {} in the ISS region, {} violations (tol {:e}), {} flags: {}",
                iss.samples_checked,
                iss.samples_active,
                iss.violation_count,
                iss.tolerance,
                iss.flag_count(),
                verdict(iss.passed())
            )
            .unwrap();
            for v in iss.violations.iter().take(5) {
                writeln!(
                    w,
                    "    vehicle {} t={:.2}: Wdot {:.6} > bound {:.6}",
                    v.vehicle, v.t, v.w_dot, v.bound
                )
                .unwrap();
            }
        }
        if let Some(mt) = &self.metrics {
            writeln!(w).unwrap();
            writeln!(w, "String stability").unwrap();
            writeln!(w, "  max_i sup_t |err_i|   {:.6}", mt.platoon_peak).unwrap();
            writeln!(w, "  max_i |err_i(0)|      {:.6}", mt.initial_max).unwrap();
            writeln!(w, "  bound                 {:.6} ({})", mt.bound, verdict(mt.within_bound())).unwrap();
            writeln!(w, "  max_i |err_i(t_end)|  {:.3e}", mt.terminal_max()).unwrap();
        }
        if let Some(a) = &self.attenuation {
            writeln!(w).unwrap();
            writeln!(w, "Attenuation in [{}, {}] s", a.window.0, a.window.1).unwrap();
            if let (Some(h), Some(t)) = (a.speed_peaks.first(), a.speed_peaks.last()) {
                writeln!(w, "  peak |dv| vehicle 2 {:.6}, vehicle N {:.6}", h, t).unwrap();
            }
            writeln!(w, "  decreasing fraction {:.3}", a.decreasing_fraction).unwrap();
            writeln!(w, "  tail attenuated: {}", a.tail_attenuated()).unwrap();
        }
        out
    }
}
