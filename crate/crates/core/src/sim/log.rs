use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::aggregates::{upstream_psi, PsiPair};
use crate::control::{ControllerParams, Policy};
use crate::error::{Error, Result};
use crate::platoon::{CarFollowingState, EquilibriumSpec, ErrorState, ExtendedPairState, Rho};

use super::Scenario;

/// Time series of one vehicle, sampled on the log's time grid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VehicleSeries {
    pub dp: Vec<f64>,
    pub dv: Vec<f64>,
    /// One series per controller-state component.
    pub rho: Vec<Vec<f64>>,
    pub u_cmd: Vec<f64>,
    pub u_app: Vec<f64>,
    /// Aggregate `ψ^{i−1}` used by this vehicle.
    pub psi_dp: Vec<f64>,
    pub psi_dv: Vec<f64>,
}

impl VehicleSeries {
    fn with_capacity(rho_dim: usize, cap: usize) -> Self {
        Self {
            dp: Vec::with_capacity(cap),
            dv: Vec::with_capacity(cap),
            rho: (0..rho_dim).map(|_| Vec::with_capacity(cap)).collect(),
            u_cmd: Vec::with_capacity(cap),
            u_app: Vec::with_capacity(cap),
            psi_dp: Vec::with_capacity(cap),
            psi_dv: Vec::with_capacity(cap),
        }
    }
}

/// Sampled closed-loop trajectory. Row `k` holds the state at `time[k]`
/// together with the inputs evaluated there.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub controller: ControllerParams,
    pub eq: EquilibriumSpec,
    pub time: Vec<f64>,
    /// Leader reference speed `v̄(t)`.
    pub v_ref: Vec<f64>,
    pub vehicles: Vec<VehicleSeries>,
}

impl TrajectoryLog {
    pub(crate) fn with_capacity(scenario: &Scenario, cap: usize) -> Self {
        let r = scenario.controller.policy.rho_dim();
        Self {
            controller: scenario.controller.clone(),
            eq: scenario.eq,
            time: Vec::with_capacity(cap),
            v_ref: Vec::with_capacity(cap),
            vehicles: (0..scenario.n_vehicles)
                .map(|_| VehicleSeries::with_capacity(r, cap))
                .collect(),
        }
    }

    pub(crate) fn push_row<F>(&mut self, t: f64, v_ref: f64, mut row: F)
    where
        F: FnMut(usize) -> (ExtendedPairState, f64, f64, PsiPair),
    {
        self.time.push(t);
        self.v_ref.push(v_ref);
        for (i, s) in self.vehicles.iter_mut().enumerate() {
            let (pair, u_cmd, u_app, psi) = row(i);
            s.dp.push(pair.chi.dp);
            s.dv.push(pair.chi.dv);
            for (series, r) in s.rho.iter_mut().zip(pair.rho.as_slice()) {
                series.push(*r);
            }
            s.u_cmd.push(u_cmd);
            s.u_app.push(u_app);
            s.psi_dp.push(psi.psi_dp);
            s.psi_dv.push(psi.psi_dv);
        }
    }

    pub fn policy(&self) -> Policy {
        self.controller.policy
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn n_vehicles(&self) -> usize {
        self.vehicles.len()
    }

    /// Index of the first sample with `time >= t`, clamped to the last row.
    pub fn index_at(&self, t: f64) -> usize {
        self.time
            .partition_point(|&s| s < t - 1e-9)
            .min(self.len().saturating_sub(1))
    }

    pub fn pair(&self, i: usize, k: usize) -> ExtendedPairState {
        let s = &self.vehicles[i];
        let chi = CarFollowingState::new(s.dp[k], s.dv[k]);
        let rho = match s.rho.len() {
            1 => Rho::Scalar(s.rho[0][k]),
            _ => Rho::Pair([s.rho[0][k], s.rho[1][k]]),
        };
        ExtendedPairState::new(chi, rho)
    }

    pub fn error_state(&self, i: usize, k: usize) -> ErrorState {
        self.pair(i, k).error(&self.eq)
    }

    pub fn pairs_at(&self, k: usize) -> Vec<CarFollowingState> {
        self.vehicles
            .iter()
            .map(|s| CarFollowingState::new(s.dp[k], s.dv[k]))
            .collect()
    }

    pub fn psi(&self, i: usize, k: usize) -> PsiPair {
        PsiPair {
            psi_dp: self.vehicles[i].psi_dp[k],
            psi_dv: self.vehicles[i].psi_dv[k],
        }
    }

    /// Largest `|χ̃_i(t)|` over all vehicles and samples.
    pub fn max_error_norm(&self) -> f64 {
        (0..self.n_vehicles())
            .flat_map(|i| (0..self.len()).map(move |k| (i, k)))
            .map(|(i, k)| self.error_state(i, k).norm())
            .fold(0.0, f64::max)
    }

    pub fn csv_header(&self) -> String {
        let mut h = String::from("t,v_ref");
        for (i, s) in self.vehicles.iter().enumerate() {
            write!(h, ",dp_{i},dv_{i}").unwrap();
            for c in 1..=s.rho.len() {
                write!(h, ",rho{c}_{i}").unwrap();
            }
            write!(h, ",u_cmd_{i},u_app_{i}").unwrap();
        }
        h
    }

    /// Writes one header line and one row per sample, values at nine
    /// significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.csv_header())?;
        let mut line = String::new();
        for k in 0..self.len() {
            line.clear();
            write!(line, "{:.8e},{:.8e}", self.time[k], self.v_ref[k]).unwrap();
            for s in &self.vehicles {
                write!(line, ",{:.8e},{:.8e}", s.dp[k], s.dv[k]).unwrap();
                for r in &s.rho {
                    write!(line, ",{:.8e}", r[k]).unwrap();
                }
                write!(line, ",{:.8e},{:.8e}", s.u_cmd[k], s.u_app[k]).unwrap();
            }
            writeln!(w, "{line}")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a log written by [`TrajectoryLog::write_csv`]. The aggregates
    /// are not stored in the file; they are recomputed from the pair states,
    /// refreshed every `psi_stride` rows and held in between as during the
    /// run.
    pub fn read_csv<R: BufRead>(
        reader: R,
        controller: ControllerParams,
        eq: EquilibriumSpec,
        psi_stride: usize,
    ) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Schema("empty log file".into()))??;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let r = controller.policy.rho_dim();
        let per = 4 + r;
        if cols.len() < 2 + per || !(cols.len() - 2).is_multiple_of(per) {
            return Err(Error::Schema(format!(
                "{} columns do not fit a {} log with {} columns per vehicle",
                cols.len(),
                controller.policy,
                per
            )));
        }
        let n = (cols.len() - 2) / per;
        let mut log = Self {
            controller,
            eq,
            time: Vec::new(),
            v_ref: Vec::new(),
            vehicles: (0..n).map(|_| VehicleSeries::with_capacity(r, 0)).collect(),
        };
        if log.csv_header() != cols.join(",") {
            return Err(Error::Schema(format!(
                "header does not match a {} log with {n} vehicles",
                log.controller.policy
            )));
        }
        let psi_stride = psi_stride.max(1);
        let mut psi = vec![PsiPair::ZERO; n];
        let mut values = Vec::with_capacity(cols.len());
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            values.clear();
            for (c, field) in line.split(',').enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::Schema(format!("row {}: column {} is not a number", row + 2, c + 1))
                })?;
                values.push(v);
            }
            if values.len() != cols.len() {
                return Err(Error::Schema(format!(
                    "row {}: expected {} columns, found {}",
                    row + 2,
                    cols.len(),
                    values.len()
                )));
            }
            let pairs: Vec<_> = (0..n)
                .map(|i| CarFollowingState::new(values[2 + i * per], values[3 + i * per]))
                .collect();
            if log.time.len().is_multiple_of(psi_stride) {
                psi = upstream_psi(&pairs, &log.eq, &log.controller.rho);
            }
            let (t, v) = (values[0], values[1]);
            log.push_row(t, v, |i| {
                let base = 2 + i * per;
                let rho = Rho::from_slice(&values[base + 2..base + 2 + r]).expect("rho dimension");
                let pair = ExtendedPairState::new(pairs[i], rho);
                (pair, values[base + 2 + r], values[base + 3 + r], psi[i])
            });
        }
        if log.is_empty() {
            return Err(Error::Schema("log has a header but no rows".into()));
        }
        Ok(log)
    }
}
