//! Flat `key = value` run configuration.
//!
//! One setting per line, dotted keys, `#` starts a comment. Indexed groups
//! (`schedule.N.*`, `disturbance.N.*`) replace the built-in defaults when
//! present; `schedule.count` / `disturbance.count` fix the group size
//! explicitly (a count of 0 means none). Unset scalar keys keep the values
//! of the reference scenario for the chosen policy.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::control::Policy;
use crate::error::{Error, Result};
use crate::sim::{Disturbance, DisturbanceKind, Scenario, SpeedBreakpoint};
use crate::stability::{AnalysisOptions, DerivativeSource};

/// Output settings.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// `error`, `warn`, `info`, `debug` or `trace`.
    pub log_level: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            log_level: "info".into(),
        }
    }
}

/// Parameter grid of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// Largest accepted grid size.
    pub cap: usize,
    /// Also simulate every grid point.
    pub simulate: bool,
    /// Worker threads; 0 picks the number of cores.
    pub workers: usize,
    /// Scalar key and its values, in declaration order.
    pub axes: Vec<(String, Vec<f64>)>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            cap: 1024,
            simulate: false,
            workers: 0,
            axes: Vec::new(),
        }
    }
}

impl SweepConfig {
    /// Number of grid points of the cross product.
    pub fn size(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }
}

/// Everything a command needs: the scenario plus output, analysis and sweep
/// settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub output: OutputConfig,
    pub analysis: AnalysisOptions,
    pub sweep: SweepConfig,
}

impl RunConfig {
    pub fn reference(policy: Policy) -> Self {
        Self {
            scenario: Scenario::paper(policy),
            output: OutputConfig::default(),
            analysis: AnalysisOptions::default(),
            sweep: SweepConfig::default(),
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        parse(&text)
    }
}

fn err(line: Option<usize>, key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        line,
        key: key.to_string(),
        reason: reason.into(),
    }
}

struct Entry {
    line: usize,
    value: String,
}

fn parse_f64(line: Option<usize>, key: &str, value: &str) -> Result<f64> {
    let v: f64 = value
        .parse()
        .map_err(|_| err(line, key, format!("`{value}` is not a number")))?;
    if !v.is_finite() {
        return Err(err(line, key, "value must be finite"));
    }
    Ok(v)
}

fn parse_usize(line: Option<usize>, key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| err(line, key, format!("`{value}` is not a non-negative integer")))
}

fn parse_bool(line: Option<usize>, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(err(line, key, format!("`{value}` is not a boolean"))),
    }
}

/// Scalar keys accepted by [`set_scalar`] and as sweep axes.
pub const SCALAR_KEYS: &[&str] = &[
    "scenario.n_vehicles",
    "scenario.dt",
    "scenario.t_end",
    "scenario.psi_sample_period",
    "equilibrium.dp_bar",
    "equilibrium.v_bar",
    "limits.a_max",
    "limits.v_max",
    "limits.v_min",
    "controller.k_dp",
    "controller.k_dv",
    "controller.lambda1",
    "controller.lambda2",
    "controller.a",
    "controller.b",
    "controller.gamma_dp",
    "controller.gamma_dv",
    "controller.upsilon",
    "ic.seed",
    "ic.dp_halfwidth",
    "ic.dv_halfwidth",
];

/// Set one numeric scenario parameter by key.
pub fn set_scalar(sc: &mut Scenario, key: &str, value: f64, line: Option<usize>) -> Result<()> {
    let as_count = |v: f64| -> Result<usize> {
        if v < 0.0 || v.fract() != 0.0 {
            return Err(err(line, key, "expected a non-negative integer"));
        }
        Ok(v as usize)
    };
    match key {
        "scenario.n_vehicles" => sc.n_vehicles = as_count(value)?,
        "scenario.dt" => sc.dt = value,
        "scenario.t_end" => sc.t_end = value,
        "scenario.psi_sample_period" => sc.psi_sample_period = value,
        "equilibrium.dp_bar" => sc.eq.dp_bar = value,
        "equilibrium.v_bar" => sc.eq.v_bar = value,
        "limits.a_max" => sc.limits.a_max = value,
        "limits.v_max" => sc.limits.v_max = value,
        "limits.v_min" => sc.limits.v_min = value,
        "controller.k_dp" => sc.controller.k_dp = value,
        "controller.k_dv" => sc.controller.k_dv = value,
        "controller.lambda1" => sc.controller.rho.lambdas[0] = value,
        "controller.lambda2" => match sc.controller.rho.lambdas.get_mut(1) {
            Some(l) => *l = value,
            None => return Err(err(line, key, "constant spacing has a single filter pole")),
        },
        "controller.a" => sc.controller.rho.a = value,
        "controller.b" => sc.controller.rho.b = value,
        "controller.gamma_dp" => sc.controller.rho.gamma_dp = value,
        "controller.gamma_dv" => sc.controller.rho.gamma_dv = value,
        "controller.upsilon" => sc.controller.upsilon = value,
        "ic.seed" => sc.ic.seed = as_count(value)? as u64,
        "ic.dp_halfwidth" => sc.ic.dp_halfwidth = value,
        "ic.dv_halfwidth" => sc.ic.dv_halfwidth = value,
        _ => return Err(err(line, key, "unknown parameter")),
    }
    Ok(())
}

/// Split `group.N.field` into `(N, field)`.
fn indexed<'a>(key: &'a str, group: &str) -> Option<(&'a str, &'a str)> {
    let rest = key.strip_prefix(group)?.strip_prefix('.')?;
    rest.split_once('.')
}

fn collect_indexed(
    entries: &BTreeMap<String, Entry>,
    group: &str,
    fields: &[&str],
) -> Result<Option<Vec<BTreeMap<String, (usize, String)>>>> {
    let count_key = format!("{group}.count");
    let explicit = match entries.get(&count_key) {
        Some(e) => Some(parse_usize(Some(e.line), &count_key, &e.value)?),
        None => None,
    };
    let mut items: BTreeMap<usize, BTreeMap<String, (usize, String)>> = BTreeMap::new();
    for (key, e) in entries {
        if key == &count_key {
            continue;
        }
        if !key.starts_with(group) || !key[group.len()..].starts_with('.') {
            continue;
        }
        let Some((idx, field)) = indexed(key, group) else {
            return Err(err(Some(e.line), key, format!("expected `{group}.<index>.<field>`")));
        };
        {
            let i = parse_usize(Some(e.line), key, idx)?;
            if !fields.contains(&field) {
                return Err(err(Some(e.line), key, format!("unknown field `{field}`")));
            }
            items
                .entry(i)
                .or_default()
                .insert(field.to_string(), (e.line, e.value.clone()));
        }
    }
    if explicit.is_none() && items.is_empty() {
        return Ok(None);
    }
    let n = explicit.unwrap_or_else(|| items.keys().next_back().map_or(0, |k| k + 1));
    if let Some((&i, fields)) = items.iter().find(|(&i, _)| i >= n) {
        let line = fields.values().next().map(|(l, _)| *l);
        return Err(err(line, &format!("{group}.{i}"), format!("index beyond {group}.count = {n}")));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        match items.remove(&i) {
            Some(m) => out.push(m),
            None => return Err(err(None, &format!("{group}.{i}"), "missing entry")),
        }
    }
    Ok(Some(out))
}

fn field<'a>(
    m: &'a BTreeMap<String, (usize, String)>,
    group: &str,
    i: usize,
    name: &str,
) -> Result<(Option<usize>, &'a str)> {
    m.get(name)
        .map(|(l, v)| (Some(*l), v.as_str()))
        .ok_or_else(|| err(None, &format!("{group}.{i}.{name}"), "missing field"))
}

fn num(m: &BTreeMap<String, (usize, String)>, group: &str, i: usize, name: &str) -> Result<f64> {
    let (line, v) = field(m, group, i, name)?;
    parse_f64(line, &format!("{group}.{i}.{name}"), v)
}

/// Parse configuration text. Keys are validated individually, then the
/// assembled scenario is validated as a whole.
pub fn parse(text: &str) -> Result<RunConfig> {
    let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(Some(line), content, "expected `key = value`"))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(err(Some(line), key, "empty key"));
        }
        if let Some(prev) = entries.get(key) {
            return Err(err(Some(line), key, format!("duplicate key, first set on line {}", prev.line)));
        }
        entries.insert(
            key.to_string(),
            Entry {
                line,
                value: value.to_string(),
            },
        );
    }

    let policy = match entries.get("scenario.policy") {
        Some(e) => e
            .value
            .parse::<Policy>()
            .map_err(|_| err(Some(e.line), "scenario.policy", format!("unknown policy `{}`", e.value)))?,
        None => return Err(err(None, "scenario.policy", "required key is missing")),
    };
    let mut cfg = RunConfig::reference(policy);

    for (key, e) in &entries {
        let line = Some(e.line);
        let v = e.value.as_str();
        match key.as_str() {
            "scenario.policy" => {}
            "ic.seed" => {
                cfg.scenario.ic.seed = v
                    .parse()
                    .map_err(|_| err(line, key, format!("`{v}` is not a valid seed")))?
            }
            k if SCALAR_KEYS.contains(&k) => {
                let x = parse_f64(line, k, v)?;
                set_scalar(&mut cfg.scenario, k, x, line)?;
            }
            "output.dir" => cfg.output.dir = PathBuf::from(v),
            "output.log_level" => match v {
                "error" | "warn" | "info" | "debug" | "trace" => cfg.output.log_level = v.to_string(),
                _ => return Err(err(line, key, format!("unknown log level `{v}`"))),
            },
            "analysis.iss" => cfg.analysis.iss = parse_bool(line, key, v)?,
            "analysis.iss_source" => {
                cfg.analysis.iss_source = v
                    .parse::<DerivativeSource>()
                    .map_err(|_| err(line, key, format!("unknown derivative source `{v}`")))?
            }
            "analysis.iss_tolerance" => cfg.analysis.iss_tolerance = parse_f64(line, key, v)?,
            "analysis.string_metrics" => cfg.analysis.string_metrics = parse_bool(line, key, v)?,
            "analysis.attenuation" => {
                cfg.analysis.attenuation_window = if v == "none" {
                    None
                } else {
                    let (a, b) = v
                        .split_once(',')
                        .ok_or_else(|| err(line, key, "expected `t0, t1` or `none`"))?;
                    Some((parse_f64(line, key, a.trim())?, parse_f64(line, key, b.trim())?))
                }
            }
            "sweep.cap" => cfg.sweep.cap = parse_usize(line, key, v)?,
            "sweep.simulate" => cfg.sweep.simulate = parse_bool(line, key, v)?,
            "sweep.workers" => cfg.sweep.workers = parse_usize(line, key, v)?,
            k if k.starts_with("sweep.axis.") => {
                let param = &k["sweep.axis.".len()..];
                if !SCALAR_KEYS.contains(&param) {
                    return Err(err(line, key, format!("`{param}` cannot be swept")));
                }
                let values = v
                    .split(',')
                    .map(|s| parse_f64(line, key, s.trim()))
                    .collect::<Result<Vec<_>>>()?;
                if values.is_empty() {
                    return Err(err(line, key, "axis has no values"));
                }
                let mut probe = cfg.scenario.clone();
                set_scalar(&mut probe, param, values[0], line)?;
                cfg.sweep.axes.push((param.to_string(), values));
            }
            k if k.starts_with("schedule.") || k.starts_with("disturbance.") => {}
            _ => return Err(err(line, key, "unknown key")),
        }
    }
    // Axes in file order.
    cfg.sweep
        .axes
        .sort_by_key(|(k, _)| entries[&format!("sweep.axis.{k}")].line);

    if let Some(items) = collect_indexed(&entries, "schedule", &["t", "v"])? {
        cfg.scenario.speed_schedule = items
            .iter()
            .enumerate()
            .map(|(i, m)| {
                Ok(SpeedBreakpoint {
                    t_start: num(m, "schedule", i, "t")?,
                    v_ref: num(m, "schedule", i, "v")?,
                })
            })
            .collect::<Result<_>>()?;
    }
    let dist_fields = ["kind", "target", "amplitude", "t_start", "t_end", "frequency"];
    if let Some(items) = collect_indexed(&entries, "disturbance", &dist_fields)? {
        cfg.scenario.disturbances = items
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let (kline, kind) = field(m, "disturbance", i, "kind")?;
                let kind = match kind {
                    "pulse" => DisturbanceKind::Pulse,
                    "sinusoid" => DisturbanceKind::Sinusoid {
                        frequency: num(m, "disturbance", i, "frequency")?,
                    },
                    other => {
                        return Err(err(
                            kline,
                            &format!("disturbance.{i}.kind"),
                            format!("unknown kind `{other}`"),
                        ))
                    }
                };
                let (tline, target) = field(m, "disturbance", i, "target")?;
                Ok(Disturbance {
                    target: parse_usize(tline, &format!("disturbance.{i}.target"), target)?,
                    kind,
                    amplitude: num(m, "disturbance", i, "amplitude")?,
                    t_start: num(m, "disturbance", i, "t_start")?,
                    t_end: num(m, "disturbance", i, "t_end")?,
                })
            })
            .collect::<Result<_>>()?;
    }

    cfg.scenario.validate().map_err(|e| match e {
        Error::InvalidParameter { name, reason } => {
            let line = entries
                .iter()
                .find(|(k, _)| k.ends_with(name))
                .map(|(_, e)| e.line);
            err(line, name, reason)
        }
        other => err(None, "scenario", other.to_string()),
    })?;
    Ok(cfg)
}

/// Canonical text form; [`parse`] of the result reproduces `cfg`.
pub fn serialize(cfg: &RunConfig) -> String {
    let sc = &cfg.scenario;
    let c = &sc.controller;
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        writeln!(out, "{k} = {v}").unwrap();
    };
    kv("scenario.policy", c.policy.to_string());
    kv("scenario.n_vehicles", sc.n_vehicles.to_string());
    kv("scenario.dt", sc.dt.to_string());
    kv("scenario.t_end", sc.t_end.to_string());
    kv("scenario.psi_sample_period", sc.psi_sample_period.to_string());
    kv("equilibrium.dp_bar", sc.eq.dp_bar.to_string());
    kv("equilibrium.v_bar", sc.eq.v_bar.to_string());
    kv("limits.a_max", sc.limits.a_max.to_string());
    kv("limits.v_max", sc.limits.v_max.to_string());
    kv("limits.v_min", sc.limits.v_min.to_string());
    kv("controller.k_dp", c.k_dp.to_string());
    kv("controller.k_dv", c.k_dv.to_string());
    kv("controller.lambda1", c.rho.lambdas[0].to_string());
    if let Some(l2) = c.rho.lambdas.get(1) {
        kv("controller.lambda2", l2.to_string());
    }
    kv("controller.a", c.rho.a.to_string());
    kv("controller.b", c.rho.b.to_string());
    kv("controller.gamma_dp", c.rho.gamma_dp.to_string());
    kv("controller.gamma_dv", c.rho.gamma_dv.to_string());
    kv("controller.upsilon", c.upsilon.to_string());
    kv("schedule.count", sc.speed_schedule.len().to_string());
    for (i, bp) in sc.speed_schedule.iter().enumerate() {
        kv(&format!("schedule.{i}.t"), bp.t_start.to_string());
        kv(&format!("schedule.{i}.v"), bp.v_ref.to_string());
    }
    kv("disturbance.count", sc.disturbances.len().to_string());
    for (i, d) in sc.disturbances.iter().enumerate() {
        let (kind, freq) = match d.kind {
            DisturbanceKind::Pulse => ("pulse", None),
            DisturbanceKind::Sinusoid { frequency } => ("sinusoid", Some(frequency)),
        };
        kv(&format!("disturbance.{i}.kind"), kind.into());
        kv(&format!("disturbance.{i}.target"), d.target.to_string());
        kv(&format!("disturbance.{i}.amplitude"), d.amplitude.to_string());
        kv(&format!("disturbance.{i}.t_start"), d.t_start.to_string());
        kv(&format!("disturbance.{i}.t_end"), d.t_end.to_string());
        if let Some(f) = freq {
            kv(&format!("disturbance.{i}.frequency"), f.to_string());
        }
    }
    kv("ic.seed", sc.ic.seed.to_string());
    kv("ic.dp_halfwidth", sc.ic.dp_halfwidth.to_string());
    kv("ic.dv_halfwidth", sc.ic.dv_halfwidth.to_string());
    kv("output.dir", cfg.output.dir.display().to_string());
    kv("output.log_level", cfg.output.log_level.clone());
    let a = &cfg.analysis;
    kv("analysis.iss", a.iss.to_string());
    kv("analysis.iss_source", a.iss_source.to_string());
    kv("analysis.iss_tolerance", a.iss_tolerance.to_string());
    kv("analysis.string_metrics", a.string_metrics.to_string());
    kv(
        "analysis.attenuation",
        match a.attenuation_window {
            Some((t0, t1)) => format!("{t0}, {t1}"),
            None => "none".into(),
        },
    );
    kv("sweep.cap", cfg.sweep.cap.to_string());
    kv("sweep.simulate", cfg.sweep.simulate.to_string());
    kv("sweep.workers", cfg.sweep.workers.to_string());
    for (k, values) in &cfg.sweep.axes {
        let v: Vec<String> = values.iter().map(|x| x.to_string()).collect();
        kv(&format!("sweep.axis.{k}"), v.join(", "));
    }
    out
}
