use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;

use mesoplatoon::config::{self, set_scalar, RunConfig};
use mesoplatoon::sim::{simulate, TrajectoryLog};
use mesoplatoon::stability::{analyze, constants, string_metrics, StabilityReport};
use mesoplatoon::{Error, Result};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "mesoplatoon", version, about = "Mesoscopic platoon control: simulation and stability analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write the trajectory CSV and a run manifest.
    Simulate(RunArgs),
    /// Analyse a trajectory CSV against the controller of a config.
    Analyze {
        /// Trajectory CSV written by `simulate`.
        #[arg(long)]
        log: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Evaluate certificates (and optionally simulations) over a parameter grid.
    Sweep(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file.
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Initial-condition seed; overrides `ic.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Integration step; overrides `scenario.dt`.
    #[arg(long)]
    dt: Option<f64>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let text = fs::read_to_string(&self.config).map_err(|e| Error::Config {
            line: None,
            key: "--config".into(),
            reason: format!("cannot read {}: {e}", self.config.display()),
        })?;
        let mut cfg = config::parse(&text)?;
        if let Some(seed) = self.seed {
            cfg.scenario.ic.seed = seed;
        }
        if let Some(dt) = self.dt {
            cfg.scenario.dt = dt;
            if cfg.scenario.psi_sample_period < dt {
                cfg.scenario.psi_sample_period = dt;
            }
        }
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        cfg.scenario.validate()?;
        Ok(cfg)
    }

    fn provenance(&self, cfg: &RunConfig) -> Vec<(String, String)> {
        vec![
            ("run.version".into(), VERSION.into()),
            ("run.config".into(), self.config.display().to_string()),
            ("run.seed".into(), cfg.scenario.ic.seed.to_string()),
            ("run.dt".into(), cfg.scenario.dt.to_string()),
        ]
    }
}

/// Files staged next to their destination and moved into place together,
/// so a failed command leaves nothing behind.
struct Staged {
    dir: PathBuf,
    created_dir: bool,
    files: Vec<(PathBuf, PathBuf)>,
}

impl Staged {
    fn new(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created_dir,
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, body: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>) -> Result<()> {
        let tmp = self.dir.join(format!(".{name}.partial"));
        self.files.push((tmp.clone(), self.dir.join(name)));
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        body(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn commit(mut self) -> Result<Vec<PathBuf>> {
        let files = std::mem::take(&mut self.files);
        let mut done = Vec::with_capacity(files.len());
        for (tmp, dst) in files {
            fs::rename(&tmp, &dst)?;
            done.push(dst);
        }
        Ok(done)
    }
}

impl Drop for Staged {
    fn drop(&mut self) {
        if self.files.is_empty() {
            return;
        }
        for (tmp, _) in &self.files {
            let _ = fs::remove_file(tmp);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

fn manifest(args: &RunArgs, cfg: &RunConfig, extra: &[(String, String)]) -> String {
    let mut out = String::from("# mesoplatoon run manifest; the lines below form a valid config\n");
    for (k, v) in args.provenance(cfg).iter().chain(extra) {
        out.push_str(&format!("# {k} = {v}\n"));
    }
    out.push_str(&config::serialize(cfg));
    out
}

fn cmd_simulate(args: &RunArgs) -> Result<()> {
    let cfg = args.load()?;
    info!(
        "simulating {} vehicles, {} spacing, dt = {}, t_end = {}",
        cfg.scenario.n_vehicles, cfg.scenario.controller.policy, cfg.scenario.dt, cfg.scenario.t_end
    );
    let log = simulate(&cfg.scenario)?;
    let mut staged = Staged::new(&cfg.output.dir)?;
    staged.write("trajectory.csv", |w| log.write_csv(w))?;
    let extra = vec![
        ("run.rows".to_string(), log.len().to_string()),
        ("run.vehicles".to_string(), log.n_vehicles().to_string()),
    ];
    let text = manifest(args, &cfg, &extra);
    staged.write("manifest.kv", |w| Ok(w.write_all(text.as_bytes())?))?;
    for p in staged.commit()? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_analyze(log_path: &Path, args: &RunArgs) -> Result<()> {
    let cfg = args.load()?;
    let file = fs::File::open(log_path).map_err(|e| Error::Schema(format!("cannot open {}: {e}", log_path.display())))?;
    let log = TrajectoryLog::read_csv(
        BufReader::new(file),
        cfg.scenario.controller.clone(),
        cfg.scenario.eq,
        cfg.scenario.psi_stride()?,
    )?;
    if log.n_vehicles() != cfg.scenario.n_vehicles {
        return Err(Error::Schema(format!(
            "log has {} vehicles, config expects {}",
            log.n_vehicles(),
            cfg.scenario.n_vehicles
        )));
    }
    let mut provenance = args.provenance(&cfg);
    provenance.push(("run.log".into(), log_path.display().to_string()));
    let report = analyze(&log, &cfg.analysis)?.with_provenance(provenance);
    write_report(&cfg.output.dir, &report)?;
    print!("{}", report.to_text());
    Ok(())
}

fn write_report(dir: &Path, report: &StabilityReport) -> Result<()> {
    let mut staged = Staged::new(dir)?;
    let text = report.to_text();
    let kv = report.to_kv();
    staged.write("report.txt", |w| Ok(w.write_all(text.as_bytes())?))?;
    staged.write("report.kv", |w| Ok(w.write_all(kv.as_bytes())?))?;
    for p in staged.commit()? {
        info!("wrote {}", p.display());
    }
    Ok(())
}

/// One evaluated grid point.
struct SweepRow {
    values: Vec<f64>,
    gamma_tilde: f64,
    alpha: f64,
    certificate: bool,
    sim: Option<SimFigures>,
    error: Option<String>,
}

struct SimFigures {
    platoon_peak: f64,
    bound: f64,
    within_bound: bool,
    terminal_max: f64,
    iss_violations: usize,
    log: TrajectoryLog,
}

fn grid(axes: &[(String, Vec<f64>)]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![Vec::new()], |acc, (_, values)| {
        acc.iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(*v);
                    p
                })
            })
            .collect()
    })
}

fn evaluate_point(cfg: &RunConfig, values: &[f64]) -> Result<SweepRow> {
    let mut sc = cfg.scenario.clone();
    for ((key, _), v) in cfg.sweep.axes.iter().zip(values) {
        set_scalar(&mut sc, key, *v, None)?;
    }
    sc.validate()?;
    let consts = constants(&sc.controller)?;
    let sim = if cfg.sweep.simulate {
        let log = simulate(&sc)?;
        let report = analyze(&log, &cfg.analysis)?;
        let m = report.metrics.as_ref();
        Some(SimFigures {
            platoon_peak: m.map_or(f64::NAN, |m| m.platoon_peak),
            bound: m.map_or(f64::NAN, |m| m.bound),
            within_bound: m.is_some_and(|m| m.within_bound()),
            terminal_max: m.map_or(f64::NAN, |m| m.terminal_max()),
            iss_violations: report.iss.as_ref().map_or(0, |r| r.violation_count),
            log,
        })
    } else {
        None
    };
    Ok(SweepRow {
        values: values.to_vec(),
        gamma_tilde: consts.gamma_tilde,
        alpha: consts.alpha,
        certificate: consts.certificate_valid(),
        sim,
        error: None,
    })
}

fn cmd_sweep(args: &RunArgs) -> Result<()> {
    let cfg = args.load()?;
    if cfg.sweep.axes.is_empty() {
        return Err(Error::Config {
            line: None,
            key: "sweep.axis".into(),
            reason: "no sweep axes declared".into(),
        });
    }
    let size = cfg.sweep.size();
    if size > cfg.sweep.cap {
        return Err(Error::Config {
            line: None,
            key: "sweep.cap".into(),
            reason: format!("grid has {size} points, cap is {}", cfg.sweep.cap),
        });
    }
    info!("sweeping {size} grid points");
    let points = grid(&cfg.sweep.axes);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.sweep.workers)
        .build()
        .map_err(|e| Error::Config {
            line: None,
            key: "sweep.workers".into(),
            reason: e.to_string(),
        })?;
    let rows: Vec<SweepRow> = pool.install(|| {
        points
            .par_iter()
            .map(|p| {
                evaluate_point(&cfg, p).unwrap_or_else(|e| SweepRow {
                    values: p.clone(),
                    gamma_tilde: f64::NAN,
                    alpha: f64::NAN,
                    certificate: false,
                    sim: None,
                    error: Some(e.to_string()),
                })
            })
            .collect()
    });
    for r in rows.iter().filter(|r| r.error.is_some()) {
        warn!("grid point {:?}: {}", r.values, r.error.as_deref().unwrap_or(""));
    }
    let scaling = size_scaling(&cfg, &rows)?;

    let mut staged = Staged::new(&cfg.output.dir)?;
    staged.write("sweep.csv", |w| write_sweep_csv(w, &cfg, &rows, &scaling))?;
    let text = manifest(args, &cfg, &[("run.grid_points".into(), size.to_string())]);
    staged.write("manifest.kv", |w| Ok(w.write_all(text.as_bytes())?))?;
    for p in staged.commit()? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

/// `max/min` platoon peak across the platoon-size axis, per combination of
/// the other axes. Empty unless simulations ran and `scenario.n_vehicles`
/// is swept.
fn size_scaling(cfg: &RunConfig, rows: &[SweepRow]) -> Result<BTreeMap<Vec<u64>, (f64, bool)>> {
    let mut out = BTreeMap::new();
    let Some(n_axis) = cfg.sweep.axes.iter().position(|(k, _)| k == "scenario.n_vehicles") else {
        return Ok(out);
    };
    if !cfg.sweep.simulate {
        return Ok(out);
    }
    let mut groups: BTreeMap<Vec<u64>, Vec<&TrajectoryLog>> = BTreeMap::new();
    for r in rows {
        if let Some(sim) = &r.sim {
            groups.entry(group_key(&r.values, n_axis)).or_default().push(&sim.log);
        }
    }
    for (key, logs) in groups {
        let logs: Vec<TrajectoryLog> = logs.into_iter().cloned().collect();
        let consts = constants(&logs[0].controller)?;
        let s = string_metrics(&logs, &consts, 1.1)?;
        out.insert(key, (s.peak_ratio, s.size_independent()));
    }
    Ok(out)
}

fn group_key(values: &[f64], skip: usize) -> Vec<u64> {
    values
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != skip)
        .map(|(_, v)| v.to_bits())
        .collect()
}

fn write_sweep_csv<W: Write>(
    w: &mut W,
    cfg: &RunConfig,
    rows: &[SweepRow],
    scaling: &BTreeMap<Vec<u64>, (f64, bool)>,
) -> Result<()> {
    let n_axis = cfg.sweep.axes.iter().position(|(k, _)| k == "scenario.n_vehicles");
    let mut header: Vec<String> = cfg.sweep.axes.iter().map(|(k, _)| k.clone()).collect();
    header.extend(["alpha", "gamma_tilde", "certificate"].map(String::from));
    if cfg.sweep.simulate {
        header.extend(
            ["platoon_peak", "bound", "within_bound", "terminal_max", "iss_violations"].map(String::from),
        );
        if !scaling.is_empty() {
            header.extend(["size_peak_ratio", "size_independent"].map(String::from));
        }
    }
    header.extend(["verdict", "error"].map(String::from));
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        let mut cells: Vec<String> = r.values.iter().map(|v| v.to_string()).collect();
        cells.push(format!("{:.9}", r.alpha));
        cells.push(format!("{:.9}", r.gamma_tilde));
        cells.push(pass(r.certificate).into());
        let mut ok = r.certificate && r.error.is_none();
        if cfg.sweep.simulate {
            match &r.sim {
                Some(s) => {
                    cells.push(format!("{:.9}", s.platoon_peak));
                    cells.push(format!("{:.9}", s.bound));
                    cells.push(s.within_bound.to_string());
                    cells.push(format!("{:.3e}", s.terminal_max));
                    cells.push(s.iss_violations.to_string());
                    ok &= s.within_bound && s.iss_violations == 0;
                }
                None => cells.extend(std::iter::repeat_n(String::new(), 5)),
            }
            if !scaling.is_empty() {
                match n_axis.and_then(|a| scaling.get(&group_key(&r.values, a))) {
                    Some((ratio, indep)) => {
                        cells.push(format!("{ratio:.6}"));
                        cells.push(indep.to_string());
                    }
                    None => cells.extend([String::new(), String::new()]),
                }
            }
        }
        cells.push(pass(ok).into());
        cells.push(r.error.as_deref().unwrap_or("").replace(',', ";"));
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let args = match &cli.command {
        Command::Simulate(a) | Command::Sweep(a) => a,
        Command::Analyze { run, .. } => run,
    };
    let level = fs::read_to_string(&args.config)
        .ok()
        .and_then(|t| config::parse(&t).ok())
        .map_or_else(|| "info".to_string(), |c| c.output.log_level);
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Analyze { log, run } => cmd_analyze(log, run),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
