//! Command-line front end: strict JSON configs, flag overrides, dispatch to
//! the core modules and persistence of their outputs.

use std::f64::consts::PI;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand as ClapSubcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use nskqg_core::acoustic::{self, AcousticMode};
use nskqg_core::diagnostics;
use nskqg_core::harness::{self, Check, DensityProfile, GridSpec, InitialSpec, SweepConfig};
use nskqg_core::lp::{self, DyadicFilterBank};
use nskqg_core::qg::{self, QgSolver, QgState};
use nskqg_core::rage::{self, CutoffOperator, EnergyNorm};
use nskqg_core::{
    capillarity, FluidState, NskError, PlaneGrid, Regime, ScaledParams, Snapshot, Solver, SpectralState,
};

#[derive(Debug, Parser)]
#[command(name = "nskqg", version, about = "Rotating Navier-Stokes-Korteweg simulator and spectral lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, ClapSubcommand)]
pub enum CliCommand {
    /// Integrate one run and log its energy functionals.
    Simulate(CommonArgs),
    /// Epsilon sweep against the quasi-geostrophic limit.
    Sweep(CommonArgs),
    /// Mode-by-mode dispersion table with oracle checks.
    Spectrum(CommonArgs),
    /// Windowed time averages of the acoustic flow along an epsilon sweep.
    Rage(CommonArgs),
    /// Quasi-geostrophic run with per-step energy bookkeeping.
    Qg(CommonArgs),
    /// Littlewood-Paley partition, tail and Bernstein checks.
    LpCheck(CommonArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory receiving every output file.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long = "t-final")]
    pub t_final: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long = "eps-list", value_delimiter = ',')]
    pub eps_list: Option<Vec<f64>>,
    /// Override any parameter, e.g. `--set grid.nh=32`; values are JSON.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Simulate,
    Sweep,
    Spectrum,
    Rage,
    Qg,
    LpCheck,
}

impl CliCommand {
    fn split(&self) -> (Subcommand, &CommonArgs) {
        match self {
            CliCommand::Simulate(a) => (Subcommand::Simulate, a),
            CliCommand::Sweep(a) => (Subcommand::Sweep, a),
            CliCommand::Spectrum(a) => (Subcommand::Spectrum, a),
            CliCommand::Rage(a) => (Subcommand::Rage, a),
            CliCommand::Qg(a) => (Subcommand::Qg, a),
            CliCommand::LpCheck(a) => (Subcommand::LpCheck, a),
        }
    }
}

/// Raw configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub subcommand: Subcommand,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub eps: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub nu: f64,
    pub t_final: f64,
    pub dt: Option<f64>,
    pub grid: GridSpec,
    pub initial: InitialSpec,
    pub log_every: usize,
    pub snapshot: bool,
    /// Allowed energy-inequality residual relative to `E(0)`.
    pub energy_tolerance: f64,
    pub density_floor: Option<f64>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            eps: 0.1,
            alpha: 1.0,
            gamma: 2.0,
            nu: 0.05,
            t_final: 0.5,
            dt: None,
            grid: GridSpec {
                nh: 32,
                nv: 8,
                lh: 4.0 * PI,
            },
            initial: InitialSpec {
                r0: DensityProfile::Zero,
                u0: Vec::new(),
            },
            log_every: 1,
            snapshot: true,
            energy_tolerance: 1e-3,
            density_floor: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    pub eps: f64,
    pub alpha: f64,
    /// Truncation radius on `|xi^h| + |k|`.
    pub m: f64,
    pub dxi: f64,
    pub dk: f64,
    pub tolerance: f64,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            eps: 1.0,
            alpha: 0.0,
            m: 8.0,
            dxi: 1.0,
            dk: PI,
            tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RageConfig {
    pub grid: GridSpec,
    pub eps_list: Vec<f64>,
    pub alpha: f64,
    pub gamma: f64,
    pub t_final: f64,
    pub bump_width: f64,
    /// Horizontal band of the datum in lattice units.
    pub modes: usize,
    pub window: f64,
    pub norm: EnergyNorm,
    /// Required final-to-initial ratio of the averages.
    pub ratio: f64,
}

impl Default for RageConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec {
                nh: 128,
                nv: 4,
                lh: 16.0 * PI,
            },
            eps_list: vec![0.1, 0.05, 0.025, 0.0125, 0.00625],
            alpha: 1.0,
            gamma: 2.0,
            t_final: 1.0,
            bump_width: 1.5,
            modes: 32,
            window: 2.0,
            norm: EnergyNorm::Symmetrizer,
            ratio: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QgConfig {
    pub n: usize,
    pub lh: f64,
    pub alpha: f64,
    pub nu: f64,
    pub t_final: f64,
    pub dt: f64,
    pub amplitude: f64,
    pub kmax: i64,
    pub tolerance: f64,
    pub jacobian_tolerance: f64,
    pub log_every: usize,
    pub snapshot: bool,
}

impl Default for QgConfig {
    fn default() -> Self {
        Self {
            n: 128,
            lh: 2.0 * PI,
            alpha: 1.0,
            nu: 0.01,
            t_final: 0.05,
            dt: 1e-3,
            amplitude: 0.1,
            kmax: 8,
            tolerance: 1e-6,
            jacobian_tolerance: 1e-10,
            log_every: 1,
            snapshot: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LpCheckConfig {
    pub grid: GridSpec,
    pub fields: usize,
    pub p: f64,
    pub j_min: i32,
    pub j_max: i32,
    /// Spectral decay exponent of the random fields.
    pub decay: f64,
    pub bernstein_bound: f64,
    pub partition_tolerance: f64,
}

impl Default for LpCheckConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec { nh: 64, nv: 8, lh: PI },
            fields: 50,
            p: 2.0,
            j_min: 1,
            j_max: 6,
            decay: 1.0,
            bernstein_bound: 4.0,
            partition_tolerance: 1e-12,
        }
    }
}

/// Fully typed parameter block of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Task {
    Simulate(SimulateConfig),
    Sweep(SweepConfig),
    Spectrum(SpectrumConfig),
    Rage(RageConfig),
    Qg(QgConfig),
    LpCheck(LpCheckConfig),
}

/// A validated run: typed task, seed, applied overrides and config hash.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub subcommand: Subcommand,
    pub seed: u64,
    pub task: Task,
    pub overrides: Vec<String>,
    pub hash: String,
    pub out: PathBuf,
}

impl Resolved {
    /// Canonical JSON of the resolved configuration, the input of the hash.
    pub fn canonical(&self) -> Value {
        canonical(self.subcommand, self.seed, &self.task)
    }
}

fn canonical(sub: Subcommand, seed: u64, task: &Task) -> Value {
    json!({ "subcommand": sub, "seed": seed, "params": task })
}

pub fn config_hash(value: &Value) -> String {
    hex::encode(Sha256::digest(value.to_string().as_bytes()))
}

fn set_path(root: &mut Value, path: &str, value: Value) -> anyhow::Result<Option<Value>> {
    if !root.is_object() {
        *root = Value::Object(Default::default());
    }
    let mut cur = root;
    let keys: Vec<&str> = path.split('.').collect();
    for k in &keys[..keys.len() - 1] {
        let obj = cur.as_object_mut().expect("object checked above");
        cur = obj.entry(k.to_string()).or_insert_with(|| Value::Object(Default::default()));
        if !cur.is_object() {
            bail!("cannot set `{path}`: `{k}` is not an object");
        }
    }
    let obj = cur.as_object_mut().expect("object checked above");
    Ok(obj.insert(keys[keys.len() - 1].to_string(), value))
}

/// Deep merge of `over` onto `base`; objects with different `kind` tags are
/// replaced whole.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            let retag = matches!((b.get("kind"), o.get("kind")), (Some(x), Some(y)) if x != y);
            if retag {
                *b = o;
                return;
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn defaults(sub: Subcommand) -> anyhow::Result<Value> {
    Ok(match sub {
        Subcommand::Simulate => serde_json::to_value(SimulateConfig::default())?,
        Subcommand::Sweep => json!({}),
        Subcommand::Spectrum => serde_json::to_value(SpectrumConfig::default())?,
        Subcommand::Rage => serde_json::to_value(RageConfig::default())?,
        Subcommand::Qg => serde_json::to_value(QgConfig::default())?,
        Subcommand::LpCheck => serde_json::to_value(LpCheckConfig::default())?,
    })
}

fn typed<T: DeserializeOwned>(v: &Value) -> anyhow::Result<T> {
    let v = if v.is_null() { json!({}) } else { v.clone() };
    serde_json::from_value(v).map_err(|e| anyhow!("invalid params: {e}"))
}

fn check_range(name: &str, v: f64, lo: f64, hi: f64) -> anyhow::Result<()> {
    if !(lo..=hi).contains(&v) {
        bail!("{name} = {v} must lie in [{lo}, {hi}]");
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> anyhow::Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        bail!("{name} = {v} must be positive");
    }
    Ok(())
}

fn check_decreasing(list: &[f64]) -> anyhow::Result<()> {
    if list.is_empty() || list.windows(2).any(|w| !(w[1] < w[0])) {
        bail!("eps_list must be nonempty and strictly decreasing");
    }
    Ok(())
}

fn validate(task: &Task) -> anyhow::Result<()> {
    match task {
        Task::Simulate(c) => {
            ScaledParams::new(c.eps, c.alpha, c.nu, c.gamma)?;
            c.grid.build()?;
            check_positive("t_final", c.t_final)?;
            if let Some(dt) = c.dt {
                check_positive("dt", dt)?;
            }
            if c.log_every == 0 {
                bail!("log_every must be at least 1");
            }
        }
        Task::Sweep(c) => c.validate()?,
        Task::Spectrum(c) => {
            check_range("eps", c.eps, 0.0, 1.0)?;
            check_range("alpha", c.alpha, 0.0, 1.0)?;
            check_positive("m", c.m)?;
            check_positive("dxi", c.dxi)?;
            check_positive("dk", c.dk)?;
        }
        Task::Rage(c) => {
            check_decreasing(&c.eps_list)?;
            for &eps in &c.eps_list {
                ScaledParams::new(eps, c.alpha, 1.0, c.gamma)?;
            }
            c.grid.build()?;
            check_positive("t_final", c.t_final)?;
            check_positive("window", c.window)?;
        }
        Task::Qg(c) => {
            check_range("alpha", c.alpha, 0.0, 1.0)?;
            check_positive("nu", c.nu)?;
            check_positive("dt", c.dt)?;
            check_positive("t_final", c.t_final)?;
            PlaneGrid::new(c.n, c.lh)?;
            if c.log_every == 0 {
                bail!("log_every must be at least 1");
            }
        }
        Task::LpCheck(c) => {
            c.grid.build()?;
            lp::tail_constant(c.j_min.max(1), c.p)?;
            if c.j_min < 1 || c.j_max < c.j_min {
                bail!("need 1 <= j_min <= j_max");
            }
        }
    }
    Ok(())
}

/// Builds a validated run from the command line; flags win over the file.
pub fn resolve(sub: Subcommand, args: &CommonArgs) -> anyhow::Result<Resolved> {
    let mut raw = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let raw: RunConfig =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            if raw.subcommand != sub {
                bail!(
                    "config file is for subcommand {:?}, but {:?} was requested",
                    raw.subcommand,
                    sub
                );
            }
            raw
        }
        None => RunConfig {
            subcommand: sub,
            seed: 0,
            params: json!({}),
        },
    };
    let mut params = defaults(sub)?;
    if !raw.params.is_null() {
        if !raw.params.is_object() {
            bail!("params must be a JSON object");
        }
        merge(&mut params, std::mem::take(&mut raw.params));
    }
    raw.params = params;
    let mut overrides = Vec::new();
    let mut flags: Vec<(String, Value)> = Vec::new();
    let named = [
        ("eps", args.eps),
        ("alpha", args.alpha),
        ("gamma", args.gamma),
        ("nu", args.nu),
        ("t_final", args.t_final),
        ("dt", args.dt),
    ];
    for (k, v) in named {
        if let Some(v) = v {
            flags.push((k.to_string(), json!(v)));
        }
    }
    if let Some(list) = &args.eps_list {
        flags.push(("eps_list".into(), json!(list)));
    }
    for s in &args.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{s}`"))?;
        let v = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        flags.push((k.to_string(), v));
    }
    for (k, v) in flags {
        let old = set_path(&mut raw.params, &k, v.clone())?;
        let msg = match old {
            Some(o) => format!("override: params.{k} = {v} (config file had {o})"),
            None => format!("override: params.{k} = {v}"),
        };
        eprintln!("{msg}");
        overrides.push(msg);
    }
    if let Some(seed) = args.seed {
        if args.config.is_some() && seed != raw.seed {
            let msg = format!("override: seed = {seed} (config file had {})", raw.seed);
            eprintln!("{msg}");
            overrides.push(msg);
        }
        raw.seed = seed;
    }
    let task = match sub {
        Subcommand::Simulate => Task::Simulate(typed(&raw.params)?),
        Subcommand::Sweep => Task::Sweep(typed(&raw.params)?),
        Subcommand::Spectrum => Task::Spectrum(typed(&raw.params)?),
        Subcommand::Rage => Task::Rage(typed(&raw.params)?),
        Subcommand::Qg => Task::Qg(typed(&raw.params)?),
        Subcommand::LpCheck => Task::LpCheck(typed(&raw.params)?),
    };
    validate(&task)?;
    let hash = config_hash(&canonical(sub, raw.seed, &task));
    Ok(Resolved {
        subcommand: sub,
        seed: raw.seed,
        task,
        overrides,
        hash,
        out: args.out.clone(),
    })
}

/// Parses an argument vector into a validated run.
pub fn parse<I, T>(argv: I) -> anyhow::Result<Resolved>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    let (sub, args) = cli.command.split();
    resolve(sub, args)
}

/// Result of a completed run.
#[derive(Debug, Clone, Serialize)]
pub struct Outcome {
    pub pass: bool,
    pub checks: Vec<Check>,
    pub outputs: Vec<PathBuf>,
}

impl Outcome {
    fn new(checks: Vec<Check>, outputs: Vec<PathBuf>) -> Self {
        Self {
            pass: checks.iter().all(|c| c.pass),
            checks,
            outputs,
        }
    }
}

fn check(name: &str, pass: bool, detail: String) -> Check {
    Check {
        name: name.into(),
        pass,
        detail,
    }
}

fn write_csv(path: &Path, hash: &str, header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "# config_hash={hash}")?;
    f.write_all(&buf)?;
    Ok(())
}

fn prepend_hash(path: &Path, hash: &str) -> anyhow::Result<()> {
    let body = std::fs::read(path)?;
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "# config_hash={hash}")?;
    f.write_all(&body)?;
    Ok(())
}

fn e(v: f64) -> String {
    format!("{v:e}")
}

/// Runs a resolved configuration and writes its outputs and manifest.
pub fn dispatch(run: &Resolved) -> anyhow::Result<Outcome> {
    std::fs::create_dir_all(&run.out).with_context(|| format!("creating {}", run.out.display()))?;
    let mut outcome = match &run.task {
        Task::Simulate(c) => simulate(run, c),
        Task::Sweep(c) => sweep(run, c),
        Task::Spectrum(c) => spectrum(run, c),
        Task::Rage(c) => rage_run(run, c),
        Task::Qg(c) => qg_run(run, c),
        Task::LpCheck(c) => lp_check(run, c),
    }?;
    for p in &mut outcome.outputs {
        if let Ok(rel) = p.strip_prefix(&run.out) {
            *p = rel.to_path_buf();
        }
    }
    let manifest = run.out.join("manifest.json");
    let body = json!({
        "config_hash": run.hash,
        "config": run.canonical(),
        "overrides": run.overrides,
        "outcome": outcome,
    });
    std::fs::write(&manifest, serde_json::to_string_pretty(&body)?)?;
    Ok(outcome)
}

fn breakdown(err: NskError) -> anyhow::Error {
    match err {
        NskError::Vacuum { min_rho, time } => anyhow!("vacuum breakdown at t = {time} (min rho = {min_rho:e})"),
        NskError::NonpositiveDensity { min } => anyhow!("vacuum breakdown at t = 0 (min rho = {min:e})"),
        other => anyhow::Error::new(other),
    }
}

#[derive(Serialize)]
struct SimRecord<'a> {
    time: f64,
    #[serde(rename = "E_eps")]
    e_eps: f64,
    #[serde(rename = "F_eps")]
    f_eps: f64,
    min_rho: f64,
    max_u: f64,
    config_hash: &'a str,
}

fn simulate(run: &Resolved, c: &SimulateConfig) -> anyhow::Result<Outcome> {
    let params = ScaledParams::new(c.eps, c.alpha, c.nu, c.gamma)?;
    let grid = c.grid.build()?;
    let r0 = harness::build_r0(&grid, &c.initial.r0);
    let u0 = harness::build_u0(&grid, &r0, &c.initial.u0, params.regime())?;
    let mut solver = Solver::new(grid.clone(), params)?;
    if let Some(f) = c.density_floor {
        solver = solver.with_density_floor(f);
    }
    let fs = solver.initialize(&r0, &u0).map_err(breakdown)?;
    let mut st = SpectralState::from_fluid(&grid, &fs, c.eps)?;
    let log_path = run.out.join("simulate.jsonl");
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
    let mut diags = Vec::new();
    let record = |f: &FluidState, log: &mut dyn Write| -> anyhow::Result<diagnostics::SnapshotDiagnostics> {
        let d = diagnostics::snapshot_diagnostics(&grid, f, &params)?;
        let rec = SimRecord {
            time: f.time,
            e_eps: d.energy,
            f_eps: d.bd_entropy,
            min_rho: d.min_rho,
            max_u: d.max_u,
            config_hash: &run.hash,
        };
        writeln!(log, "{}", serde_json::to_string(&rec)?)?;
        Ok(d)
    };
    diags.push(record(&fs, &mut log)?);
    let mut last = fs;
    let mut steps = 0usize;
    while st.time < c.t_final - 1e-12 {
        let cap = c.dt.unwrap_or(f64::INFINITY).min(0.25 * c.eps).min(c.t_final - st.time);
        let dt = solver.default_dt(solver.max_velocity(&st), cap);
        if let Err(err) = solver.step_spectral(&mut st, dt) {
            log.flush()?;
            return Err(breakdown(err));
        }
        steps += 1;
        let f = match st.to_fluid(&grid, c.eps) {
            Ok(f) => f,
            Err(NskError::NonpositiveDensity { min }) => {
                log.flush()?;
                return Err(breakdown(NskError::Vacuum {
                    min_rho: min,
                    time: st.time,
                }));
            }
            Err(other) => return Err(other.into()),
        };
        if steps % c.log_every == 0 || st.time >= c.t_final - 1e-12 {
            diags.push(record(&f, &mut log)?);
        } else {
            diags.push(diagnostics::snapshot_diagnostics(&grid, &f, &params)?);
        }
        last = f;
    }
    log.flush()?;
    let mut outputs = vec![log_path];
    let energy_csv = run.out.join("energy.csv");
    let rows: Vec<(f64, diagnostics::SnapshotDiagnostics)> = diags.iter().map(|d| (c.eps, *d)).collect();
    diagnostics::write_energy_csv(&energy_csv, &rows)?;
    prepend_hash(&energy_csv, &run.hash)?;
    outputs.push(energy_csv);
    if c.snapshot {
        let path = run.out.join("final.snap");
        let [u1, u2, u3] = last.u.components.clone();
        Snapshot::from_grid(&grid, vec![last.rho.clone(), u1, u2, u3])?.save(&path)?;
        outputs.push(path);
    }
    let e0 = diags[0].energy;
    let resid = if diags.len() >= 2 {
        diagnostics::energy_inequality_residual(&diags, c.nu)?
    } else {
        0.0
    };
    let checks = vec![check(
        "energy_inequality",
        resid <= c.energy_tolerance * e0,
        format!("residual {resid:e}, E(0) {e0:e}, steps {steps}"),
    )];
    Ok(Outcome::new(checks, outputs))
}

fn sweep(run: &Resolved, c: &SweepConfig) -> anyhow::Result<Outcome> {
    let mut report = harness::run_sweep(c)?;
    report.config_hash = Some(run.hash.clone());
    let dir = match &c.output_dir {
        Some(d) if d.is_absolute() => bail!("output_dir must be relative to --out"),
        Some(d) => run.out.join(d),
        None => run.out.clone(),
    };
    let outputs = harness::export(&report, &dir)?;
    Ok(Outcome {
        pass: report.pass,
        checks: report.checks.clone(),
        outputs,
    })
}

fn spectrum(run: &Resolved, c: &SpectrumConfig) -> anyhow::Result<Outcome> {
    let kappa = capillarity(c.eps, c.alpha);
    let modes = acoustic::truncation_modes(c.dxi, c.dk, c.m);
    let mut rows = Vec::with_capacity(modes.len());
    let mut worst = 0.0f64;
    let mut skew = 0.0f64;
    let mut kernel_mismatch = 0usize;
    for mode in &modes {
        let mode: AcousticMode = *mode;
        let sym = acoustic::assemble_kappa(mode, kappa);
        let ev = acoustic::eigenvalues_weighted(mode, mode.weight(kappa));
        let defect = acoustic::dispersion_defect(mode, kappa);
        let kdim = acoustic::nullspace(&sym.a).len();
        let sd = sym.skew_defect();
        worst = worst.max(defect);
        skew = skew.max(sd);
        if (kdim > 0) != (mode.k == 0.0) {
            kernel_mismatch += 1;
        }
        rows.push(vec![
            e(mode.xi[0]),
            e(mode.xi[1]),
            e(mode.k),
            e(mode.zeta()),
            e(mode.weight(kappa)),
            e(ev[0].im),
            e(ev[2].im),
            e(defect),
            kdim.to_string(),
            e(sd),
        ]);
    }
    let path = run.out.join("spectrum.csv");
    write_csv(
        &path,
        &run.hash,
        &["xi1", "xi2", "k", "zeta", "weight", "freq_fast", "freq_slow", "defect", "kernel_dim", "skew_defect"],
        &rows,
    )?;
    let checks = vec![
        check("dispersion_oracle", worst < c.tolerance, format!("max defect {worst:e} over {} modes", modes.len())),
        check("kernel_iff_k_zero", kernel_mismatch == 0, format!("{kernel_mismatch} mismatched modes")),
        check("symmetrizer_skew", skew < 1e-12, format!("max defect {skew:e}")),
    ];
    Ok(Outcome::new(checks, vec![path]))
}

fn rage_run(run: &Resolved, c: &RageConfig) -> anyhow::Result<Outcome> {
    let grid = c.grid.build()?;
    let y = rage::broadband_datum(&grid, c.bump_width, c.modes)?;
    let cutoff = CutoffOperator::new(&grid, c.modes as f64 * grid.dxi() + PI, rage::gaussian_window(&grid, c.window))?;
    let base = ScaledParams::new(c.eps_list[0], c.alpha, 1.0, c.gamma)?;
    let rows = rage::rage_sweep(&grid, &y, &base, &c.eps_list, c.t_final, &cutoff, c.norm)?;
    let path = run.out.join("rage.csv");
    rage::write_rage_csv(&path, &rows)?;
    prepend_hash(&path, &run.hash)?;
    let avgs: Vec<String> = rows.iter().map(|r| format!("{:.4e}", r.average)).collect();
    let checks = vec![check(
        "rage_decay",
        rage::rage_sweep_passes(&rows, c.ratio),
        format!("averages [{}]", avgs.join(", ")),
    )];
    Ok(Outcome::new(checks, vec![path]))
}

#[derive(Serialize)]
struct QgRecord<'a> {
    time: f64,
    energy: f64,
    dissipation: f64,
    residual: f64,
    jacobian_power: f64,
    config_hash: &'a str,
}

fn qg_run(run: &Resolved, c: &QgConfig) -> anyhow::Result<Outcome> {
    let regime = if c.alpha == 0.0 { Regime::Constant } else { Regime::Vanishing };
    let plane = PlaneGrid::new(c.n, c.lh)?;
    let solver = QgSolver::new(plane.clone(), regime, c.nu)?;
    let r0 = solver.project(&qg::random_plane_field(&plane, c.kmax, c.amplitude, run.seed))?;
    let mut state = QgState::new(r0, regime);
    let log_path = run.out.join("qg.jsonl");
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
    let mut worst = 0.0f64;
    let mut worst_jac = 0.0f64;
    let mut steps = 0usize;
    while state.time < c.t_final - 1e-12 {
        let dt = c.dt.min(c.t_final - state.time);
        let (next, b) = solver.step_with_budget(&state, dt)?;
        steps += 1;
        if dt == c.dt {
            worst = worst.max(b.residual.abs());
        }
        worst_jac = worst_jac.max(b.jacobian_power.abs());
        if steps % c.log_every == 0 {
            let rec = QgRecord {
                time: next.time,
                energy: b.energy_after,
                dissipation: b.dissipation_after,
                residual: b.residual,
                jacobian_power: b.jacobian_power,
                config_hash: &run.hash,
            };
            writeln!(log, "{}", serde_json::to_string(&rec)?)?;
        }
        state = next;
    }
    log.flush()?;
    let mut outputs = vec![log_path];
    if c.snapshot {
        let path = run.out.join("qg_final.snap");
        Snapshot::plane(c.n, c.lh, state.r.clone())?.save(&path)?;
        outputs.push(path);
    }
    let checks = vec![
        check("energy_law", worst < c.tolerance, format!("max relative residual {worst:e} over {steps} steps")),
        check(
            "jacobian_neutral",
            worst_jac < c.jacobian_tolerance,
            format!("max relative jacobian power {worst_jac:e}"),
        ),
    ];
    Ok(Outcome::new(checks, outputs))
}

fn lp_check(run: &Resolved, c: &LpCheckConfig) -> anyhow::Result<Outcome> {
    let grid = c.grid.build()?;
    let bank = DyadicFilterBank::new(&grid);
    let defect = bank.partition_defect();
    let mut rows = Vec::new();
    let mut tail_fail = 0usize;
    for field in 0..c.fields {
        let f = lp::random_band_field(&grid, 0.0, f64::INFINITY, c.decay, run.seed.wrapping_add(field as u64));
        for j in c.j_min..=c.j_max {
            let r = lp::tail_bound_check(&bank, &f, j, c.p)?;
            if !r.pass {
                tail_fail += 1;
            }
            rows.push(vec![
                field.to_string(),
                j.to_string(),
                e(r.left),
                e(r.right),
                e(r.c_j),
                r.pass.to_string(),
            ]);
        }
    }
    let tail_path = run.out.join("lp_tail.csv");
    write_csv(&tail_path, &run.hash, &["field", "j", "left", "right", "c_j", "pass"], &rows)?;
    let mut ratios = Vec::new();
    for j in c.j_min..=c.j_max {
        let f = lp::random_band_field(
            &grid,
            2f64.powi(j - 1),
            2f64.powi(j + 1),
            0.0,
            run.seed.wrapping_add(1000 + j as u64),
        );
        ratios.push((j, lp::bernstein_ratio(&bank, &f, j, 1, c.p)?));
    }
    let rep = lp::bernstein_report(ratios, c.bernstein_bound);
    let brows: Vec<Vec<String>> = rep.ratios.iter().map(|(j, r)| vec![j.to_string(), e(*r)]).collect();
    let bern_path = run.out.join("lp_bernstein.csv");
    write_csv(&bern_path, &run.hash, &["j", "ratio"], &brows)?;
    let checks = vec![
        check("partition_of_unity", defect < c.partition_tolerance, format!("defect {defect:e}")),
        check("tail_bound", tail_fail == 0, format!("{tail_fail} of {} cases fail", rows.len())),
        check("bernstein_stability", rep.pass, format!("stability {:.4}", rep.stability)),
    ];
    Ok(Outcome::new(checks, vec![tail_path, bern_path]))
}

/// Builds the global thread pool from `NSKQG_THREADS`, when set.
pub fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("NSKQG_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| anyhow!("NSKQG_THREADS = `{v}` is not a thread count"))?;
        if n == 0 {
            bail!("NSKQG_THREADS must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

/// Full command-line entry; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() { 2 } else { 0 };
        }
    };
    if let Err(err) = init_threads() {
        eprintln!("error: {err:#}");
        return 2;
    }
    let (sub, args) = cli.command.split();
    let resolved = match resolve(sub, args) {
        Ok(r) => r,
        Err(err) => {
            eprintln!("error: {err:#}");
            return 2;
        }
    };
    match dispatch(&resolved) {
        Ok(outcome) => {
            for c in &outcome.checks {
                println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            println!("config_hash {}", resolved.hash);
            if outcome.pass {
                0
            } else {
                1
            }
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            2
        }
    }
}
