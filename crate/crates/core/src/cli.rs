//! Command-line front end: settings resolution, the four workflows and
//! their artifacts.
//!
//! Settings are resolved in order: preset defaults, `--config` file,
//! `--set key=value` pairs, then dedicated flags. The resolved settings are
//! echoed to `config.txt`; `manifest.txt` adds run metadata and can be fed
//! back through `--config` to reproduce every numeric artifact.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::baselines::{MsGarchOptions, VarianceCarry};
use crate::error::{invalid, Error, Result};
use crate::exec::{label_seed, with_workers, Execution};
use crate::experiment::{
    estimate, median_metric, run_experiment_to, simulate_replicate, write_reports, Dgp, Estimator,
    ExperimentConfig,
};
use crate::generators::{GarchParams, PiecewiseSpectrum, SynthOptions};
use crate::io::{
    csv_headers, ingest_csv, read_series, read_spectrogram, read_tvspectrum, write_cutpoints,
    write_k_hist, write_series, write_spectrogram, write_traces, write_tvspectrum, KeyValues,
    Spectrogram,
};
use crate::metrics::{mse, skl, MetricReport};
use crate::partition::PartitionConfig;
use crate::sampler::{posterior_summary, run_chain, write_draws, MoveKind, SamplerConfig};
use crate::spectral::{default_freq_grid, TvSpectrum};

pub const CONFIG_FILE: &str = "config.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const ERROR_FILE: &str = "error.json";

/// Manifest keys that describe a run rather than configure it; ignored when
/// a manifest is read back as a config file.
const RUN_INFO_KEYS: [&str; 6] = ["command", "tvspec_version", "wall_time_s", "status", "artifacts", "error"];

#[derive(Parser, Debug)]
#[command(name = "tvspec", version, about = "Time-varying spectral estimation with GARCH baselines")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Flat key = value settings file (a manifest also works).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["desk", "paper"])]
    pub preset: Option<String>,
    /// Worker threads for replicate-level parallelism (0 = all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Analyse squared returns instead of returns.
    #[arg(long, global = true)]
    pub squared: bool,
    #[arg(long, global = true)]
    pub price_col: Option<String>,
    #[arg(long, global = true)]
    pub date_col: Option<String>,
    /// Override any setting; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Simulate one replicate and its true time-varying spectrum.
    Simulate {
        #[arg(long)]
        dgp: Option<String>,
    },
    /// Fit the piecewise nonparametric model to a series or a price file.
    Fit {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Fit estimators to a simulated series and score them against the truth.
    Evaluate {
        #[arg(long)]
        series: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Extra spectrogram file to score alongside the estimators.
        #[arg(long)]
        estimate: Option<PathBuf>,
    },
    /// Run a replicated simulation study.
    Experiment {
        #[arg(long)]
        dgp: Option<String>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Fit { .. } => "fit",
            Command::Evaluate { .. } => "evaluate",
            Command::Experiment { .. } => "experiment",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => invalid(format!("unknown preset '{s}'")),
        }
    }
}

/// Every tunable of every command, resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub out: PathBuf,
    pub workers: usize,
    pub dgp: Dgp,
    pub t_len: usize,
    pub replicates: usize,
    /// Replicate index used by `simulate` and `evaluate`.
    pub replicate: usize,
    pub estimators: Vec<Estimator>,
    pub sampler: SamplerConfig,
    pub partition: PartitionConfig,
    pub n_freqs: usize,
    pub garch: GarchParams,
    pub msgarch: MsGarchOptions,
    pub zero_dc: bool,
    pub piecewise_file: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub price_col: Option<String>,
    pub date_col: Option<String>,
    pub squared: bool,
    pub series: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub estimate: Option<PathBuf>,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let exp = match preset {
            Preset::Desk => ExperimentConfig::desk(Dgp::Garch),
            Preset::Paper => ExperimentConfig::paper(Dgp::Garch),
        };
        Self {
            preset,
            seed: exp.master_seed,
            out: PathBuf::from("tvspec_out"),
            workers: 1,
            dgp: exp.dgp,
            t_len: exp.t_len,
            replicates: exp.n_replicates,
            replicate: 0,
            estimators: exp.estimators,
            sampler: SamplerConfig {
                keep_states: true,
                ..exp.sampler
            },
            partition: exp.partition,
            n_freqs: exp.n_freqs,
            garch: exp.garch,
            msgarch: exp.msgarch,
            zero_dc: exp.synth.zero_dc,
            piecewise_file: None,
            input: None,
            price_col: None,
            date_col: None,
            squared: false,
            series: None,
            truth: None,
            estimate: None,
        }
    }

    /// Apply one `key = value` setting.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::InvalidInput(format!("setting '{key}': cannot parse '{v}'")))
        }
        fn path(v: &str) -> Option<PathBuf> {
            (!v.is_empty()).then(|| PathBuf::from(v))
        }
        fn text(v: &str) -> Option<String> {
            (!v.is_empty()).then(|| v.to_string())
        }
        let s = &mut self.sampler;
        match key {
            "preset" => self.preset = value.parse()?,
            "seed" => self.seed = num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "workers" => self.workers = num(key, value)?,
            "dgp" => self.dgp = value.parse()?,
            "t_len" => self.t_len = num(key, value)?,
            "replicates" => self.replicates = num(key, value)?,
            "replicate" => self.replicate = num(key, value)?,
            "estimators" => {
                self.estimators = value
                    .split(',')
                    .map(|e| e.trim().parse())
                    .collect::<Result<Vec<_>>>()?
            }
            "n_iter" => s.n_iter = num(key, value)?,
            "n_burn" => s.n_burn = num(key, value)?,
            "thin" => s.thin = num(key, value)?,
            "keep_states" => s.keep_states = num(key, value)?,
            "move_birth" => s.move_probs.birth = num(key, value)?,
            "move_death" => s.move_probs.death = num(key, value)?,
            "move_relocate" => s.move_probs.relocate = num(key, value)?,
            "move_within" => s.move_probs.within = num(key, value)?,
            "relocate_window" => s.relocate_window = num(key, value)?,
            "relocate_local_prob" => s.relocate_local_prob = num(key, value)?,
            "rw_step" => s.rw_step = num(key, value)?,
            "newton_tol" => s.newton.tol = num(key, value)?,
            "newton_max_iter" => s.newton.max_iter = num(key, value)?,
            "max_basis" => s.max_basis = num(key, value)?,
            "alpha_var" => s.prior.alpha_var = num(key, value)?,
            "tau_shape" => s.prior.tau_shape = num(key, value)?,
            "tau_scale" => s.prior.tau_scale = num(key, value)?,
            "t_min" => self.partition.t_min = num(key, value)?,
            "max_segments" => self.partition.max_segments = num(key, value)?,
            "n_freqs" => self.n_freqs = num(key, value)?,
            "garch_mu" => self.garch.mu = num(key, value)?,
            "garch_alpha0" => self.garch.alpha0 = num(key, value)?,
            "garch_alpha1" => self.garch.alpha1 = num(key, value)?,
            "garch_beta1" => self.garch.beta1 = num(key, value)?,
            "msgarch_regimes" => self.msgarch.n_regimes = num(key, value)?,
            "msgarch_starts" => self.msgarch.n_starts = num(key, value)?,
            "msgarch_carry" => {
                self.msgarch.carry = match value {
                    "per_regime" => VarianceCarry::PerRegime,
                    "collapsed" => VarianceCarry::Collapsed,
                    _ => return invalid(format!("msgarch_carry must be per_regime or collapsed, got '{value}'")),
                }
            }
            "zero_dc" => self.zero_dc = num(key, value)?,
            "piecewise_file" => self.piecewise_file = path(value),
            "input" => self.input = path(value),
            "price_col" => self.price_col = text(value),
            "date_col" => self.date_col = text(value),
            "squared" => self.squared = num(key, value)?,
            "series" => self.series = path(value),
            "truth" => self.truth = path(value),
            "estimate" => self.estimate = path(value),
            _ => return invalid(format!("unknown setting '{key}'")),
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        let opt_path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let s = &self.sampler;
        kv.set("preset", self.preset);
        kv.set("seed", self.seed);
        kv.set("out", self.out.display());
        kv.set("workers", self.workers);
        kv.set("dgp", self.dgp);
        kv.set("t_len", self.t_len);
        kv.set("replicates", self.replicates);
        kv.set("replicate", self.replicate);
        kv.set(
            "estimators",
            self.estimators.iter().map(|e| e.label()).collect::<Vec<_>>().join(","),
        );
        kv.set("n_iter", s.n_iter);
        kv.set("n_burn", s.n_burn);
        kv.set("thin", s.thin);
        kv.set("keep_states", s.keep_states);
        kv.set("move_birth", s.move_probs.birth);
        kv.set("move_death", s.move_probs.death);
        kv.set("move_relocate", s.move_probs.relocate);
        kv.set("move_within", s.move_probs.within);
        kv.set("relocate_window", s.relocate_window);
        kv.set("relocate_local_prob", s.relocate_local_prob);
        kv.set("rw_step", s.rw_step);
        kv.set("newton_tol", s.newton.tol);
        kv.set("newton_max_iter", s.newton.max_iter);
        kv.set("max_basis", s.max_basis);
        kv.set("alpha_var", s.prior.alpha_var);
        kv.set("tau_shape", s.prior.tau_shape);
        kv.set("tau_scale", s.prior.tau_scale);
        kv.set("t_min", self.partition.t_min);
        kv.set("max_segments", self.partition.max_segments);
        kv.set("n_freqs", self.n_freqs);
        kv.set("garch_mu", self.garch.mu);
        kv.set("garch_alpha0", self.garch.alpha0);
        kv.set("garch_alpha1", self.garch.alpha1);
        kv.set("garch_beta1", self.garch.beta1);
        kv.set("msgarch_regimes", self.msgarch.n_regimes);
        kv.set("msgarch_starts", self.msgarch.n_starts);
        kv.set(
            "msgarch_carry",
            match self.msgarch.carry {
                VarianceCarry::PerRegime => "per_regime",
                VarianceCarry::Collapsed => "collapsed",
            },
        );
        kv.set("zero_dc", self.zero_dc);
        kv.set("piecewise_file", opt_path(&self.piecewise_file));
        kv.set("input", opt_path(&self.input));
        kv.set("price_col", self.price_col.clone().unwrap_or_default());
        kv.set("date_col", self.date_col.clone().unwrap_or_default());
        kv.set("squared", self.squared);
        kv.set("series", opt_path(&self.series));
        kv.set("truth", opt_path(&self.truth));
        kv.set("estimate", opt_path(&self.estimate));
        kv
    }

    /// Resolve settings from parsed arguments.
    pub fn resolve(cli: &Cli) -> Result<Self> {
        let file = cli.config.as_deref().map(KeyValues::read).transpose()?;
        if let Some(cmd) = file.as_ref().and_then(|f| f.get("command")) {
            if cmd != cli.command.name() {
                return invalid(format!(
                    "config was written by '{cmd}', not '{}'",
                    cli.command.name()
                ));
            }
        }
        let preset = match (&cli.preset, file.as_ref().and_then(|f| f.get("preset"))) {
            (Some(p), _) => p.parse()?,
            (None, Some(p)) => p.parse()?,
            (None, None) => Preset::Desk,
        };
        let mut cfg = Self::preset(preset);
        if let Some(f) = &file {
            for (k, v) in &f.0 {
                if k != "preset" && !RUN_INFO_KEYS.contains(&k.as_str()) {
                    cfg.apply(k, v)?;
                }
            }
        }
        for pair in &cli.set {
            let Some((k, v)) = pair.split_once('=') else {
                return invalid(format!("--set expects KEY=VALUE, got '{pair}'"));
            };
            cfg.apply(k.trim(), v.trim())?;
        }
        if let Some(v) = cli.seed {
            cfg.seed = v;
        }
        if let Some(v) = &cli.out {
            cfg.out = v.clone();
        }
        if let Some(v) = cli.workers {
            cfg.workers = v;
        }
        if cli.squared {
            cfg.squared = true;
        }
        if let Some(v) = &cli.price_col {
            cfg.price_col = Some(v.clone());
        }
        if let Some(v) = &cli.date_col {
            cfg.date_col = Some(v.clone());
        }
        match &cli.command {
            Command::Simulate { dgp } | Command::Experiment { dgp } => {
                if let Some(d) = dgp {
                    cfg.dgp = d.parse()?;
                }
            }
            Command::Fit { input } => {
                if input.is_some() {
                    cfg.input = input.clone();
                }
            }
            Command::Evaluate {
                series,
                truth,
                estimate,
            } => {
                if series.is_some() {
                    cfg.series = series.clone();
                }
                if truth.is_some() {
                    cfg.truth = truth.clone();
                }
                if estimate.is_some() {
                    cfg.estimate = estimate.clone();
                }
            }
        }
        Ok(cfg)
    }

    /// Checks that can be made before any computation.
    pub fn validate(&self, command: &Command) -> Result<()> {
        self.sampler.validate()?;
        self.partition.validate()?;
        self.garch.validate()?;
        if self.n_freqs < 2 {
            return invalid("n_freqs must be at least 2");
        }
        if self.msgarch.n_regimes == 0 || self.msgarch.n_starts == 0 {
            return invalid("msgarch_regimes and msgarch_starts must be positive");
        }
        let must_exist = |what: &str, p: &Option<PathBuf>| -> Result<()> {
            match p {
                Some(p) if !p.is_file() => invalid(format!("{what} file {} does not exist", p.display())),
                _ => Ok(()),
            }
        };
        must_exist("piecewise", &self.piecewise_file)?;
        match command {
            Command::Simulate { .. } | Command::Experiment { .. } => {
                if matches!(command, Command::Simulate { .. }) && self.replicate >= self.replicates {
                    return invalid("replicate index must be below the replicate count");
                }
                self.experiment_config(self.dgp, None)?.validate()?;
            }
            Command::Fit { .. } => {
                if self.input.is_none() {
                    return invalid("fit needs an input file (--input or input = ...)");
                }
                must_exist("input", &self.input)?;
            }
            Command::Evaluate { .. } => {
                if self.series.is_none() || self.truth.is_none() {
                    return invalid("evaluate needs --series and --truth");
                }
                must_exist("series", &self.series)?;
                must_exist("truth", &self.truth)?;
                must_exist("estimate", &self.estimate)?;
                if self.estimators.is_empty() {
                    return invalid("no estimators requested");
                }
            }
        }
        Ok(())
    }

    fn execution(&self) -> Execution {
        if self.workers == 1 {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    /// Experiment configuration for `dgp`; `t_len` overrides the setting.
    pub fn experiment_config(&self, dgp: Dgp, t_len: Option<usize>) -> Result<ExperimentConfig> {
        let piecewise = match &self.piecewise_file {
            Some(p) => Some(PiecewiseSpectrum::read(File::open(p)?)?),
            None => None,
        };
        Ok(ExperimentConfig {
            dgp,
            n_replicates: self.replicates,
            t_len: t_len.unwrap_or(self.t_len),
            estimators: self.estimators.clone(),
            sampler: SamplerConfig {
                keep_states: false,
                ..self.sampler.clone()
            },
            partition: self.partition,
            msgarch: self.msgarch,
            master_seed: self.seed,
            n_freqs: self.n_freqs,
            piecewise,
            garch: self.garch,
            synth: SynthOptions { zero_dc: self.zero_dc },
            exec: self.execution(),
        })
    }
}

/// Artifacts written so far, recorded in the manifest.
struct Run {
    out: PathBuf,
    artifacts: Vec<String>,
}

impl Run {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let f = File::create(self.out.join(name))?;
        self.artifacts.push(name.to_string());
        Ok(BufWriter::new(f))
    }
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    status: &'a str,
    command: &'a str,
    kind: &'a str,
    message: String,
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidInput(_) => "invalid_input",
        Error::EmptyDomain(_) => "empty_domain",
        Error::Numerical(_) => "numerical",
        Error::Resource(_) => "resource",
        Error::Parse { .. } => "parse",
        Error::Io(_) => "io",
        Error::Csv(_) => "csv",
        Error::Json(_) => "json",
    }
}

/// Exit status for an error: 2 for bad configuration or input, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidInput(_) | Error::Parse { .. } => 2,
        _ => 1,
    }
}

/// Run a parsed command. On failure a JSON error record is printed to
/// stderr (and written to `error.json` when the output directory exists)
/// and the exit status is nonzero.
pub fn run(cli: &Cli) -> i32 {
    let name = cli.command.name();
    let result = RunConfig::resolve(cli).and_then(|cfg| {
        cfg.validate(&cli.command)?;
        execute(&cli.command, &cfg).map(|_| ())
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let record = ErrorRecord {
                status: "error",
                command: name,
                kind: error_kind(&e),
                message: e.to_string(),
            };
            let json = serde_json::to_string(&record).unwrap_or_else(|_| format!("{{\"status\":\"error\",\"message\":{:?}}}", e.to_string()));
            eprintln!("{json}");
            if let Ok(cfg) = RunConfig::resolve(cli) {
                if cfg.out.is_dir() {
                    let _ = fs::write(cfg.out.join(ERROR_FILE), format!("{json}\n"));
                }
            }
            exit_code(&e)
        }
    }
}

/// Parse arguments and run; returns the exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            code
        }
    }
}

/// Execute a validated command, writing artifacts and the manifest.
/// Returns the list of artifacts written.
pub fn execute(command: &Command, cfg: &RunConfig) -> Result<Vec<String>> {
    fs::create_dir_all(&cfg.out)?;
    let _ = fs::remove_file(cfg.out.join(ERROR_FILE));
    let echo = cfg.to_key_values().render();
    if let Command::Experiment { .. } = command {
        // A metrics file from different settings must not be resumed.
        let metrics = cfg.out.join("metrics.csv");
        if metrics.exists() {
            let previous = fs::read_to_string(cfg.out.join(CONFIG_FILE)).ok();
            let strip = |s: &str| {
                KeyValues::parse(s).map(|mut kv| {
                    kv.0.remove("workers");
                    kv.0.remove("out");
                    kv
                })
            };
            let same = match previous {
                Some(p) => strip(&p)? == strip(&echo)?,
                None => false,
            };
            if !same {
                return invalid(format!(
                    "{} holds results from different settings; use a fresh output directory",
                    metrics.display()
                ));
            }
        }
    }
    let mut run = Run {
        out: cfg.out.clone(),
        artifacts: Vec::new(),
    };
    run.create(CONFIG_FILE)?.write_all(echo.as_bytes())?;
    let start = Instant::now();
    let result = match command {
        Command::Simulate { .. } => cmd_simulate(cfg, &mut run),
        Command::Fit { .. } => cmd_fit(cfg, &mut run),
        Command::Evaluate { .. } => cmd_evaluate(cfg, &mut run),
        Command::Experiment { .. } => cmd_experiment(cfg, &mut run),
    };
    let mut manifest = cfg.to_key_values();
    manifest.set("command", command.name());
    manifest.set("tvspec_version", env!("CARGO_PKG_VERSION"));
    manifest.set("wall_time_s", format!("{:.3}", start.elapsed().as_secs_f64()));
    manifest.set("artifacts", run.artifacts.join(","));
    match &result {
        Ok(()) => manifest.set("status", "ok"),
        Err(e) => {
            manifest.set("status", "partial");
            manifest.set("error", e.to_string().replace('\n', " "));
        }
    }
    fs::write(cfg.out.join(MANIFEST_FILE), manifest.render())?;
    result.map(|()| run.artifacts)
}

fn cmd_simulate(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let exp = cfg.experiment_config(cfg.dgp, None)?;
    let (y, truth) = simulate_replicate(&exp, cfg.replicate)?;
    write_series(y.values(), None, run.create("series.csv")?)?;
    write_tvspectrum(&truth, run.create("truth.csv")?)?;
    if cfg.dgp == Dgp::Piecewise {
        let ps = match &exp.piecewise {
            Some(p) => p.rescaled(exp.t_len)?,
            None => PiecewiseSpectrum::reference(exp.t_len)?,
        };
        ps.write(run.create("piecewise.csv")?)?;
    }
    log::info!("simulated {} observations from the {} process", y.len(), cfg.dgp);
    Ok(())
}

/// Series to fit: a `t,value` file as is, otherwise returns from the price
/// column.
fn load_fit_input(cfg: &RunConfig) -> Result<(Vec<f64>, Option<Vec<String>>)> {
    let path = cfg.input.as_deref().expect("validated");
    let headers = csv_headers(path)?;
    let is_series = cfg.price_col.is_none() && headers.iter().any(|h| h == "value");
    if is_series {
        let mut y = read_series(File::open(path)?)?;
        if cfg.squared {
            y.iter_mut().for_each(|v| *v *= *v);
        }
        return Ok((y, None));
    }
    let Some(price_col) = cfg.price_col.as_deref() else {
        return invalid(format!(
            "{} has no 'value' column; name the price column with --price-col",
            path.display()
        ));
    };
    let rs = ingest_csv(
        path,
        price_col,
        cfg.date_col.as_deref(),
        cfg.partition.t_min + 1,
        cfg.squared,
    )?;
    if !rs.dropped_rows.is_empty() {
        log::warn!("{} rows dropped during ingestion", rs.dropped_rows.len());
    }
    let y = rs.series(cfg.squared);
    let dates = (!rs.dates.is_empty()).then_some(rs.dates);
    Ok((y, dates))
}

fn cmd_fit(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let (y, dates) = load_fit_input(cfg)?;
    let t_min = cfg.partition.t_min;
    if y.len() < t_min {
        return invalid(format!("series has {} observations, fewer than t_min = {t_min}", y.len()));
    }
    if y.len() < 2 * t_min {
        log::warn!("series shorter than 2 t_min; only one segment is possible");
    }
    write_series(&y, dates.as_deref(), run.create("series.csv")?)?;
    let scfg = SamplerConfig {
        rng_seed: label_seed(cfg.seed, "adaptspec"),
        ..cfg.sampler.clone()
    };
    let grid = default_freq_grid(cfg.n_freqs);
    let draws = run_chain(&y, &scfg, &cfg.partition, &grid)?;
    let summary = posterior_summary(&draws)?;
    write_spectrogram(&Spectrogram::from_summary(&summary), run.create("spectrogram.csv")?)?;
    write_k_hist(&draws, run.create("k_hist.csv")?)?;
    if draws.keeps_states() {
        write_cutpoints(&draws, run.create("cutpoints.csv")?)?;
        write_traces(&draws, run.create("traces.csv")?)?;
        write_draws(&draws, run.create("draws.jsonl")?)?;
        PiecewiseSpectrum::from_draws(&draws)?.write(run.create("piecewise.csv")?)?;
    }
    log::info!(
        "fit {} observations; posterior mode K = {}, birth/death/relocate acceptance {:.3}/{:.3}/{:.3}",
        y.len(),
        draws.k_mode(),
        draws.stats.acceptance_rate(MoveKind::Birth),
        draws.stats.acceptance_rate(MoveKind::Death),
        draws.stats.acceptance_rate(MoveKind::Relocate),
    );
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let y = read_series(File::open(cfg.series.as_deref().expect("validated"))?)?;
    let truth = read_tvspectrum(File::open(cfg.truth.as_deref().expect("validated"))?)?;
    let times: Vec<usize> = (1..=y.len()).collect();
    if truth.time_grid() != times.as_slice() {
        return invalid("truth must cover t = 1..T of the series");
    }
    let n_freqs = truth.n_freqs();
    if truth.freq_grid() != default_freq_grid(n_freqs).as_slice() {
        return invalid("truth must use the equally spaced frequency grid on [0, 1/2]");
    }
    let exp = ExperimentConfig {
        n_freqs,
        ..cfg.experiment_config(cfg.dgp, Some(y.len()))?
    };
    let seed = exp.replicate_seed(cfg.replicate);
    let mut reports = Vec::new();
    let mut score = |label: &str, est: Result<TvSpectrum>, secs: f64, run: &mut Run| -> Result<()> {
        let report = |s: f64, m: f64, error: String| MetricReport {
            dgp: cfg.dgp.to_string(),
            estimator: label.to_string(),
            replicate: cfg.replicate,
            seed,
            skl: s,
            mse: m,
            wall_time_s: secs,
            error,
        };
        match est.and_then(|f| Ok((skl(&truth, &f)?, mse(&truth, &f)?, f))) {
            Ok((s, m, f)) => {
                write_tvspectrum(&f, run.create(&format!("estimate_{label}.csv"))?)?;
                reports.push(report(s, m, String::new()));
            }
            Err(e) => {
                log::warn!("estimator {label}: {e}");
                reports.push(report(f64::NAN, f64::NAN, e.to_string()));
            }
        }
        Ok(())
    };
    for &est in &exp.estimators {
        let start = Instant::now();
        let f = estimate(&exp, est, &y, cfg.replicate);
        score(est.label(), f, start.elapsed().as_secs_f64(), run)?;
    }
    if let Some(p) = &cfg.estimate {
        let f = read_spectrogram(File::open(p)?).map(|s| s.mean);
        score("file", f, 0.0, run)?;
    }
    write_reports(&reports, run.create("metrics.csv")?)?;
    Ok(())
}

#[derive(Serialize)]
struct SummaryRow {
    dgp: String,
    estimator: String,
    n_ok: usize,
    median_skl: Option<f64>,
    median_mse: Option<f64>,
}

fn cmd_experiment(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let exp = cfg.experiment_config(cfg.dgp, None)?;
    let path = cfg.out.join("metrics.csv");
    run.artifacts.push("metrics.csv".into());
    let reports = with_workers(cfg.workers, || run_experiment_to(&exp, &path))?;
    let mut w = csv::Writer::from_writer(run.create("summary.csv")?);
    for &est in &exp.estimators {
        let row = SummaryRow {
            dgp: exp.dgp.to_string(),
            estimator: est.label().to_string(),
            n_ok: reports.iter().filter(|r| r.estimator == est.label() && r.is_ok()).count(),
            median_skl: median_metric(&reports, est, |r| r.skl),
            median_mse: median_metric(&reports, est, |r| r.mse),
        };
        log::info!(
            "{}: median SKL {:?}, median MSE {:?} over {} replicates",
            row.estimator,
            row.median_skl,
            row.median_mse,
            row.n_ok
        );
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Settings that are not part of the numeric pipeline.
pub fn is_run_info_key(key: &str) -> bool {
    RUN_INFO_KEYS.contains(&key)
}

/// Whether two output directories hold identical numeric artifacts: every
/// file listed in `a`'s manifest except the manifest itself, comparing
/// `metrics.csv` without its wall-time column.
pub fn same_numeric_artifacts(a: &Path, b: &Path) -> Result<bool> {
    let manifest = KeyValues::read(&a.join(MANIFEST_FILE))?;
    let artifacts = manifest.get("artifacts").unwrap_or("");
    for name in artifacts.split(',').filter(|s| !s.is_empty()) {
        if name == CONFIG_FILE {
            continue;
        }
        let (x, y) = (fs::read(a.join(name))?, fs::read(b.join(name))?);
        let same = if name == "metrics.csv" {
            let strip = |bytes: &[u8]| -> Result<Vec<MetricReport>> {
                Ok(crate::experiment::read_reports(bytes)?
                    .into_iter()
                    .map(|r| MetricReport { wall_time_s: 0.0, ..r })
                    .collect())
            };
            let (rx, ry) = (strip(&x)?, strip(&y)?);
            rx.len() == ry.len() && rx.iter().zip(&ry).all(|(p, q)| p.same_numbers(q))
        } else {
            x == y
        };
        if !same {
            log::warn!("artifact {name} differs");
            return Ok(false);
        }
    }
    Ok(true)
}
