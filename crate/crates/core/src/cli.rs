//! Sweep driver behind the `qsl-sweep` binary.
//!
//! A run is described by a [`RunConfig`], built from command-line flags with an
//! optional TOML file underneath them (flags win). [`run_sweep`] evaluates the
//! speed limit at every γ₀ of the grid and [`emit`] writes the records as CSV
//! or JSON.

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::common::{CommonReservoir, DEFAULT_FOCK_N};
use crate::independent::{check_index_convention, IndependentReservoir};
use crate::qsl::{evaluate_point, Reservoir, BOUND_SLACK, DEFAULT_STEPS};
use crate::states::{EwlParams, Family};
use crate::{QslError, Regime};

/// CSV column order.
pub const CSV_HEADER: &str = "gamma0,regime,fidelity_end,x_tau,tau_qsl";
/// Points in the default γ₀ grid.
pub const DEFAULT_GRID_POINTS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setup {
    Independent,
    Common,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Spacing {
    Linear,
    Log,
}

/// `count` values of γ₀ from `start` to `stop` inclusive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gamma0Grid {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
    pub spacing: Spacing,
}

impl Gamma0Grid {
    /// Log-spaced grid from one decade below to one decade above `boundary`.
    pub fn around(boundary: f64) -> Self {
        Self {
            start: boundary / 10.0,
            stop: boundary * 10.0,
            count: DEFAULT_GRID_POINTS,
            spacing: Spacing::Log,
        }
    }

    pub fn points(&self) -> Vec<f64> {
        let last = (self.count - 1) as f64;
        let mut pts: Vec<f64> = (0..self.count)
            .map(|k| {
                let s = k as f64 / last;
                match self.spacing {
                    Spacing::Linear => self.start + s * (self.stop - self.start),
                    Spacing::Log => self.start * (self.stop / self.start).powf(s),
                }
            })
            .collect();
        // Pin the endpoints against rounding in powf.
        pts[0] = self.start;
        pts[self.count - 1] = self.stop;
        pts
    }
}

impl FromStr for Gamma0Grid {
    type Err = String;

    /// Parses `start:stop:count` or `start:stop:count:log`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if !(3..=4).contains(&parts.len()) {
            return Err(format!("`{s}` is not start:stop:count[:log]"));
        }
        let num = |x: &str, what: &str| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| format!("{what} `{x}` is not a number"))
        };
        let start = num(parts[0], "start")?;
        let stop = num(parts[1], "stop")?;
        let count = parts[2]
            .trim()
            .parse::<usize>()
            .map_err(|_| format!("count `{}` is not a non-negative integer", parts[2]))?;
        let spacing = match parts.get(3).map(|x| x.trim()) {
            None | Some("lin") => Spacing::Linear,
            Some("log") => Spacing::Log,
            Some(other) => return Err(format!("unknown spacing `{other}`")),
        };
        Ok(Self {
            start,
            stop,
            count,
            spacing,
        })
    }
}

impl fmt::Display for Gamma0Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.stop, self.count)?;
        if self.spacing == Spacing::Log {
            f.write_str(":log")?;
        }
        Ok(())
    }
}

/// Everything needed for one sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub setup: Setup,
    pub family: Family,
    pub r: f64,
    pub alpha: f64,
    pub theta: f64,
    pub tau: f64,
    /// Lorentzian width of each independent reservoir.
    pub lambda: f64,
    /// Lorentzian width of the common reservoir.
    pub big_gamma: f64,
    pub gamma0_grid: Gamma0Grid,
    pub steps: usize,
    pub fock_n: usize,
    /// Output file, or `-` for stdout.
    pub output: String,
    pub format: Format,
}

impl RunConfig {
    /// Regime boundary in γ₀ for the configured setup.
    pub fn regime_boundary(&self) -> f64 {
        match self.setup {
            Setup::Independent => self.lambda / 2.0,
            Setup::Common => self.big_gamma / 4.0,
        }
    }

    pub fn ewl(&self) -> EwlParams {
        EwlParams {
            family: self.family,
            r: self.r,
            alpha: self.alpha,
            theta: self.theta,
        }
    }

    pub fn reservoir(&self, gamma0: f64) -> crate::Result<Reservoir> {
        Ok(match self.setup {
            Setup::Independent => {
                Reservoir::Independent(IndependentReservoir::new(self.lambda, gamma0)?)
            }
            Setup::Common => {
                Reservoir::Common(CommonReservoir::new(self.big_gamma, gamma0, self.fock_n)?)
            }
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, message: String| {
            Err(CliError::Config {
                field: field.to_string(),
                message,
            })
        };
        for (field, v) in [("r", self.r), ("alpha", self.alpha)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(field, format!("{v} is outside [0, 1]"));
            }
        }
        if !self.theta.is_finite() {
            return bad("theta", format!("{} is not finite", self.theta));
        }
        for (field, v) in [
            ("tau", self.tau),
            ("lambda", self.lambda),
            ("big_gamma", self.big_gamma),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(field, format!("{v} must be > 0"));
            }
        }
        let g = &self.gamma0_grid;
        if g.count < 2 {
            return bad("gamma0", format!("count {} must be at least 2", g.count));
        }
        if !(g.start > 0.0 && g.start.is_finite() && g.stop.is_finite()) {
            return bad("gamma0", format!("start {} must be > 0", g.start));
        }
        if g.start >= g.stop {
            return bad(
                "gamma0",
                format!("start {} must be below stop {}", g.start, g.stop),
            );
        }
        if self.steps < 100 {
            return bad(
                "steps",
                format!("{} is below the minimum of 100", self.steps),
            );
        }
        if self.fock_n < 2 {
            return bad(
                "fock_n",
                format!("{} cannot hold two excitations", self.fock_n),
            );
        }
        if self.output.is_empty() {
            return bad("output", "path is empty".to_string());
        }
        Ok(())
    }
}

/// One row of sweep output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub gamma0: f64,
    pub regime: Regime,
    pub fidelity_end: f64,
    pub x_tau: f64,
    pub tau_qsl: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Help or version text requested; not a failure.
    #[error("{0}")]
    Display(String),
    #[error("invalid `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("numerical failure at gamma0 = {gamma0}: {source}")]
    Numerical { gamma0: f64, source: QslError },
    #[error("numerical self-check failed: {0}")]
    SelfCheck(QslError),
    #[error("cannot write `{}`: {message}", path.display())]
    Output { path: PathBuf, message: String },
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Display(_) => 0,
            CliError::Config { .. } | CliError::Output { .. } => 1,
            CliError::Numerical { .. } | CliError::SelfCheck(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "qsl-sweep",
    version,
    about = "Sweep the quantum speed limit time over the coupling strength",
    after_help = "A coupling exactly on the regime boundary is labelled markovian.\n\
                  Boundaries: lambda/2 for independent reservoirs, big-gamma/4 for the common one."
)]
struct Args {
    /// TOML file with default values; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    setup: Option<Setup>,
    /// psi1 or psi2.
    #[arg(long)]
    family: Option<Family>,
    #[arg(long, allow_hyphen_values = true)]
    r: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    tau: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    big_gamma: Option<f64>,
    /// start:stop:count[:log]; defaults to 50 log points over a decade either
    /// side of the regime boundary.
    #[arg(long)]
    gamma0: Option<Gamma0Grid>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    fock_n: Option<usize>,
    /// Output path, `-` for stdout.
    #[arg(long)]
    output: Option<String>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

/// Keys accepted in a TOML config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    setup: Option<Setup>,
    family: Option<Family>,
    r: Option<f64>,
    alpha: Option<f64>,
    theta: Option<f64>,
    tau: Option<f64>,
    lambda: Option<f64>,
    big_gamma: Option<f64>,
    gamma0: Option<String>,
    steps: Option<usize>,
    fock_n: Option<usize>,
    output: Option<String>,
    format: Option<Format>,
}

fn read_file_config(path: &Path) -> Result<FileConfig, CliError> {
    let config_err = |message: String| CliError::Config {
        field: "config".to_string(),
        message,
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

/// Builds a [`RunConfig`] from command-line arguments (program name first).
pub fn parse_config<I, T>(args: I) -> Result<RunConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = Args::try_parse_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            CliError::Display(e.to_string())
        }
        _ => {
            let field = e
                .get(clap::error::ContextKind::InvalidArg)
                .map(|a| a.to_string())
                .unwrap_or_else(|| "arguments".to_string());
            let rendered = e.to_string();
            let message = rendered
                .lines()
                .next()
                .unwrap_or_default()
                .trim_start_matches("error: ")
                .to_string();
            CliError::Config { field, message }
        }
    })?;
    let file = match &args.config {
        Some(path) => read_file_config(path)?,
        None => FileConfig::default(),
    };
    let file_grid = file
        .gamma0
        .as_deref()
        .map(|s| {
            s.parse::<Gamma0Grid>().map_err(|message| CliError::Config {
                field: "gamma0".to_string(),
                message,
            })
        })
        .transpose()?;

    let setup = args.setup.or(file.setup).unwrap_or(Setup::Independent);
    let lambda = args.lambda.or(file.lambda).unwrap_or(50.0);
    let big_gamma = args.big_gamma.or(file.big_gamma).unwrap_or(50.0);
    let mut cfg = RunConfig {
        setup,
        family: args.family.or(file.family).unwrap_or(Family::Psi1),
        r: args.r.or(file.r).unwrap_or(1.0),
        alpha: args
            .alpha
            .or(file.alpha)
            .unwrap_or(std::f64::consts::FRAC_1_SQRT_2),
        theta: args.theta.or(file.theta).unwrap_or(0.0),
        tau: args.tau.or(file.tau).unwrap_or(1.0),
        lambda,
        big_gamma,
        // Placeholder until the boundary is known.
        gamma0_grid: Gamma0Grid::around(1.0),
        steps: args.steps.or(file.steps).unwrap_or(DEFAULT_STEPS),
        fock_n: args.fock_n.or(file.fock_n).unwrap_or(DEFAULT_FOCK_N),
        output: args
            .output
            .or(file.output)
            .unwrap_or_else(|| "-".to_string()),
        format: args.format.or(file.format).unwrap_or(Format::Csv),
    };
    cfg.gamma0_grid = args
        .gamma0
        .or(file_grid)
        .unwrap_or_else(|| Gamma0Grid::around(cfg.regime_boundary()));
    cfg.validate()?;
    Ok(cfg)
}

/// Evaluates every grid point, in parallel, and returns records in γ₀ order.
pub fn run_sweep(cfg: &RunConfig) -> Result<Vec<SweepRecord>, CliError> {
    cfg.validate()?;
    let ewl = cfg.ewl();
    let results: Vec<_> = cfg
        .gamma0_grid
        .points()
        .into_par_iter()
        .map(|gamma0| {
            let point = || -> crate::Result<SweepRecord> {
                let reservoir = cfg.reservoir(gamma0)?;
                let res = evaluate_point(&ewl, &reservoir, cfg.tau, cfg.steps)?;
                if res.tau_qsl > cfg.tau + BOUND_SLACK {
                    return Err(QslError::InconsistentQsl(format!(
                        "bound {} exceeds tau {}",
                        res.tau_qsl, cfg.tau
                    )));
                }
                Ok(SweepRecord {
                    gamma0,
                    regime: reservoir.regime(),
                    fidelity_end: res.fidelity_end,
                    x_tau: res.x_tau,
                    tau_qsl: res.tau_qsl,
                })
            };
            point().map_err(|source| CliError::Numerical { gamma0, source })
        })
        .collect();
    results.into_iter().collect()
}

fn float(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV text: header plus one line per record.
pub fn render_csv(records: &[SweepRecord]) -> String {
    let mut out = String::with_capacity(96 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            float(r.gamma0),
            r.regime,
            float(r.fidelity_end),
            float(r.x_tau),
            float(r.tau_qsl)
        ));
    }
    out
}

/// JSON array of records with the CSV column names as keys.
pub fn render_json(records: &[SweepRecord]) -> String {
    let mut text = serde_json::to_string_pretty(records).expect("records serialise");
    text.push('\n');
    text
}

/// Parses text produced by [`render_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<SweepRecord>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(CSV_HEADER) => {}
        other => return Err(format!("unexpected header {other:?}")),
    }
    lines
        .enumerate()
        .map(|(k, line)| {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(format!("line {}: expected 5 columns", k + 2));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| format!("line {}: bad number `{s}`", k + 2))
            };
            Ok(SweepRecord {
                gamma0: num(cols[0])?,
                regime: cols[1].parse()?,
                fidelity_end: num(cols[2])?,
                x_tau: num(cols[3])?,
                tau_qsl: num(cols[4])?,
            })
        })
        .collect()
}

/// Writes records in the configured format to the configured destination.
pub fn emit(records: &[SweepRecord], cfg: &RunConfig) -> Result<(), CliError> {
    let path = PathBuf::from(&cfg.output);
    if records.is_empty() {
        return Err(CliError::Output {
            path,
            message: "no records to write".to_string(),
        });
    }
    let text = match cfg.format {
        Format::Csv => render_csv(records),
        Format::Json => render_json(records),
    };
    if cfg.output == "-" {
        use std::io::Write;
        let mut stdout = std::io::stdout().lock();
        stdout
            .write_all(text.as_bytes())
            .and_then(|_| stdout.flush())
            .map_err(|e| CliError::Output {
                path,
                message: e.to_string(),
            })
    } else {
        std::fs::write(&path, text).map_err(|e| CliError::Output {
            message: e.to_string(),
            path,
        })
    }
}

/// Full program: self-check, parse, sweep, write.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cfg = parse_config(args)?;
    check_index_convention().map_err(CliError::SelfCheck)?;
    let records = run_sweep(&cfg)?;
    emit(&records, &cfg)
}
