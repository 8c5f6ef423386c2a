//! Command-line flags and the optional TOML run configuration. Flags take
//! precedence over the file; the file rejects unknown keys.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const DEFAULT_SEED: u64 = 20_240_601;
pub const DEFAULT_OUT: &str = "asymrisk-out";

#[derive(Debug, Parser)]
#[command(name = "asymrisk", version, about = "Asymmetric risk-sensitive control: solvers, simulations and checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub options: Options,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Solve the LQ Riccati equation and check the a-priori bounds.
    Riccati,
    /// Optimal feedback gain and optimal value of an LQ model.
    Lq,
    /// Monte Carlo of the closed-loop LQ system; validates the value formula when Gamma is scalar.
    LqSim,
    /// Lattice BSDE value of a named payoff over a sequence of step counts.
    Bsde,
    /// Mean-variance expansion remainders of the nonlinear expectation.
    Criterion,
    /// Mean and first-order variance terms of a payoff.
    Taylor,
    /// Variance decomposition of a payoff and the decomposition axioms.
    Vardecomp,
    /// Optimal strategy and growth rate of a factor-market model.
    Portfolio,
    /// Monte Carlo growth rates of the optimal and reference strategies.
    PortfolioSim,
    /// Maximum-principle consistency along simulated optimal paths.
    VerifySmp,
    /// Run the full acceptance suite on the bundled models.
    Acceptance,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Riccati => "riccati",
            Command::Lq => "lq",
            Command::LqSim => "lq-sim",
            Command::Bsde => "bsde",
            Command::Criterion => "criterion",
            Command::Taylor => "taylor",
            Command::Vardecomp => "vardecomp",
            Command::Portfolio => "portfolio",
            Command::PortfolioSim => "portfolio-sim",
            Command::VerifySmp => "verify-smp",
            Command::Acceptance => "acceptance",
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Options {
    /// TOML file with any of the options below (snake_case keys).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Model file (TOML).
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of Monte Carlo paths.
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    /// Number of time steps (overrides the model file).
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Time horizon (overrides the model file).
    #[arg(long, global = true)]
    pub horizon: Option<f64>,
    /// First driver coefficient; for two-noise models sets Gamma = diag(gamma1, gamma2).
    #[arg(long, global = true)]
    pub gamma1: Option<f64>,
    #[arg(long, global = true)]
    pub gamma2: Option<f64>,
    /// Full Gamma, rows separated by ';' and entries by ',' (e.g. "0.1,0;0,0.3").
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub gamma_matrix: Option<String>,
    /// Risk-sensitivity parameter; sets Gamma = (theta/2)I for LQ and (theta/4)I for portfolio commands.
    #[arg(long, global = true)]
    pub theta: Option<f64>,
    /// Payoff name for lattice commands: constant, linear, quadratic, product, call, sin1, sin2.
    #[arg(long, global = true)]
    pub payoff: Option<String>,
    /// Payoff parameter as KEY=VALUE; repeatable.
    #[arg(long = "param", global = true, allow_hyphen_values = true)]
    pub params: Vec<String>,
    /// Expansion scales h for `criterion`, comma separated and decreasing.
    #[arg(long, global = true, value_delimiter = ',')]
    pub scales: Option<Vec<f64>>,
    /// Number of halvings of --steps in the `bsde` convergence table.
    #[arg(long, global = true)]
    pub levels: Option<usize>,
    /// Worker threads for Monte Carlo; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    model: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    paths: Option<usize>,
    steps: Option<usize>,
    horizon: Option<f64>,
    gamma1: Option<f64>,
    gamma2: Option<f64>,
    gamma_matrix: Option<Vec<Vec<f64>>>,
    theta: Option<f64>,
    payoff: Option<String>,
    params: Option<BTreeMap<String, f64>>,
    scales: Option<Vec<f64>>,
    levels: Option<usize>,
    threads: Option<usize>,
}

/// Options after merging flags over the configuration file.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Settings {
    pub model: Option<PathBuf>,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub steps: Option<usize>,
    pub horizon: Option<f64>,
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    pub gamma_matrix: Option<Vec<Vec<f64>>>,
    pub theta: Option<f64>,
    pub payoff: Option<String>,
    pub params: BTreeMap<String, f64>,
    pub scales: Option<Vec<f64>>,
    pub levels: Option<usize>,
    #[serde(skip)]
    pub threads: Option<usize>,
}

fn parse_matrix(text: &str) -> Result<Vec<Vec<f64>>, CliError> {
    text.split(';')
        .map(|row| {
            row.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| CliError::Config(format!("--gamma-matrix: bad entry '{}': {e}", v.trim())))
                })
                .collect()
        })
        .collect()
}

fn parse_params(items: &[String]) -> Result<BTreeMap<String, f64>, CliError> {
    items
        .iter()
        .map(|item| {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--param expects KEY=VALUE, got '{item}'")))?;
            let v = v
                .trim()
                .parse::<f64>()
                .map_err(|e| CliError::Config(format!("--param {k}: {e}")))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

impl Settings {
    pub fn resolve(opts: &Options) -> Result<Self, CliError> {
        let file = match &opts.config {
            Some(path) => read_config(path)?,
            None => FileConfig::default(),
        };
        let mut params = file.params.unwrap_or_default();
        params.extend(parse_params(&opts.params)?);
        let gamma_matrix = match &opts.gamma_matrix {
            Some(text) => Some(parse_matrix(text)?),
            None => file.gamma_matrix,
        };
        let s = Settings {
            model: opts.model.clone().or(file.model),
            out: opts.out.clone().or(file.out),
            seed: opts.seed.or(file.seed),
            paths: opts.paths.or(file.paths),
            steps: opts.steps.or(file.steps),
            horizon: opts.horizon.or(file.horizon),
            gamma1: opts.gamma1.or(file.gamma1),
            gamma2: opts.gamma2.or(file.gamma2),
            gamma_matrix,
            theta: opts.theta.or(file.theta),
            payoff: opts.payoff.clone().or(file.payoff),
            params,
            scales: opts.scales.clone().or(file.scales),
            levels: opts.levels.or(file.levels),
            threads: opts.threads.or(file.threads),
        };
        if s.theta.is_some() && (s.gamma_matrix.is_some() || s.gamma1.is_some() || s.gamma2.is_some()) {
            return Err(CliError::Config("--theta cannot be combined with explicit Gamma overrides".into()));
        }
        if let Some(t) = s.theta {
            if t.is_nan() || t <= 0.0 {
                return Err(CliError::Config(format!("--theta must be positive, got {t}")));
            }
        }
        Ok(s)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    /// Explicit Γ from `--gamma-matrix` or `--gamma1/--gamma2`, for a model
    /// with `dim` noise components.
    pub fn gamma_override(&self, dim: usize) -> Result<Option<DMatrix<f64>>, CliError> {
        if let Some(rows) = &self.gamma_matrix {
            if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                return Err(CliError::Config(format!("--gamma-matrix must be {dim}x{dim}")));
            }
            return Ok(Some(DMatrix::from_row_iterator(dim, dim, rows.iter().flatten().copied())));
        }
        match (self.gamma1, self.gamma2) {
            (None, None) => Ok(None),
            (Some(g1), Some(g2)) if dim == 2 => Ok(Some(DMatrix::from_diagonal(&nalgebra::dvector![g1, g2]))),
            (Some(g1), None) if dim == 1 => Ok(Some(DMatrix::from_element(1, 1, g1))),
            _ => Err(CliError::Config(format!(
                "--gamma1/--gamma2 do not match a model with {dim} noise components"
            ))),
        }
    }
}

fn read_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("asymrisk").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_after_subcommand() {
        let cli = parse(&["bsde", "--payoff", "linear", "--param", "a=1", "--param", "c=-2", "--steps", "64"]);
        assert_eq!(cli.command, Command::Bsde);
        let s = Settings::resolve(&cli.options).unwrap();
        assert_eq!(s.steps, Some(64));
        assert_eq!(s.params["c"], -2.0);
        assert_eq!(s.seed(), DEFAULT_SEED);
    }

    #[test]
    fn gamma_overrides() {
        let cli = parse(&["lq", "--gamma-matrix", "0.1,0;0,0.3"]);
        let s = Settings::resolve(&cli.options).unwrap();
        let g = s.gamma_override(2).unwrap().unwrap();
        assert_eq!(g[(1, 1)], 0.3);
        assert!(s.gamma_override(1).is_err());
        let cli = parse(&["lq", "--gamma1", "0.2", "--gamma2", "0.4"]);
        let s = Settings::resolve(&cli.options).unwrap();
        assert_eq!(s.gamma_override(2).unwrap().unwrap()[(0, 0)], 0.2);
        let cli = parse(&["lq", "--gamma1", "0.2", "--theta", "0.5"]);
        assert!(Settings::resolve(&cli.options).is_err());
    }

    #[test]
    fn config_file_rejects_unknown_keys_and_flags_win() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "seed = 3\nsteps = 10\n").unwrap();
        let cli = parse(&["lq", "--config", path.to_str().unwrap(), "--steps", "20"]);
        let s = Settings::resolve(&cli.options).unwrap();
        assert_eq!((s.seed(), s.steps), (3, Some(20)));
        fs::write(&path, "sede = 3\n").unwrap();
        let cli = parse(&["lq", "--config", path.to_str().unwrap()]);
        let msg = Settings::resolve(&cli.options).unwrap_err().to_string();
        assert!(msg.contains("sede"), "{msg}");
    }
}
