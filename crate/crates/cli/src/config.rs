#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Run configuration: command-line flags layered over an optional JSON file.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;

/// A scalar or a list, so config files may write `"t": 1` or `"t": [0.5, 1]`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    fn into_vec(self) -> Vec<f64> {
        match self {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        }
    }
}

/// Keys accepted in a `--config` file; every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub experiment: Option<String>,
    pub n: Option<f64>,
    pub m: Option<f64>,
    pub t: Option<OneOrMany>,
    pub x: Option<OneOrMany>,
    pub paths: Option<usize>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub eps: Option<f64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub s: Option<f64>,
    pub z: Option<f64>,
    pub kappa: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonFlags {
    /// Total dimension n ≥ 2
    #[arg(long)]
    pub n: Option<f64>,
    /// Dimension m of the observed component, 0 ≤ m < n
    #[arg(long)]
    pub m: Option<f64>,
    /// Time or comma-separated times
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub t: Option<Vec<f64>>,
    /// Space point(s); starting value for `simulate`
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub x: Option<Vec<f64>>,
    /// Number of Monte Carlo paths
    #[arg(long)]
    pub paths: Option<usize>,
    /// Grid steps per path (per window for `laplace`)
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Tolerance for deterministic checks
    #[arg(long)]
    pub tol: Option<f64>,
    /// Occupation level for the local-time estimator
    #[arg(long)]
    pub eps: Option<f64>,
    /// Worker threads
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output file (stdout when absent)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON file with default values for any of these flags
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Local-time level for the inverse local time
    #[arg(long)]
    pub s: Option<f64>,
    /// Laplace argument
    #[arg(long)]
    pub z: Option<f64>,
    /// Stopping level is 1/kappa
    #[arg(long)]
    pub kappa: Option<f64>,
}

/// Flags merged with the config file; unset values stay `None` so each
/// command can apply its own defaults.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub experiment: Option<String>,
    pub n: Option<f64>,
    pub m: Option<f64>,
    pub t: Option<Vec<f64>>,
    pub x: Option<Vec<f64>>,
    pub paths: Option<usize>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub eps: Option<f64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub s: Option<f64>,
    pub z: Option<f64>,
    pub kappa: Option<f64>,
}

impl RunConfig {
    pub fn merge(flags: CommonFlags, experiment: Option<String>) -> Result<Self, String> {
        let file = match &flags.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let cfg = RunConfig {
            experiment: experiment.or(file.experiment),
            n: flags.n.or(file.n),
            m: flags.m.or(file.m),
            t: flags.t.or(file.t.map(OneOrMany::into_vec)),
            x: flags.x.or(file.x.map(OneOrMany::into_vec)),
            paths: flags.paths.or(file.paths),
            steps: flags.steps.or(file.steps),
            seed: flags.seed.or(file.seed),
            tol: flags.tol.or(file.tol),
            eps: flags.eps.or(file.eps),
            workers: flags.workers.or(file.workers),
            out: flags.out.or(file.out),
            s: flags.s.or(file.s),
            z: flags.z.or(file.z),
            kappa: flags.kappa.or(file.kappa),
        };
        cfg.validated()
    }

    fn validated(self) -> Result<Self, String> {
        if self.paths == Some(0) {
            return Err("paths must be ≥ 1".into());
        }
        if self.steps == Some(0) {
            return Err("steps must be ≥ 1".into());
        }
        if self.workers == Some(0) {
            return Err("workers must be ≥ 1".into());
        }
        for (name, v) in [("tol", self.tol), ("eps", self.eps)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(format!("{name} must be > 0"));
                }
            }
        }
        if self.t.as_ref().is_some_and(|t| t.is_empty())
            || self.x.as_ref().is_some_and(|x| x.is_empty())
        {
            return Err("t and x lists must be nonempty".into());
        }
        Ok(self)
    }
}
