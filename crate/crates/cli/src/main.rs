//! `besq`: evaluate the projection, simulate paths, and run verification experiments.

mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use besq_core::projection::ProjectionContext;
use besq_core::simulate::{
    local_time_occupation, simulate_path, uniform_grid, write_path_csv, RngStream,
};
use besq_core::specfun::{ModelParams, Regime};
use besq_core::verify::{
    verify_closed_forms, verify_compensator, verify_decomposition, verify_dm, verify_laplace_multi,
    verify_martingale_stopped, verify_pde, verify_sampler_moments, verify_supermartingale,
    LaplaceHorizon, McConfig, McReport, Verdict,
};
use besq_core::Error;
use clap::{Parser, Subcommand, ValueEnum};

use config::{CommonFlags, RunConfig};

const DEFAULT_SEED: u64 = 42;
const GRID_T: [f64; 4] = [0.1, 0.5, 1.0, 2.0];
const GRID_X: [f64; 4] = [0.01, 0.1, 1.0, 5.0];

#[derive(Parser)]
#[command(
    name = "besq",
    version,
    about = "Optional projections of squared Bessel processes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate f, f_x and the PDE residual on a (t, x) grid as CSV
    Project(CommonFlags),
    /// Simulate paths from x (default 1) and write path_id,t,x,z[,lambda] as CSV
    Simulate(CommonFlags),
    /// Run a verification experiment and write a JSON report
    Verify {
        #[arg(value_enum)]
        experiment: Option<Experiment>,
        #[command(flatten)]
        flags: CommonFlags,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Experiment {
    Pde,
    Decomposition,
    ClosedForms,
    Supermartingale,
    MartingaleStopped,
    Dm,
    Laplace,
    Compensator,
    SamplerMoments,
}

impl Experiment {
    fn parse(name: &str) -> Result<Self, Failure> {
        <Experiment as ValueEnum>::from_str(name, true)
            .map_err(|_| Failure::Usage(format!("unknown experiment {name:?}")))
    }
}

enum Failure {
    Usage(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Domain(_) => Failure::Usage(e.to_string()),
            _ => Failure::Numeric(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Numeric(format!("i/o error: {e}"))
    }
}

fn params(cfg: &RunConfig) -> Result<ModelParams, Failure> {
    Ok(ModelParams::new(
        cfg.n.unwrap_or(4.0),
        cfg.m.unwrap_or(1.0),
    )?)
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn fmt17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

fn cmd_project(cfg: &RunConfig) -> Result<u8, Failure> {
    let p = params(cfg)?;
    let mut ctx = ProjectionContext::new(p);
    if let Some(tol) = cfg.tol {
        let quad = ctx.quadrature().clone().with_tolerances(tol, 0.0);
        ctx = ProjectionContext::with_quadrature(p, quad);
    }
    let ts = cfg.t.clone().unwrap_or_else(|| vec![1.0]);
    let xs = cfg.x.clone().unwrap_or_else(|| vec![1.0]);
    let mut rows = Vec::with_capacity(ts.len() * xs.len());
    for &t in &ts {
        for &x in &xs {
            let f = ctx.f_proj(t, x)?;
            let (fx, res) = if x > 0.0 {
                (ctx.f_x_derivative(t, x)?, ctx.pde_residual(t, x)?)
            } else {
                (f64::NAN, f64::NAN)
            };
            rows.push([t, x, f, fx, res].map(fmt17).join(","));
        }
    }
    let mut out = open_output(cfg.out.as_deref())?;
    writeln!(out, "t,x,f,f_x,pde_residual")?;
    for row in rows {
        writeln!(out, "{row}")?;
    }
    out.flush()?;
    Ok(0)
}

fn cmd_simulate(cfg: &RunConfig) -> Result<u8, Failure> {
    let p = params(cfg)?;
    let ctx = ProjectionContext::new(p);
    let horizon = cfg.t.as_ref().map_or(1.0, |t| t[t.len() - 1]);
    let x0 = cfg.x.as_ref().map_or(1.0, |x| x[0]);
    let grid = uniform_grid(horizon, cfg.steps.unwrap_or(1000))?;
    let eps = cfg.eps.unwrap_or(grid[1]);
    let seed = cfg.seed.unwrap_or(DEFAULT_SEED);
    let mut out = open_output(cfg.out.as_deref())?;
    for id in 0..cfg.paths.unwrap_or(1) {
        let path = simulate_path(x0, p.m(), &grid, &mut RngStream::new(seed, id as u64).rng())?;
        let z = besq_core::simulate::z_along_path(&path, &ctx)?;
        let lambda = if p.regime() == Regime::Reflected {
            Some(local_time_occupation(&path, eps, p.m())?.lambda_values)
        } else {
            None
        };
        write_path_csv(
            &mut out,
            Some(id),
            &path,
            Some(&z),
            lambda.as_deref(),
            id == 0,
        )?;
    }
    out.flush()?;
    Ok(0)
}

fn mc_config(cfg: &RunConfig, paths: usize, steps: usize) -> McConfig {
    McConfig::new(
        cfg.paths.unwrap_or(paths),
        cfg.steps.unwrap_or(steps),
        cfg.seed.unwrap_or(DEFAULT_SEED),
    )
    .with_workers(cfg.workers)
}

fn run_experiment(exp: Experiment, cfg: &RunConfig) -> Result<Vec<McReport>, Failure> {
    let ts = cfg.t.clone();
    let xs = cfg.x.clone();
    let last_t = ts.as_ref().map_or(1.0, |t| t[t.len() - 1]);
    Ok(match exp {
        Experiment::Pde => {
            let ctx = ProjectionContext::new(params(cfg)?);
            let (t, x) = (ts.unwrap_or(GRID_T.to_vec()), xs.unwrap_or(GRID_X.to_vec()));
            vec![verify_pde(&ctx, &t, &x, cfg.tol.unwrap_or(1e-6))?]
        }
        Experiment::Decomposition => {
            let ctx = ProjectionContext::new(params(cfg)?);
            let (t, x) = (ts.unwrap_or(GRID_T.to_vec()), xs.unwrap_or(GRID_X.to_vec()));
            vec![verify_decomposition(&ctx, &t, &x, cfg.tol.unwrap_or(1e-6))?]
        }
        Experiment::ClosedForms => {
            let (t, x) = (
                ts.unwrap_or(vec![0.25, 1.0, 4.0]),
                xs.unwrap_or(vec![0.1, 1.0, 10.0]),
            );
            vec![verify_closed_forms(&t, &x, cfg.tol.unwrap_or(1e-8))?]
        }
        Experiment::Compensator => {
            let ctx = ProjectionContext::new(params(cfg)?);
            let a = xs.unwrap_or(vec![0.25, 0.5, 1.0, 4.0]);
            vec![verify_compensator(&ctx, &a, cfg.tol.unwrap_or(1e-8))?]
        }
        Experiment::Supermartingale => {
            let ctx = ProjectionContext::new(params(cfg)?);
            let t = ts.unwrap_or(vec![0.25, 0.5, 1.0]);
            verify_supermartingale(&ctx, &t, &mc_config(cfg, 100_000, 1))?
        }
        Experiment::MartingaleStopped => {
            let ctx = ProjectionContext::new(ModelParams::new(
                cfg.n.unwrap_or(4.0),
                cfg.m.unwrap_or(2.5),
            )?);
            vec![verify_martingale_stopped(
                &ctx,
                cfg.kappa.unwrap_or(2.0),
                last_t,
                &mc_config(cfg, 100_000, 500),
            )?]
        }
        Experiment::Dm => {
            let p = params(cfg)?;
            let ctx = ProjectionContext::new(p);
            let mc = if p.regime() == Regime::Absorbed {
                mc_config(cfg, 100_000, 200)
            } else {
                mc_config(cfg, 10_000, 10_000)
            };
            vec![verify_dm(&ctx, last_t, &mc, cfg.eps)?]
        }
        Experiment::Laplace => {
            let m = cfg.m.unwrap_or(1.0);
            let s = cfg.s.unwrap_or(0.5);
            let z = cfg.z.unwrap_or(1.0);
            let horizon = LaplaceHorizon {
                window: ts.map_or(1.0, |t| t[t.len() - 1]),
                max_windows: 10,
            };
            verify_laplace_multi(
                m,
                &[s],
                z,
                &mc_config(cfg, 10_000, 10_000),
                horizon,
                cfg.eps,
            )?
        }
        Experiment::SamplerMoments => vec![verify_sampler_moments(&mc_config(cfg, 100_000, 1))?],
    })
}

fn cmd_verify(cfg: &RunConfig) -> Result<u8, Failure> {
    let name = cfg
        .experiment
        .as_deref()
        .ok_or_else(|| Failure::Usage("missing experiment name".into()))?;
    let exp = Experiment::parse(name)?;
    let reports = run_experiment(exp, cfg)?;
    let json = if reports.len() == 1 {
        serde_json::to_string_pretty(&reports[0])
    } else {
        serde_json::to_string_pretty(&reports)
    }
    .map_err(|e| Failure::Numeric(format!("cannot serialise report: {e}")))?;
    let mut out = open_output(cfg.out.as_deref())?;
    writeln!(out, "{json}")?;
    out.flush()?;
    for r in &reports {
        eprintln!(
            "{}: estimate {:.6} stderr {:.2e} target {} verdict {:?}",
            r.experiment,
            r.estimate,
            r.stderr,
            r.target.map_or("-".into(), |t| format!("{t:.6}")),
            r.verdict
        );
        for note in &r.notes {
            eprintln!("  {note}");
        }
    }
    let code = if reports.iter().any(|r| r.verdict == Verdict::Fail) {
        1
    } else if reports.iter().any(|r| r.verdict == Verdict::Inconclusive) {
        3
    } else {
        0
    };
    Ok(code)
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Project(flags) => {
            cmd_project(&RunConfig::merge(flags, None).map_err(Failure::Usage)?)
        }
        Command::Simulate(flags) => {
            cmd_simulate(&RunConfig::merge(flags, None).map_err(Failure::Usage)?)
        }
        Command::Verify { experiment, flags } => {
            let name = experiment.map(|e| {
                e.to_possible_value()
                    .expect("named variant")
                    .get_name()
                    .to_string()
            });
            cmd_verify(&RunConfig::merge(flags, name).map_err(Failure::Usage)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("numeric failure: {msg}");
            ExitCode::from(4)
        }
    }
}
