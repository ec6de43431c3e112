//! Monte Carlo and quadrature experiments on the projection.
//!
//! Every experiment returns an [`McReport`]. Monte Carlo runs draw path `i`
//! from `RngStream::new(seed, i)` and sum results in index order, so reports
//! are bitwise reproducible for a given seed whatever the worker count.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::projection::{closed_form_n3m1, closed_form_n3m2, s_fn, ProjectionContext};
use crate::quadrature::{integrate_adaptive, QuadratureSpec};
use crate::simulate::{
    default_occupation_epsilon, local_time_occupation, local_time_tanaka, sample_besq_transition,
    simulate_path, uniform_grid, zero_start_cdf, RngStream,
};
use crate::specfun::{digamma, gamma_fn, ln_gamma, ModelParams, Regime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportParams {
    pub n: f64,
    pub m: f64,
}

impl From<&ModelParams> for ReportParams {
    fn from(p: &ModelParams) -> Self {
        Self { n: p.n(), m: p.m() }
    }
}

/// Outcome of one experiment. `bias_budget` is absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub experiment: String,
    pub params: Option<ReportParams>,
    #[serde(rename = "T")]
    pub horizon: Option<f64>,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub estimate: f64,
    pub stderr: f64,
    pub target: Option<f64>,
    pub target_source: String,
    pub bias_budget: f64,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl McReport {
    fn new(experiment: &str, params: Option<&ModelParams>, cfg: &McConfig) -> Self {
        Self {
            experiment: experiment.to_string(),
            params: params.map(ReportParams::from),
            horizon: None,
            n_paths: cfg.n_paths,
            n_steps: cfg.n_steps,
            seed: cfg.seed,
            estimate: f64::NAN,
            stderr: 0.0,
            target: None,
            target_source: String::new(),
            bias_budget: 0.0,
            verdict: Verdict::Inconclusive,
            details: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    fn deterministic(experiment: &str, params: Option<&ModelParams>) -> Self {
        Self::new(
            experiment,
            params,
            &McConfig {
                n_paths: 0,
                n_steps: 0,
                ..McConfig::default()
            },
        )
    }

    /// Sets estimate and target and applies `|estimate - target| ≤ 3·stderr + bias_budget`.
    fn judge(&mut self, estimate: f64, stderr: f64, target: f64, bias_budget: f64) {
        self.estimate = estimate;
        self.stderr = stderr;
        self.target = Some(target);
        self.bias_budget = bias_budget;
        self.verdict = verdict_for(estimate, stderr, target, bias_budget);
    }

    /// Downgrades a pass to fail.
    fn require(&mut self, ok: bool, note: impl Into<String>) {
        if !ok {
            if self.verdict == Verdict::Pass {
                self.verdict = Verdict::Fail;
            }
            self.notes.push(note.into());
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// Pass iff `|estimate - target| ≤ 3·stderr + bias_budget`; non-finite estimates fail.
pub fn verdict_for(estimate: f64, stderr: f64, target: f64, bias_budget: f64) -> Verdict {
    if !estimate.is_finite() || !stderr.is_finite() {
        return Verdict::Fail;
    }
    if (estimate - target).abs() <= 3.0 * stderr + bias_budget {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

/// Sample size, grid resolution, seed and thread count for a Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// Worker threads; `None` uses the global rayon pool.
    pub workers: Option<usize>,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            n_steps: 1000,
            seed: 42,
            workers: None,
        }
    }
}

impl McConfig {
    pub fn new(n_paths: usize, n_steps: usize, seed: u64) -> Self {
        Self {
            n_paths,
            n_steps,
            seed,
            workers: None,
        }
    }

    pub fn with_workers(mut self, workers: Option<usize>) -> Self {
        self.workers = workers;
        self
    }

    fn validated(&self) -> Result<()> {
        if self.n_paths < 2 || self.n_steps == 0 {
            return domain("need at least 2 paths and 1 step");
        }
        if self.workers == Some(0) {
            return domain("workers must be ≥ 1");
        }
        Ok(())
    }
}

/// Runs `f` for every path index in parallel; the output keeps index order.
pub fn run_paths<T, F>(cfg: &McConfig, stream_offset: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> Result<T> + Sync,
{
    let run = || {
        (0..cfg.n_paths)
            .into_par_iter()
            .map(|i| f(&mut RngStream::new(cfg.seed, stream_offset + i as u64).rng()))
            .collect::<Result<Vec<T>>>()
    };
    match cfg.workers {
        None => run(),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::Domain(format!("cannot build thread pool: {e}")))?
            .install(run),
    }
}

/// Sample mean and its standard error.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Sample variance and a standard error for it, from the fourth central moment.
pub fn variance_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    (m2 * n / (n - 1.0), ((m4 - m2 * m2) / n).max(0.0).sqrt())
}

/// Kolmogorov–Smirnov distance between a sample and a continuous CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = cdf(x);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// `Z_0 = s(1)`: 1 for n > 2, 0 for n = 2.
pub fn z_initial(params: &ModelParams) -> f64 {
    s_fn(1.0, params).expect("s(1) is finite")
}

/// `E[Z_T] = E[s(Q_T)]` with `Q` a squared Bessel process of dimension n from 1,
/// summed over the Poisson(1/2T) mixture of Gamma(n/2 + N, scale 2T) laws.
pub fn expected_z_quadrature(horizon: f64, ctx: &ProjectionContext) -> Result<f64> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return domain(format!("T must be > 0, got {horizon}"));
    }
    let params = ctx.params();
    let n = params.n();
    let theta = 2.0 * horizon;
    let lambda = 1.0 / theta;
    let spread = 12.0 * lambda.sqrt() + 40.0;
    let lo = (lambda - spread).max(0.0).floor() as u64;
    let hi = (lambda + spread).ceil() as u64;
    // weights and Gamma ratios by forward recurrence from the window start;
    // normalising by the summed mass removes the common rounding in the start values
    let a = params.scale_exponent();
    let mut weight = (-lambda + lo as f64 * lambda.ln() - ln_gamma(lo as f64 + 1.0)?).exp();
    let mut ratio =
        (ln_gamma(lo as f64 + 1.0)? - ln_gamma(0.5 * n + lo as f64)? - a * theta.ln()).exp();
    let mut total = 0.0;
    let mut mass = 0.0;
    for k in lo..=hi {
        let kf = k as f64;
        let component = if params.is_log_scale() {
            -(digamma(1.0 + kf)? + theta.ln())
        } else {
            ratio
        };
        total += weight * component;
        mass += weight;
        weight *= lambda / (kf + 1.0);
        ratio *= (kf + 1.0) / (0.5 * n + kf);
    }
    if (1.0 - mass).abs() > 1e-6 {
        return Err(Error::Series(format!("Poisson weights sum to {mass}")));
    }
    Ok(total / mass)
}

/// `Z_0 - ∫₀^T fv_density(u) P(ρ ≤ u) du` for m = 0, with `P(ρ ≤ u) = e^{-1/2u}`.
pub fn expected_z_absorbed(horizon: f64, ctx: &ProjectionContext) -> Result<f64> {
    if ctx.params().regime() != Regime::Absorbed {
        return domain("expected_z_absorbed requires m = 0");
    }
    let loss = integrate_adaptive(
        |u| {
            let p = (-0.5 / u).exp();
            if p == 0.0 {
                0.0
            } else {
                ctx.fv_density(u).unwrap_or(f64::NAN) * p
            }
        },
        0.0,
        horizon,
        1e-12,
    )?;
    Ok(z_initial(ctx.params()) - loss)
}

/// Looser quadrature for Monte Carlo evaluation of Z; its error sits far below the noise.
fn mc_context(ctx: &ProjectionContext) -> ProjectionContext {
    ProjectionContext::with_quadrature(
        *ctx.params(),
        QuadratureSpec::default().with_tolerances(1e-9, 0.0),
    )
}

fn z_value(ctx: &ProjectionContext, t: f64, x: f64) -> Result<f64> {
    if x == 0.0 && ctx.params().m() < 2.0 {
        ctx.f_at_zero(t)
    } else {
        ctx.f_proj(t, x)
    }
}

/// Monte Carlo of `E[Z_t]` at each time, against [`expected_z_quadrature`].
pub fn verify_supermartingale(
    ctx: &ProjectionContext,
    times: &[f64],
    cfg: &McConfig,
) -> Result<Vec<McReport>> {
    cfg.validated()?;
    let params = *ctx.params();
    if params.m() >= 2.0 {
        return domain("supermartingale check requires m < 2");
    }
    if times.is_empty()
        || times.iter().any(|t| !(*t >= 0.0))
        || times.windows(2).any(|w| w[1] <= w[0])
    {
        return domain("times must be nonnegative and strictly increasing");
    }
    let mc = mc_context(ctx);
    let z0 = z_initial(&params);
    let samples = run_paths(cfg, 0, |rng| {
        let mut x = 1.0;
        let mut prev = 0.0;
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            if t == 0.0 {
                out.push(z0);
                continue;
            }
            x = sample_besq_transition(x, params.m(), t - prev, rng)?;
            prev = t;
            out.push(z_value(&mc, t, x)?);
        }
        Ok(out)
    })?;
    let mut reports = Vec::with_capacity(times.len());
    for (j, &t) in times.iter().enumerate() {
        let column: Vec<f64> = samples.iter().map(|s| s[j]).collect();
        let mut report = McReport::new("supermartingale", Some(&params), cfg);
        report.n_steps = times.len();
        report.horizon = Some(t);
        if t == 0.0 {
            report.judge(z0, 0.0, z0, 0.0);
            report.target_source = "Z_0 = s(1)".into();
        } else {
            let (mean, se) = mean_stderr(&column);
            report.judge(mean, se, expected_z_quadrature(t, ctx)?, 0.0);
            report.target_source = "E[s(Q_T)], Poisson-Gamma mixture for dimension n from 1".into();
            report
                .details
                .insert("strictness_sigmas".into(), (z0 - mean) / se);
            if params.regime() == Regime::Absorbed {
                let fv = expected_z_absorbed(t, ctx)?;
                report
                    .details
                    .insert("target_absorption_integral".into(), fv);
                report.require(
                    (mean - fv).abs() <= 3.0 * se,
                    "estimate disagrees with the absorption-time integral",
                );
            }
        }
        reports.push(report);
    }
    Ok(reports)
}

/// `E[Z_{T ∧ ρ_κ}]` with `ρ_κ` the first grid time where `X ≤ 1/κ`; also reports the unstopped mean.
pub fn verify_martingale_stopped(
    ctx: &ProjectionContext,
    kappa: f64,
    horizon: f64,
    cfg: &McConfig,
) -> Result<McReport> {
    cfg.validated()?;
    let params = *ctx.params();
    if params.m() < 2.0 {
        return domain("stopped martingale check requires m ≥ 2");
    }
    if !(kappa > 1.0) || !(horizon > 0.0) {
        return domain("requires kappa > 1 and T > 0");
    }
    let mc = mc_context(ctx);
    let level = 1.0 / kappa;
    let dt = horizon / cfg.n_steps as f64;
    let pairs = run_paths(cfg, 0, |rng| {
        let mut x = 1.0;
        let mut stopped = None;
        for i in 1..=cfg.n_steps {
            x = sample_besq_transition(x, params.m(), dt, rng)?;
            if stopped.is_none() && x <= level {
                stopped = Some(mc.f_proj(i as f64 * dt, x)?);
            }
        }
        let end = mc.f_proj(horizon, x)?;
        Ok((stopped.unwrap_or(end), end, stopped.is_some() as u8 as f64))
    })?;
    let stopped: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let unstopped: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let hit_fraction = pairs.iter().map(|p| p.2).sum::<f64>() / pairs.len() as f64;
    let (mean, se) = mean_stderr(&stopped);
    let (mean_u, se_u) = mean_stderr(&unstopped);
    let z0 = z_initial(&params);
    let mut report = McReport::new("martingale-stopped", Some(&params), cfg);
    report.horizon = Some(horizon);
    report.judge(mean, se, z0, 0.0);
    report.target_source = "Z_0 = s(1); stopped projection is a bounded martingale".into();
    report.details.insert("kappa".into(), kappa);
    report.details.insert("unstopped_estimate".into(), mean_u);
    report.details.insert("unstopped_stderr".into(), se_u);
    report.details.insert(
        "unstopped_target".into(),
        expected_z_quadrature(horizon, ctx)?,
    );
    report
        .details
        .insert("stopped_fraction".into(), hit_fraction);
    report.require(
        mean_u < z0 - 10.0 * se_u,
        "unstopped mean is not 10 stderr below Z_0",
    );
    Ok(report)
}

/// Doob–Meyer balance `Z_0 - E[Z_T] = E[∫₀^T fv_density(u) dΛ_u]` (0 < m < 2) or
/// `E[∫₀^T fv_density(u) 1{ρ ≤ u} du]` (m = 0).
///
/// For 0 < m < 2 the Stieltjes sum uses midpoint weights and skips the first
/// cell; `epsilon` defaults to the grid step. A 5% relative bias budget covers
/// the local-time discretisation.
pub fn verify_dm(
    ctx: &ProjectionContext,
    horizon: f64,
    cfg: &McConfig,
    epsilon: Option<f64>,
) -> Result<McReport> {
    cfg.validated()?;
    let params = *ctx.params();
    if !(horizon > 0.0) {
        return domain("T must be > 0");
    }
    let target = z_initial(&params) - expected_z_quadrature(horizon, ctx)?;
    let grid = uniform_grid(horizon, cfg.n_steps)?;
    let dt = grid[1];
    let mut report = McReport::new("dm", Some(&params), cfg);
    report.horizon = Some(horizon);
    match params.regime() {
        Regime::Positive => domain("Doob–Meyer check requires m < 2"),
        Regime::Absorbed => {
            let values = run_paths(cfg, 0, |rng| {
                let path = simulate_path(1.0, 0.0, &grid, rng)?;
                match path.absorption_time {
                    Some(rho) if rho < horizon => ctx.fv_integral_absorbed(rho, horizon),
                    _ => Ok(0.0),
                }
            })?;
            let (mean, se) = mean_stderr(&values);
            report.judge(mean, se, target, 0.0);
            report.target_source =
                "Z_0 - E[Z_T] by quadrature; estimate uses exact absorption times".into();
            Ok(report)
        }
        Regime::Reflected => {
            let eps = epsilon.unwrap_or_else(|| default_occupation_epsilon(dt));
            if !(eps > 0.0) {
                return domain("epsilon must be > 0");
            }
            let mid: Vec<f64> = grid
                .windows(2)
                .map(|w| ctx.fv_density(0.5 * (w[0] + w[1])))
                .collect::<Result<_>>()?;
            let m = params.m();
            let values = run_paths(cfg, 0, |rng| {
                let path = simulate_path(1.0, m, &grid, rng)?;
                let stieltjes = |e: f64| -> Result<f64> {
                    let lt = local_time_occupation(&path, e, m)?;
                    Ok(lt
                        .lambda_values
                        .windows(2)
                        .zip(&mid)
                        .skip(1)
                        .map(|(l, w)| w * (l[1] - l[0]))
                        .sum())
                };
                Ok((stieltjes(eps)?, stieltjes(0.5 * eps)?))
            })?;
            let main: Vec<f64> = values.iter().map(|v| v.0).collect();
            let diff: Vec<f64> = values.iter().map(|v| v.1 - v.0).collect();
            let (mean, se) = mean_stderr(&main);
            let (shift, shift_se) = mean_stderr(&diff);
            let budget = 0.05 * target.abs();
            report.judge(mean, se, target, budget);
            report.target_source =
                "Z_0 - E[Z_T] by quadrature; estimate uses the occupation local time".into();
            report.details.insert("epsilon".into(), eps);
            report.details.insert("half_epsilon_shift".into(), shift);
            report
                .details
                .insert("half_epsilon_shift_stderr".into(), shift_se);
            if shift.abs() - 3.0 * shift_se > budget {
                report.verdict = Verdict::Inconclusive;
                report.notes.push(
                    "estimate moves by more than the bias budget when epsilon is halved".into(),
                );
            }
            Ok(report)
        }
    }
}

/// Horizon for inverse local time: `max_windows` windows of length `window`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceHorizon {
    pub window: f64,
    pub max_windows: usize,
}

impl Default for LaplaceHorizon {
    fn default() -> Self {
        Self {
            window: 1.0,
            max_windows: 10,
        }
    }
}

/// `exp(-(Γ(m/2)/Γ(1-m/2)) s (z/2)^{1-m/2})`.
pub fn laplace_target(m: f64, s: f64, z: f64) -> Result<f64> {
    if !(m > 0.0 && m < 2.0) || !(s >= 0.0) || !(z >= 0.0) {
        return domain("laplace target requires 0 < m < 2, s ≥ 0, z ≥ 0");
    }
    Ok(
        (-(gamma_fn(0.5 * m)? / gamma_fn(1.0 - 0.5 * m)?) * s * (0.5 * z).powf(1.0 - 0.5 * m))
            .exp(),
    )
}

/// `E[exp(-z A_s)]` from `X_0 = 0`, one report per `s`, all from the same paths.
///
/// `cfg.n_steps` is the number of steps per window. Paths whose local time has
/// not passed `s` after the last window contribute `e^{-z T_max}/2`, which is
/// off by at most the same amount; the run is inconclusive when that bound
/// exceeds the standard error.
pub fn verify_laplace_multi(
    m: f64,
    s_values: &[f64],
    z: f64,
    cfg: &McConfig,
    horizon: LaplaceHorizon,
    epsilon: Option<f64>,
) -> Result<Vec<McReport>> {
    cfg.validated()?;
    if !(m > 0.0 && m < 2.0) {
        return domain("laplace check requires 0 < m < 2");
    }
    if s_values.is_empty() || s_values.iter().any(|s| !(*s > 0.0)) || !(z >= 0.0) {
        return domain("laplace check requires s > 0 and z ≥ 0");
    }
    if !(horizon.window > 0.0) || horizon.max_windows == 0 {
        return domain("horizon needs a positive window and at least one window");
    }
    let grid = uniform_grid(horizon.window, cfg.n_steps)?;
    let eps = epsilon.unwrap_or_else(|| default_occupation_epsilon(grid[1]));
    let t_max = horizon.window * horizon.max_windows as f64;
    let tail = 0.5 * (-z * t_max).exp();
    let s_max = s_values.iter().copied().fold(0.0, f64::max);

    let hits = if z == 0.0 {
        Vec::new()
    } else {
        run_paths(cfg, 0, |rng| {
            let mut hit: Vec<Option<f64>> = vec![None; s_values.len()];
            let mut x = 0.0;
            let mut lambda = 0.0;
            for w in 0..horizon.max_windows {
                let path = simulate_path(x, m, &grid, rng)?;
                let lt = local_time_occupation(&path, eps, m)?;
                let base = w as f64 * horizon.window;
                for (slot, &s) in hit.iter_mut().zip(s_values) {
                    if slot.is_none() {
                        *slot = lt
                            .lambda_values
                            .iter()
                            .position(|&l| lambda + l > s)
                            .map(|i| base + lt.times[i]);
                    }
                }
                lambda += lt.final_value();
                x = *path.values.last().expect("nonempty path");
                if lambda > s_max {
                    break;
                }
            }
            Ok(hit)
        })?
    };

    let mut reports = Vec::with_capacity(s_values.len());
    for (j, &s) in s_values.iter().enumerate() {
        let mut report = McReport::new("laplace", None, cfg);
        report.horizon = Some(t_max);
        report.details.insert("m".into(), m);
        report.details.insert("s".into(), s);
        report.details.insert("z".into(), z);
        let target = laplace_target(m, s, z)?;
        report.target_source = "exp(-(Γ(m/2)/Γ(1-m/2)) s (z/2)^{1-m/2})".into();
        if z == 0.0 {
            report.judge(1.0, 0.0, target, 0.0);
            reports.push(report);
            continue;
        }
        let values: Vec<f64> = hits
            .iter()
            .map(|h| h[j].map_or(tail, |a| (-z * a).exp()))
            .collect();
        let unresolved = hits.iter().filter(|h| h[j].is_none()).count() as f64 / hits.len() as f64;
        let (mean, se) = mean_stderr(&values);
        report.judge(mean, se, target, 0.02 * target);
        report.details.insert("epsilon".into(), eps);
        report
            .details
            .insert("unresolved_fraction".into(), unresolved);
        let truncation = unresolved * tail;
        report.details.insert("truncation_bound".into(), truncation);
        if truncation > se {
            report.verdict = Verdict::Inconclusive;
            report.notes.push(
                "paths without A_s at the last window bound the error above the stderr".into(),
            );
        }
        reports.push(report);
    }
    Ok(reports)
}

/// Single-`s` form of [`verify_laplace_multi`] with the default horizon.
pub fn verify_laplace(m: f64, s: f64, z: f64, cfg: &McConfig) -> Result<McReport> {
    Ok(verify_laplace_multi(m, &[s], z, cfg, LaplaceHorizon::default(), None)?.remove(0))
}

/// Least-squares slope and R² of `log E[e^{-z A_s}]` against `s`.
pub fn laplace_log_fit(reports: &[McReport]) -> Option<(f64, f64)> {
    let points: Vec<(f64, f64)> = reports
        .iter()
        .filter_map(|r| Some((*r.details.get("s")?, r.estimate.ln())))
        .collect();
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Some((slope, r2))
}

/// Local time at `T` from `X_0 = 0` by both estimators: the occupation mean is
/// compared with `E[Λ_T] = (2T)^{1-m/2} / ((1-m/2) Γ(m/2))` (5% bias budget), and
/// the two estimator means must agree within 5% relative.
pub fn verify_local_time(
    m: f64,
    horizon: f64,
    cfg: &McConfig,
    epsilon: Option<f64>,
) -> Result<McReport> {
    cfg.validated()?;
    if !(m > 0.0 && m < 2.0) || !(horizon > 0.0) {
        return domain("local time check requires 0 < m < 2 and T > 0");
    }
    let grid = uniform_grid(horizon, cfg.n_steps)?;
    let eps = epsilon.unwrap_or_else(|| default_occupation_epsilon(grid[1]));
    let pairs = run_paths(cfg, 0, |rng| {
        let path = simulate_path(0.0, m, &grid, rng)?;
        let occ = local_time_occupation(&path, eps, m)?.final_value();
        let tan = local_time_tanaka(&path, m)?;
        Ok((occ, tan.final_value(), tan.final_raw()))
    })?;
    let occ: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let tan: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let raw: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    let (mean, se) = mean_stderr(&occ);
    let (tan_mean, tan_se) = mean_stderr(&tan);
    let (raw_mean, _) = mean_stderr(&raw);
    let half = 1.0 - 0.5 * m;
    let target = (2.0 * horizon).powf(half) / (half * gamma_fn(0.5 * m)?);
    let mut report = McReport::new("local-time", None, cfg);
    report.horizon = Some(horizon);
    report.judge(mean, se, target, 0.05 * target);
    report.target_source = "(2T)^{1-m/2} / ((1-m/2) Γ(m/2)) from X_0 = 0".into();
    let rel_gap = (tan_mean - mean).abs() / mean;
    report.details.insert("m".into(), m);
    report.details.insert("epsilon".into(), eps);
    report.details.insert("tanaka_estimate".into(), tan_mean);
    report.details.insert("tanaka_stderr".into(), tan_se);
    report
        .details
        .insert("tanaka_unclamped_estimate".into(), raw_mean);
    report
        .details
        .insert("estimator_relative_gap".into(), rel_gap);
    report.require(
        rel_gap <= 0.05,
        "occupation and Tanaka means differ by more than 5%",
    );
    Ok(report)
}

/// Quadrature of `-∂_h g(0+, z; a)` over z against `β (1/2a)^{1-m/2}`.
/// The estimate is the worst relative error; the budget is `rel_tol`.
pub fn verify_compensator(
    ctx: &ProjectionContext,
    a_values: &[f64],
    rel_tol: f64,
) -> Result<McReport> {
    let mut report = McReport::deterministic("compensator", Some(ctx.params()));
    let mut worst = 0.0f64;
    let mut problems = Vec::new();
    for &a in a_values {
        let q = ctx.compensator_rate_quadrature(a)?;
        let c = ctx.compensator_rate(a)?;
        worst = worst.max(((q - c) / c).abs());
        report.details.insert(format!("quadrature_a={a}"), q);
        report.details.insert(format!("closed_form_a={a}"), c);
        if ctx.g_mass(1.0, a)? >= ctx.g_mass(0.0, a)? {
            problems.push(format!("∫g dz not decreasing in h at a = {a}"));
        }
    }
    report.judge(worst, 0.0, 0.0, rel_tol);
    for note in problems {
        report.require(false, note);
    }
    report.target_source = "β (1/2a)^{1-m/2}; estimate is the largest relative error".into();
    Ok(report)
}

/// Largest `|f_t + m f_x + 2x f_xx|` over the grid.
pub fn verify_pde(ctx: &ProjectionContext, ts: &[f64], xs: &[f64], tol: f64) -> Result<McReport> {
    let mut report = McReport::deterministic("pde", Some(ctx.params()));
    let mut worst = 0.0f64;
    for &t in ts {
        for &x in xs {
            worst = worst.max(ctx.pde_residual(t, x)?.abs());
        }
    }
    report.judge(worst, 0.0, 0.0, tol);
    report.target_source = "f_t + m f_x + 2x f_xx = 0; estimate is the largest residual".into();
    Ok(report)
}

/// Decomposition `f(t,x) = f(t,0) - x^{1-m/2}(2t)^{-(n-m)/2} ψ(x/2t)` on the grid, the
/// closed form of ψ(0+), and the shape of ψ and p. Estimate is the largest relative error.
pub fn verify_decomposition(
    ctx: &ProjectionContext,
    ts: &[f64],
    xs: &[f64],
    tol: f64,
) -> Result<McReport> {
    let params = ctx.params();
    if params.regime() != Regime::Reflected {
        return domain("decomposition check requires 0 < m < 2");
    }
    let mut report = McReport::deterministic("decomposition", Some(params));
    let mut worst = 0.0f64;
    for &t in ts {
        for &x in xs {
            let direct = ctx.f_proj(t, x)?;
            let split = ctx.f_via_psi(t, x)?;
            worst = worst.max(((direct - split) / direct).abs());
        }
    }
    // ψ(0+) via a tiny argument; the gap shrinks like x^{m/2}
    let psi0 = ctx.psi_at_zero()?;
    let tiny = 1e-14f64;
    let gap = (ctx.psi_fn(tiny)? - psi0).abs() / psi0;
    report.details.insert("psi_zero_gap".into(), gap);
    report.details.insert("psi_zero".into(), psi0);
    report.require(
        gap < 10.0 * tiny.powf(0.5 * params.m()).max(tol),
        "ψ(x) does not approach ψ(0+)",
    );

    let grid: Vec<f64> = (0..40)
        .map(|i| 10f64.powf(-4.0 + 0.15 * i as f64))
        .collect();
    let psi: Vec<f64> = grid.iter().map(|&x| ctx.psi_fn(x)).collect::<Result<_>>()?;
    report.require(
        psi.windows(2).all(|w| w[1] < w[0]),
        "ψ not strictly decreasing",
    );
    // convexity on a nonuniform grid: divided-difference slopes increase
    let slopes: Vec<f64> = grid
        .windows(2)
        .zip(psi.windows(2))
        .map(|(g, p)| (p[1] - p[0]) / (g[1] - g[0]))
        .collect();
    report.require(
        slopes.windows(2).all(|s| s[1] - s[0] >= -1e-10),
        "ψ not convex",
    );
    if !params.is_log_scale() {
        let p: Vec<f64> = grid.iter().map(|&x| ctx.p_fn(x)).collect::<Result<_>>()?;
        let p0 = ctx.p_at_zero()?;
        report.require(p.windows(2).all(|w| w[1] < w[0]), "p not decreasing");
        report.require(
            p.iter().all(|&v| v > 0.0 && v <= p0 * (1.0 + 1e-12)),
            "p exceeds p(0+)",
        );
    }
    // boundary term vanishes as x ↓ 0
    for &t in ts {
        let corr: Vec<f64> = (2..=8)
            .map(|k| ctx.psi_correction(t, 10f64.powi(-k)))
            .collect::<Result<_>>()?;
        report.require(
            corr.windows(2).all(|w| w[1] < w[0]),
            "boundary term not decreasing",
        );
        // ψ bounded near 0, so the term shrinks like x^{1-m/2} over six decades
        let decay = 10f64.powf(-6.0 * (1.0 - params.m() / 2.0));
        report.require(
            corr[corr.len() - 1] < 10.0 * decay * corr[0],
            "boundary term does not vanish",
        );
    }
    let notes = std::mem::take(&mut report.notes);
    report.judge(worst, 0.0, 0.0, tol);
    for note in notes {
        report.require(false, note);
    }
    report.target_source =
        "f(t,0) - x^{1-m/2}(2t)^{-(n-m)/2} ψ(x/2t); estimate is the largest relative error".into();
    Ok(report)
}

/// Both closed forms against quadrature of f.
pub fn verify_closed_forms(ts: &[f64], xs: &[f64], tol: f64) -> Result<McReport> {
    let c31 = ProjectionContext::new(ModelParams::new(3.0, 1.0)?);
    let c32 = ProjectionContext::new(ModelParams::new(3.0, 2.0)?);
    let mut report = McReport::deterministic("closed-forms", None);
    let mut worst = 0.0f64;
    let (mut w31, mut w32) = (0.0f64, 0.0f64);
    for &t in ts {
        for &x in xs {
            let q = c31.f_proj(t, x)?;
            w31 = w31.max(((closed_form_n3m1(t, x)? - q) / q).abs());
            let q = c32.f_proj(t, x)?;
            w32 = w32.max(((closed_form_n3m2(t, x)? - q) / q).abs());
        }
    }
    worst = worst.max(w31).max(w32);
    report.details.insert("n3m1_max_rel_error".into(), w31);
    report.details.insert("n3m2_max_rel_error".into(), w32);
    report.judge(worst, 0.0, 0.0, tol);
    report.target_source =
        "closed forms for (n, m) = (3, 1) and (3, 2); estimate is the largest relative error"
            .into();
    Ok(report)
}

/// Sampler checks: KS distance of draws from 0 (δ = 3, t = 1) to the Gamma law,
/// absorption mass at (x = 1, δ = 0, t = 0.5), and the first two moments on
/// 20 random `(x, δ, dt)` triples. The estimate is the KS distance.
pub fn verify_sampler_moments(cfg: &McConfig) -> Result<McReport> {
    cfg.validated()?;
    let mut report = McReport::new("sampler-moments", None, cfg);
    report.n_steps = 1;

    let draws = run_paths(cfg, 0, |rng| sample_besq_transition(0.0, 3.0, 1.0, rng))?;
    let ks = ks_distance(&draws, |q| zero_start_cdf(q, 3.0, 1.0).unwrap_or(f64::NAN));
    report.judge(ks, 0.0, 0.0, 0.01);
    report.target_source = "KS distance to Gamma(3/2, scale 2); budget 0.01".into();

    let zeros = run_paths(cfg, 1 << 40, |rng| {
        Ok((sample_besq_transition(1.0, 0.0, 0.5, rng)? == 0.0) as u8 as f64)
    })?;
    let (p0, p0_se) = mean_stderr(&zeros);
    let p0_target = (-1.0f64).exp();
    report.details.insert("absorption_fraction".into(), p0);
    report.details.insert("absorption_target".into(), p0_target);
    report.require(
        (p0 - p0_target).abs() <= 3.0 * p0_se,
        "absorption mass off by more than 3 stderr",
    );

    let mut triple_rng = RngStream::new(cfg.seed, 1 << 41).rng();
    let per_triple = McConfig {
        n_paths: (cfg.n_paths / 10).max(1000),
        ..*cfg
    };
    let mut worst_mean = 0.0f64;
    let mut worst_var = 0.0f64;
    for k in 0..20u64 {
        let x = 5.0 * triple_rng.random::<f64>();
        let delta = 5.0 * triple_rng.random::<f64>();
        let dt = 0.01 + 2.0 * triple_rng.random::<f64>();
        let xs = run_paths(&per_triple, (1 << 42) + (k << 32), |rng| {
            sample_besq_transition(x, delta, dt, rng)
        })?;
        let (mean, mean_se) = mean_stderr(&xs);
        let (var, var_se) = variance_stderr(&xs);
        let mean_z = (mean - (x + delta * dt)).abs() / mean_se;
        let var_z = (var - (4.0 * x * dt + 2.0 * delta * dt * dt)).abs() / var_se;
        worst_mean = worst_mean.max(mean_z);
        worst_var = worst_var.max(var_z);
    }
    report
        .details
        .insert("moment_mean_worst_sigmas".into(), worst_mean);
    report
        .details
        .insert("moment_variance_worst_sigmas".into(), worst_var);
    report.require(worst_mean <= 4.0, "sample mean off by more than 4 stderr");
    report.require(
        worst_var <= 5.0,
        "sample variance off by more than 5 stderr",
    );
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(n: f64, m: f64) -> ProjectionContext {
        ProjectionContext::new(ModelParams::new(n, m).unwrap())
    }

    #[test]
    fn verdict_rule() {
        assert_eq!(verdict_for(1.0, 0.1, 1.25, 0.0), Verdict::Pass);
        assert_eq!(verdict_for(1.0, 0.1, 1.35, 0.0), Verdict::Fail);
        assert_eq!(verdict_for(1.0, 0.1, 1.35, 0.1), Verdict::Pass);
        assert_eq!(verdict_for(f64::NAN, 0.1, 1.0, 1.0), Verdict::Fail);
    }

    #[test]
    fn expected_z_examples() {
        let target = 1.0 - (-0.5f64).exp();
        for m in [0.0, 1.0, 2.5] {
            assert!((expected_z_quadrature(1.0, &ctx(4.0, m)).unwrap() - target).abs() < 1e-12);
        }
        assert!((expected_z_quadrature(1e-6, &ctx(4.0, 1.0)).unwrap() - 1.0).abs() < 1e-3);
        let v = expected_z_quadrature(1.0, &ctx(3.0, 1.0)).unwrap();
        assert!(v > 0.0 && v < 1.0);
        assert!(expected_z_quadrature(0.0, &ctx(3.0, 1.0)).is_err());
    }

    #[test]
    fn expected_z_matches_density_quadrature() {
        // noncentral chi-square density of dimension n from 1, integrated against s
        for (n, t) in [(3.0, 0.7), (2.0, 1.3), (5.5, 0.4)] {
            let c = ctx(n, 0.5);
            let nu = 0.5 * n - 1.0;
            let density = |q: f64| {
                let arg = q.sqrt() / t;
                // I_ν series; arg stays moderate on the integration range
                let mut term = (0.5 * arg).powf(nu) / gamma_fn(nu + 1.0).unwrap();
                let mut sum = term;
                for k in 1..400 {
                    term *= 0.25 * arg * arg / (k as f64 * (k as f64 + nu));
                    sum += term;
                    if term < 1e-18 * sum {
                        break;
                    }
                }
                (1.0 / (2.0 * t)) * q.powf(0.5 * nu) * (-(1.0 + q) / (2.0 * t)).exp() * sum
            };
            let s = |q: f64| {
                if n == 2.0 {
                    -q.ln()
                } else {
                    q.powf(1.0 - 0.5 * n)
                }
            };
            // q = u² keeps the integrand smooth at the origin
            let oracle = integrate_adaptive(
                |u: f64| 2.0 * u * s(u * u) * density(u * u),
                0.0,
                12.0,
                1e-12,
            )
            .unwrap();
            let v = expected_z_quadrature(t, &c).unwrap();
            assert!((v - oracle).abs() < 1e-9, "n = {n}: {v} vs {oracle}");
        }
    }

    #[test]
    fn absorbed_integral_matches_mixture() {
        for n in [3.0, 4.0, 6.0] {
            let c = ctx(n, 0.0);
            for t in [0.3, 1.0, 2.0] {
                let a = expected_z_absorbed(t, &c).unwrap();
                let b = expected_z_quadrature(t, &c).unwrap();
                assert!((a - b).abs() < 1e-9, "n = {n}, t = {t}");
            }
        }
    }

    #[test]
    fn ks_helpers() {
        let u: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!(ks_distance(&u, |x| x) <= 0.0005 + 1e-12);
        assert_eq!(ks_two_sample(&u, &u), 0.0);
        let shifted: Vec<f64> = u.iter().map(|x| x + 0.1).collect();
        assert!((ks_two_sample(&u, &shifted) - 0.1).abs() < 2e-3);
    }

    #[test]
    fn run_paths_independent_of_workers() {
        let cfg = McConfig::new(64, 10, 9);
        let f = |rng: &mut ChaCha8Rng| sample_besq_transition(1.0, 1.0, 0.5, rng);
        let a = run_paths(&cfg.with_workers(Some(1)), 0, f).unwrap();
        let b = run_paths(&cfg.with_workers(Some(3)), 0, f).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn laplace_zero_z_is_one() {
        let r = verify_laplace(1.0, 0.5, 0.0, &McConfig::new(10, 10, 1)).unwrap();
        assert_eq!(r.estimate, 1.0);
        assert_eq!(r.verdict, Verdict::Pass);
        assert!((laplace_target(1.0, 0.5, 1.0).unwrap() - 0.702_188_501_326_559_6).abs() < 1e-15);
    }

    #[test]
    fn laplace_small_s_near_one() {
        let cfg = McConfig::new(200, 1000, 4);
        let r =
            verify_laplace_multi(1.0, &[1e-4], 1.0, &cfg, LaplaceHorizon::default(), None).unwrap();
        assert!(r[0].estimate > 0.99);
    }

    #[test]
    fn compensator_report() {
        let r = verify_compensator(&ctx(4.0, 1.0), &[0.25, 0.5, 1.0, 4.0], 1e-8).unwrap();
        assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
        assert!((r.details["closed_form_a=0.5"] - 0.886_226_925_452_758).abs() < 1e-14);
    }
}
