//! Exact simulation of squared Bessel paths and estimators of their local time at zero.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::projection::{s_fn, ProjectionContext};
use crate::specfun::{gamma_p, ln_gamma};

/// Seeded ChaCha8 generator; `(seed, stream_id)` pins down every draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// One exact draw of `X_{t+dt}` given `X_t = x` for a squared Bessel process of dimension `delta`:
/// `N ~ Poisson(x / 2dt)`, then `Gamma(delta/2 + N, scale 2dt)`, with an atom at 0 when `delta = N = 0`.
pub fn sample_besq_transition<R: Rng + ?Sized>(
    x: f64,
    delta: f64,
    dt: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(dt > 0.0) || !dt.is_finite() {
        return domain(format!("dt must be > 0, got {dt}"));
    }
    if !(x >= 0.0) || !x.is_finite() {
        return domain(format!("x must be ≥ 0, got {x}"));
    }
    if !(delta >= 0.0) || !delta.is_finite() {
        return domain(format!("dimension must be ≥ 0, got {delta}"));
    }
    Ok(transition(x, delta, dt, rng))
}

fn transition<R: Rng + ?Sized>(x: f64, delta: f64, dt: f64, rng: &mut R) -> f64 {
    let lambda = x / (2.0 * dt);
    let count = if lambda > 0.0 {
        Poisson::new(lambda)
            .expect("finite positive rate")
            .sample(rng)
    } else {
        0.0
    };
    let shape = 0.5 * delta + count;
    if shape == 0.0 {
        return 0.0;
    }
    Gamma::new(shape, 2.0 * dt)
        .expect("positive shape and scale")
        .sample(rng)
}

/// Density at `q > 0` of a squared Bessel process of dimension `delta > 0` started at 0,
/// at time `t`: the Gamma(delta/2, scale 2t) density.
pub fn zero_start_density(q: f64, delta: f64, t: f64) -> Result<f64> {
    if !(q > 0.0) || !(delta > 0.0) || !(t > 0.0) {
        return domain("zero_start_density requires q, delta, t > 0");
    }
    let k = 0.5 * delta;
    let theta = 2.0 * t;
    Ok(((k - 1.0) * q.ln() - q / theta - k * theta.ln() - ln_gamma(k)?).exp())
}

/// Distribution function matching [`zero_start_density`].
pub fn zero_start_cdf(q: f64, delta: f64, t: f64) -> Result<f64> {
    if !(delta > 0.0) || !(t > 0.0) {
        return domain("zero_start_cdf requires delta, t > 0");
    }
    if q <= 0.0 {
        return Ok(0.0);
    }
    gamma_p(0.5 * delta, q / (2.0 * t))
}

/// `n_steps + 1` equally spaced times on `[0, horizon]`.
pub fn uniform_grid(horizon: f64, n_steps: usize) -> Result<Vec<f64>> {
    if !(horizon > 0.0) || n_steps == 0 {
        return domain("grid requires horizon > 0 and at least one step");
    }
    let dt = horizon / n_steps as f64;
    Ok((0..=n_steps)
        .map(|i| if i == n_steps { horizon } else { i as f64 * dt })
        .collect())
}

/// Uniform grid on `[0, horizon]` whose first uniform cell is split geometrically
/// into `refine` cells with ratio 1/2, for resolution near t = 0.
pub fn refined_grid(horizon: f64, n_steps: usize, refine: usize) -> Result<Vec<f64>> {
    let mut grid = uniform_grid(horizon, n_steps)?;
    let first = grid[1];
    let mut head: Vec<f64> = (1..=refine)
        .rev()
        .map(|j| first * 0.5f64.powi(j as i32))
        .collect();
    head.insert(0, 0.0);
    grid.splice(0..1, head);
    Ok(grid)
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 || grid[0] != 0.0 {
        return domain("grid must start at 0 and contain at least two times");
    }
    if grid.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
        return domain("grid must be strictly increasing and finite");
    }
    Ok(())
}

/// A simulated path on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// First grid index with value exactly 0 (dimension 0 only).
    pub absorbed_at: Option<usize>,
    /// Exact absorption time, drawn from the conditional law of the hitting
    /// time inside the grid cell that ends at `absorbed_at`.
    pub absorption_time: Option<f64>,
}

impl PathSample {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Sub-path on grid indices `from..=to`, with times shifted to start at 0.
    pub fn segment(&self, from: usize, to: usize) -> Result<PathSample> {
        if from >= to || to >= self.len() {
            return domain("segment needs from < to < len");
        }
        let t0 = self.times[from];
        let absorbed_at = self
            .absorbed_at
            .map(|i| i.saturating_sub(from))
            .filter(|_| self.absorbed_at <= Some(to));
        Ok(PathSample {
            times: self.times[from..=to].iter().map(|t| t - t0).collect(),
            values: self.values[from..=to].to_vec(),
            absorbed_at,
            absorption_time: self
                .absorption_time
                .filter(|_| absorbed_at.is_some())
                .map(|t| (t - t0).max(0.0)),
        })
    }
}

/// Chains exact transitions along `grid`. For `delta = 0` the path is frozen
/// at 0 once absorbed.
pub fn simulate_path<R: Rng + ?Sized>(
    x0: f64,
    delta: f64,
    grid: &[f64],
    rng: &mut R,
) -> Result<PathSample> {
    check_grid(grid)?;
    if !(x0 >= 0.0) || !x0.is_finite() || !(delta >= 0.0) || !delta.is_finite() {
        return domain(format!(
            "simulate_path requires x0 ≥ 0 and delta ≥ 0, got ({x0}, {delta})"
        ));
    }
    let mut values = Vec::with_capacity(grid.len());
    values.push(x0);
    let mut absorbed_at = (delta == 0.0 && x0 == 0.0).then_some(0);
    let mut absorption_time = absorbed_at.map(|_| 0.0);
    for (i, w) in grid.windows(2).enumerate() {
        let prev = values[i];
        if absorbed_at.is_some() {
            values.push(0.0);
            continue;
        }
        let dt = w[1] - w[0];
        let next = transition(prev, delta, dt, rng);
        if delta == 0.0 && next == 0.0 {
            absorbed_at = Some(i + 1);
            // P(ρ - t_i ≤ s | X_{t_i} = x, X_{t_{i+1}} = 0) = e^{-x/2s} / e^{-x/2dt}
            let e: f64 = Exp1.sample(rng);
            absorption_time = Some(w[0] + prev / (2.0 * (e + prev / (2.0 * dt))));
        }
        values.push(next);
    }
    Ok(PathSample {
        times: grid.to_vec(),
        values,
        absorbed_at,
        absorption_time,
    })
}

/// First grid time with value ≤ threshold. With threshold 0 on an absorbed
/// path this is the grid absorption time.
pub fn hitting_time_rho(path: &PathSample, threshold: f64) -> Option<f64> {
    if threshold == 0.0 {
        if let Some(i) = path.absorbed_at {
            return Some(path.times[i]);
        }
    }
    path.values
        .iter()
        .position(|&v| v <= threshold)
        .map(|i| path.times[i])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocalTimeMethod {
    Occupation,
    Tanaka,
}

/// Cumulative local-time estimate on a path's grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalTimeEstimate {
    pub times: Vec<f64>,
    pub lambda_values: Vec<f64>,
    pub method: LocalTimeMethod,
    /// Level ε for the occupation estimator; skip threshold for Tanaka.
    pub epsilon: f64,
    /// Tanaka only: the signed sum before the running-maximum clamp.
    pub raw_values: Option<Vec<f64>>,
}

impl LocalTimeEstimate {
    pub fn final_value(&self) -> f64 {
        *self.lambda_values.last().unwrap_or(&0.0)
    }

    pub fn final_raw(&self) -> f64 {
        self.raw_values
            .as_ref()
            .and_then(|r| r.last().copied())
            .unwrap_or_else(|| self.final_value())
    }
}

/// Default occupation level for a grid step `dt`.
pub fn default_occupation_epsilon(dt: f64) -> f64 {
    dt
}

/// Default skip threshold for the Tanaka estimator.
pub fn default_tanaka_threshold(dt: f64) -> f64 {
    dt.sqrt()
}

fn check_reflecting(m: f64) -> Result<()> {
    if !(m > 0.0 && m < 2.0) {
        return domain(format!("local time estimators require 0 < m < 2, got {m}"));
    }
    Ok(())
}

/// `Λ_t ≈ m ε^{-m/2} ∫₀^t 1{X_u < ε} du`, left-point rule on the grid.
pub fn local_time_occupation(path: &PathSample, epsilon: f64, m: f64) -> Result<LocalTimeEstimate> {
    check_reflecting(m)?;
    if !(epsilon > 0.0) {
        return domain(format!("epsilon must be > 0, got {epsilon}"));
    }
    let weight = m * epsilon.powf(-0.5 * m);
    let mut acc = 0.0;
    let mut lambda_values = Vec::with_capacity(path.len());
    lambda_values.push(0.0);
    for (w, &x) in path.times.windows(2).zip(&path.values) {
        if x < epsilon {
            acc += weight * (w[1] - w[0]);
        }
        lambda_values.push(acc);
    }
    Ok(LocalTimeEstimate {
        times: path.times.clone(),
        lambda_values,
        method: LocalTimeMethod::Occupation,
        epsilon,
        raw_values: None,
    })
}

/// Tanaka estimate with the default skip threshold `√dt` (first grid step).
pub fn local_time_tanaka(path: &PathSample, m: f64) -> Result<LocalTimeEstimate> {
    let dt = path.times.get(1).copied().unwrap_or(1.0);
    local_time_tanaka_with(path, m, default_tanaka_threshold(dt))
}

/// `Λ_t = V(X_t) - V(X_0) - Σ 1{X_i > ε} X_i^{-m/2} (ΔX_i - m Δt_i)` with
/// `V(x) = x^{1-m/2}/(1-m/2)`, then clamped by its running maximum.
pub fn local_time_tanaka_with(
    path: &PathSample,
    m: f64,
    threshold: f64,
) -> Result<LocalTimeEstimate> {
    check_reflecting(m)?;
    if !(threshold >= 0.0) {
        return domain("threshold must be ≥ 0");
    }
    let power = 1.0 - 0.5 * m;
    let v = |x: f64| x.powf(power) / power;
    let v0 = v(path.values[0]);
    let mut martingale = 0.0;
    let mut raw = Vec::with_capacity(path.len());
    let mut clamped = Vec::with_capacity(path.len());
    raw.push(0.0);
    clamped.push(0.0);
    let mut running = 0.0f64;
    for (i, w) in path.times.windows(2).enumerate() {
        let x = path.values[i];
        let next = path.values[i + 1];
        if x > threshold {
            martingale += x.powf(-0.5 * m) * (next - x - m * (w[1] - w[0]));
        }
        let value = v(next) - v0 - martingale;
        running = running.max(value);
        raw.push(value);
        clamped.push(running);
    }
    Ok(LocalTimeEstimate {
        times: path.times.clone(),
        lambda_values: clamped,
        method: LocalTimeMethod::Tanaka,
        epsilon: threshold,
        raw_values: Some(raw),
    })
}

/// `A_s`: first grid time with `Λ > s`.
pub fn inverse_local_time(est: &LocalTimeEstimate, s: f64) -> Option<f64> {
    est.lambda_values
        .iter()
        .position(|&l| l > s)
        .map(|i| est.times[i])
}

/// `Z_{t_i} = f(t_i, X_{t_i})` on the path grid; index 0 holds `s(X_0)`.
pub fn z_along_path(path: &PathSample, ctx: &ProjectionContext) -> Result<Vec<f64>> {
    let params = ctx.params();
    let mut out = Vec::with_capacity(path.len());
    let x0 = path.values[0];
    out.push(if x0 > 0.0 {
        s_fn(x0, params)?
    } else {
        f64::INFINITY
    });
    for (&t, &x) in path.times.iter().zip(&path.values).skip(1) {
        let z = if x == 0.0 && params.m() < 2.0 {
            ctx.f_at_zero(t)?
        } else {
            ctx.f_proj(t, x)?
        };
        out.push(z);
    }
    Ok(out)
}

fn fmt17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// Writes `[path_id,]t,x[,z][,lambda]` rows with a header; values carry 17 significant digits.
pub fn write_path_csv<W: Write>(
    out: &mut W,
    path_id: Option<usize>,
    path: &PathSample,
    z: Option<&[f64]>,
    lambda: Option<&[f64]>,
    header: bool,
) -> io::Result<()> {
    if header {
        let mut cols = Vec::new();
        if path_id.is_some() {
            cols.push("path_id");
        }
        cols.extend(["t", "x"]);
        if z.is_some() {
            cols.push("z");
        }
        if lambda.is_some() {
            cols.push("lambda");
        }
        writeln!(out, "{}", cols.join(","))?;
    }
    for i in 0..path.len() {
        let mut row = Vec::with_capacity(5);
        if let Some(id) = path_id {
            row.push(id.to_string());
        }
        row.push(fmt17(path.times[i]));
        row.push(fmt17(path.values[i]));
        if let Some(z) = z {
            row.push(fmt17(z[i]));
        }
        if let Some(l) = lambda {
            row.push(fmt17(l[i]));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
