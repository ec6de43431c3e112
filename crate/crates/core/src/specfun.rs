//! Special functions and model parameters.
//!
//! Gamma is evaluated with a Lanczos approximation (g = 7, nine terms), which
//! is accurate to roughly 15 significant digits on the positive axis. `K0` is
//! evaluated from its integral representation after the substitution
//! `y = cosh(u)`, using the trapezoidal rule, which converges geometrically
//! for this analytic, double-exponentially decaying integrand.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

const LANCZOS_G: f64 = 7.0;
#[allow(clippy::excessive_precision)]
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Boundary behaviour of the dimension-`m` component at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// `m = 0`: absorbed at zero.
    Absorbed,
    /// `0 < m < 2`: instantaneously reflected at zero, accrues local time.
    Reflected,
    /// `m >= 2`: never reaches zero.
    Positive,
}

/// Dimensions `(n, m)` of the pair `X ~ BESQ^m(1)`, `Y ~ BESQ^{n-m}(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelParams {
    n: f64,
    m: f64,
    regime: Regime,
}

impl ModelParams {
    pub fn new(n: f64, m: f64) -> Result<Self> {
        if !n.is_finite() || n < 2.0 {
            return domain("n must be ≥ 2");
        }
        if !m.is_finite() || m < 0.0 {
            return domain("m must be ≥ 0");
        }
        if m >= n {
            return domain("m must be < n");
        }
        let regime = if m == 0.0 {
            Regime::Absorbed
        } else if m < 2.0 {
            Regime::Reflected
        } else {
            Regime::Positive
        };
        Ok(Self { n, m, regime })
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    /// `n = 2`, where the scale function is logarithmic.
    pub fn is_log_scale(&self) -> bool {
        self.n == 2.0
    }

    /// `n/2 - 1`, the exponent of the scale function for `n > 2`.
    pub fn scale_exponent(&self) -> f64 {
        0.5 * self.n - 1.0
    }

    /// `(n - m)/2`, the Gamma shape of `Y_t`.
    pub fn y_shape(&self) -> f64 {
        0.5 * (self.n - self.m)
    }
}

impl<'de> Deserialize<'de> for ModelParams {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            n: f64,
            m: f64,
        }
        let raw = Raw::deserialize(deserializer)?;
        ModelParams::new(raw.n, raw.m).map_err(serde::de::Error::custom)
    }
}

fn lanczos_sum(x: f64) -> f64 {
    // x is the shifted argument (k - 1)
    let mut acc = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    acc
}

/// Γ(k) for k > 0.
pub fn gamma_fn(k: f64) -> Result<f64> {
    if !(k > 0.0) {
        return domain(format!("gamma_fn requires k > 0, got {k}"));
    }
    Ok(gamma_unchecked(k))
}

fn gamma_unchecked(k: f64) -> f64 {
    if k < 0.5 {
        return PI / ((PI * k).sin() * gamma_unchecked(1.0 - k));
    }
    if k > 171.7 {
        return f64::INFINITY;
    }
    // Exact factorials keep integer arguments exact.
    if k.fract() == 0.0 && k <= 30.0 {
        return (1..k as u64).fold(1.0, |acc, j| acc * j as f64);
    }
    let x = k - 1.0;
    let t = x + LANCZOS_G + 0.5;
    (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * lanczos_sum(x)
}

/// ln Γ(k) for k > 0; stays finite where Γ overflows.
pub fn ln_gamma(k: f64) -> Result<f64> {
    if !(k > 0.0) {
        return domain(format!("ln_gamma requires k > 0, got {k}"));
    }
    if k < 0.5 {
        return Ok((PI / (PI * k).sin()).ln() - ln_gamma(1.0 - k)?);
    }
    let x = k - 1.0;
    let t = x + LANCZOS_G + 0.5;
    Ok(0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + lanczos_sum(x).ln())
}

/// Regularized lower incomplete gamma P(k, x) = γ(k, x)/Γ(k).
pub fn gamma_p(k: f64, x: f64) -> Result<f64> {
    if !(k > 0.0) || !(x >= 0.0) {
        return domain(format!("gamma_p requires k > 0 and x ≥ 0, got ({k}, {x})"));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    let log_prefactor = k * x.ln() - x - ln_gamma(k)?;
    if x < k + 1.0 {
        // x^k e^{-x}/Γ(k+1) Σ x^j / ((k+1)...(k+j))
        let mut term = 1.0 / k;
        let mut sum = term;
        for j in 1..10_000 {
            term *= x / (k + j as f64);
            sum += term;
            if term < sum * 1e-17 {
                return Ok((log_prefactor.exp() * sum).min(1.0));
            }
        }
        return Err(Error::Series(format!("gamma_p series at ({k}, {x})")));
    }
    // Q(k, x) by the modified Lentz continued fraction
    let tiny = 1e-300;
    let mut b = x + 1.0 - k;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for j in 1..10_000 {
        let an = -(j as f64) * (j as f64 - k);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            return Ok((1.0 - log_prefactor.exp() * h).max(0.0));
        }
    }
    Err(Error::Series(format!(
        "gamma_p continued fraction at ({k}, {x})"
    )))
}

/// Digamma ψ(k) = Γ'(k)/Γ(k) for k > 0.
pub fn digamma(k: f64) -> Result<f64> {
    if !(k > 0.0) {
        return domain(format!("digamma requires k > 0, got {k}"));
    }
    let mut x = k;
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    // Bernoulli tail: B2/2, B4/4, ..., B12/12
    let tail = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * 691.0 / 32760.0)))));
    Ok(acc + x.ln() - 0.5 / x - tail)
}

/// Standard normal cumulative distribution function Φ(x).
pub fn normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Upper tail 1 - Φ(x) without cancellation for large positive x.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

const K0_STEP: f64 = 0.1;

/// e^k K0(k) = ∫₀^∞ exp(-k (cosh u - 1)) du.
pub fn bessel_k0_scaled(k: f64) -> Result<f64> {
    if !(k > 0.0) || !k.is_finite() {
        return domain(format!("bessel_k0 requires k > 0, got {k}"));
    }
    // The integrand is decreasing in u; past u_max it is below every
    // representable contribution. Stop early once terms are negligible.
    let u_max = (20.0 / k).max(30.0);
    let mut sum = 0.5; // u = 0 term, half weight
    let mut j = 1u64;
    loop {
        let u = j as f64 * K0_STEP;
        if u > u_max {
            break;
        }
        let s = (0.5 * u).sinh();
        let term = (-2.0 * k * s * s).exp();
        sum += term;
        if term < 1e-18 * sum {
            break;
        }
        j += 1;
    }
    Ok(sum * K0_STEP)
}

/// Modified Bessel function of the second kind, order zero.
pub fn bessel_k0(k: f64) -> Result<f64> {
    Ok(bessel_k0_scaled(k)? * (-k).exp())
}

/// β = Γ(m/2) Γ((n-m)/2) / (Γ(n/2 - 1) Γ(1 - m/2)), defined for n > 2 and 0 < m < 2.
pub fn beta_constant(params: &ModelParams) -> Result<f64> {
    if params.is_log_scale() || params.regime() != Regime::Reflected {
        return domain("beta_constant requires n > 2 and 0 < m < 2");
    }
    let m = params.m();
    Ok(gamma_unchecked(0.5 * m) * gamma_unchecked(params.y_shape())
        / (gamma_unchecked(params.scale_exponent()) * gamma_unchecked(1.0 - 0.5 * m)))
}
