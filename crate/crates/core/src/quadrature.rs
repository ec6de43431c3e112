//! Adaptive Gauss–Kronrod quadrature for e^{-w}-weighted integrals on (0, ∞)
//! with an integrable endpoint singularity `w^{-α}` at zero.
//!
//! On `(0, 1)` the substitution `w = v^{1/(1-α)}` turns `w^{-α} dw` into a
//! bounded measure; `(1, W_max)` is integrated directly. Both pieces are glued
//! into one parameter interval `[0, W_max]` (the map is the identity at 1) and
//! refined by a single global bisection loop driven by the 21-point
//! Gauss–Kronrod error estimate.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{domain, Error, Result};

#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

const DEFAULT_MAX_SUBDIVISIONS: usize = 4000;

/// Tolerances and integrand structure for [`integrate_singular_exp`].
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Exponent α of the `w^{-α}` behaviour at zero, `0 <= α < 1`.
    pub singularity_exponent: f64,
    /// Truncation point `W_max` of the infinite range.
    pub truncation_bound: f64,
    /// Points in `(0, W_max)` where the integrand changes scale.
    pub breakpoints: Vec<f64>,
    pub max_subdivisions: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-14,
            singularity_exponent: 0.0,
            truncation_bound: 60.0,
            breakpoints: Vec::new(),
            max_subdivisions: DEFAULT_MAX_SUBDIVISIONS,
        }
    }
}

impl QuadratureSpec {
    pub fn new(
        rel_tol: f64,
        abs_tol: f64,
        singularity_exponent: f64,
        truncation_bound: f64,
    ) -> Result<Self> {
        Self {
            rel_tol,
            abs_tol,
            singularity_exponent,
            truncation_bound,
            ..Self::default()
        }
        .validated()
    }

    /// Default tolerances with `W_max = 60 + 10 c` for an integrand growing
    /// like `w^c` against `e^{-w}`.
    pub fn for_degree(singularity_exponent: f64, degree: f64) -> Result<Self> {
        Self {
            singularity_exponent,
            truncation_bound: default_truncation(degree),
            ..Self::default()
        }
        .validated()
    }

    pub fn with_tolerances(mut self, rel_tol: f64, abs_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self.abs_tol = abs_tol;
        self
    }

    pub fn with_breakpoints(mut self, points: impl IntoIterator<Item = f64>) -> Self {
        self.breakpoints.extend(points);
        self
    }

    pub fn validated(self) -> Result<Self> {
        let alpha = self.singularity_exponent;
        if !(0.0..1.0).contains(&alpha) {
            return domain(format!(
                "singularity exponent must lie in [0, 1), got {alpha}"
            ));
        }
        if !(self.truncation_bound > 1.0) || !self.truncation_bound.is_finite() {
            return domain("truncation bound must be finite and > 1");
        }
        if !(self.rel_tol > 0.0) || self.abs_tol < 0.0 {
            return domain("tolerances must be positive");
        }
        Ok(self)
    }
}

/// `W_max = 60 + 10 c`, so that `∫_{W_max}^∞ w^c e^{-w} dw` is far below 1e-14.
pub fn default_truncation(degree: f64) -> f64 {
    60.0 + 10.0 * degree.max(0.0)
}

/// A quadrature value with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub err_estimate: f64,
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
    abs: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// 21-point Kronrod rule with embedded 10-point Gauss rule.
/// Returns (Kronrod value, error estimate, ∫|f|).
pub(crate) fn gauss_kronrod21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_k = fc * WGK[10];
    let mut res_g = 0.0;
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let x = half * XGK[j];
        let f1 = f(center - x);
        let f2 = f(center + x);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = res_k * half;
    res_abs *= half.abs();
    res_asc *= half.abs();
    let mut err = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    (value, err, res_abs)
}

/// Global adaptive bisection over the given initial partition.
fn adaptive<F: Fn(f64) -> f64>(
    f: &F,
    knots: &[f64],
    rel_tol: f64,
    abs_tol: f64,
    max_subdivisions: usize,
) -> Result<Integral> {
    let mut heap = BinaryHeap::new();
    let mut total = 0.0;
    let mut total_err = 0.0;
    let mut total_abs = 0.0;
    // Error mass of segments too narrow to split further.
    let mut frozen_err = 0.0;
    for w in knots.windows(2) {
        let (value, err, abs) = gauss_kronrod21(f, w[0], w[1]);
        total += value;
        total_err += err;
        total_abs += abs;
        heap.push(Segment {
            a: w[0],
            b: w[1],
            value,
            err,
            abs,
        });
    }
    let mut count = heap.len();
    loop {
        if !total.is_finite() || !total_err.is_finite() {
            return Err(Error::NotConverged {
                estimate: total,
                err_estimate: total_err,
            });
        }
        // the per-segment roundoff floors add up and cannot be refined away
        let tol = abs_tol.max(rel_tol * total.abs()) + 50.0 * f64::EPSILON * total_abs;
        if total_err <= tol {
            return Ok(Integral {
                value: total,
                err_estimate: total_err,
            });
        }
        let Some(seg) = heap.pop() else {
            // Everything left is frozen at roundoff level.
            if frozen_err <= 10.0 * tol {
                return Ok(Integral {
                    value: total,
                    err_estimate: total_err,
                });
            }
            return Err(Error::NotConverged {
                estimate: total,
                err_estimate: total_err,
            });
        };
        if count >= max_subdivisions {
            return Err(Error::NotConverged {
                estimate: total,
                err_estimate: total_err,
            });
        }
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a
            || mid >= seg.b
            || (seg.b - seg.a) <= 4.0 * f64::EPSILON * seg.a.abs().max(f64::MIN_POSITIVE)
        {
            frozen_err += seg.err;
            continue;
        }
        let (v1, e1, a1) = gauss_kronrod21(f, seg.a, mid);
        let (v2, e2, a2) = gauss_kronrod21(f, mid, seg.b);
        total += v1 + v2 - seg.value;
        total_err += e1 + e2 - seg.err;
        total_abs += a1 + a2 - seg.abs;
        heap.push(Segment {
            a: seg.a,
            b: mid,
            value: v1,
            err: e1,
            abs: a1,
        });
        heap.push(Segment {
            a: mid,
            b: seg.b,
            value: v2,
            err: e2,
            abs: a2,
        });
        count += 1;
    }
}

/// ∫₀^∞ f(w) dw for integrands with `f(w) w^α` bounded near zero and
/// `f(w) e^{w}` of at most polynomial growth.
///
/// The returned error estimate combines the Gauss–Kronrod refinement
/// estimate with a tail bound of `2 |f(W_max)|`.
pub fn integrate_singular_exp<F: Fn(f64) -> f64>(f: F, spec: &QuadratureSpec) -> Result<Integral> {
    let spec = spec.clone().validated()?;
    let power = 1.0 / (1.0 - spec.singularity_exponent);
    let w_max = spec.truncation_bound;
    let mapped = |t: f64| -> f64 {
        if t < 1.0 {
            if power == 1.0 {
                f(t)
            } else {
                let w = t.powf(power);
                if w == 0.0 {
                    return 0.0;
                }
                f(w) * power * t.powf(power - 1.0)
            }
        } else {
            f(t)
        }
    };
    let mut knots = vec![0.0, 1.0, w_max];
    for &b in &spec.breakpoints {
        if b > 0.0 && b < w_max && b != 1.0 {
            knots.push(if b < 1.0 { b.powf(1.0 / power) } else { b });
        }
    }
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let body = adaptive(
        &mapped,
        &knots,
        spec.rel_tol,
        spec.abs_tol,
        spec.max_subdivisions,
    )?;
    let tail = 2.0 * f(w_max).abs();
    Ok(Integral {
        value: body.value,
        err_estimate: body.err_estimate + tail,
    })
}

/// ∫_a^b f(w) dw by global adaptive Gauss–Kronrod refinement.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    integrate_adaptive_with_error(f, a, b, rel_tol).map(|i| i.value)
}

pub fn integrate_adaptive_with_error<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
) -> Result<Integral> {
    if !a.is_finite() || !b.is_finite() {
        return domain("integrate_adaptive requires finite limits");
    }
    if !(rel_tol > 0.0) {
        return domain("rel_tol must be positive");
    }
    if a == b {
        return Ok(Integral {
            value: 0.0,
            err_estimate: 0.0,
        });
    }
    if a > b {
        return integrate_adaptive_with_error(f, b, a, rel_tol).map(|i| Integral {
            value: -i.value,
            err_estimate: i.err_estimate,
        });
    }
    adaptive(&f, &[a, b], rel_tol, 0.0, DEFAULT_MAX_SUBDIVISIONS)
}
