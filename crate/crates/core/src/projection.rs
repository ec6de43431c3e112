//! Deterministic functions of the projection `Z_t = f(t, X_t)`.
//!
//! Every integral here has the shape `∫₀^∞ (smooth) · w^{c} e^{-w} dw` and goes
//! through [`integrate_singular_exp`]; the exponent `c` at the origin and the
//! location of the scale change (`w = x / 2t`) are worked out per call.

use crate::error::{domain, Result};
use crate::quadrature::{default_truncation, integrate_singular_exp, QuadratureSpec};
use crate::specfun::{bessel_k0_scaled, beta_constant, gamma_fn, normal_sf, ModelParams, Regime};

/// The scale function `s`, which makes `s(X + Y)` a local martingale.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Scale {
    /// `w^{-a}` with `a = n/2 - 1 > 0`.
    Power(f64),
    /// `-log w`.
    Log,
}

impl Scale {
    /// k-th derivative of `s` at `q > 0`, for k ∈ {0, 1, 2}.
    fn deriv(self, order: u8, q: f64) -> f64 {
        match (self, order) {
            (Scale::Power(a), 0) => q.powf(-a),
            (Scale::Power(a), 1) => -a * q.powf(-a - 1.0),
            (Scale::Power(a), _) => a * (a + 1.0) * q.powf(-a - 2.0),
            (Scale::Log, 0) => -q.ln(),
            (Scale::Log, 1) => -1.0 / q,
            (Scale::Log, _) => 1.0 / (q * q),
        }
    }

    /// Power of `w` that `s^{(order)}(2tw)` contributes near `w = 0`.
    fn origin_exponent(self, order: u8) -> f64 {
        match self {
            Scale::Power(a) => -(a + order as f64),
            Scale::Log => -(order as f64),
        }
    }

    /// `1 - (y/(x+y))^a` (power case) or `log(1 + x/y)` (log case), without cancellation.
    fn psi_kernel(self, ratio: f64) -> f64 {
        match self {
            Scale::Power(a) => -(-a * ratio.ln_1p()).exp_m1(),
            Scale::Log => ratio.ln_1p(),
        }
    }
}

/// s(w): `w^{1-n/2}` for n > 2, `-log w` for n = 2.
pub fn s_fn(w: f64, params: &ModelParams) -> Result<f64> {
    if !(w > 0.0) {
        return domain(format!("s requires w > 0, got {w}"));
    }
    Ok(scale_of(params).deriv(0, w))
}

fn scale_of(params: &ModelParams) -> Scale {
    if params.is_log_scale() {
        Scale::Log
    } else {
        Scale::Power(params.scale_exponent())
    }
}

/// Model constants plus the quadrature settings shared by all evaluations.
#[derive(Debug, Clone)]
pub struct ProjectionContext {
    params: ModelParams,
    quad: QuadratureSpec,
    scale: Scale,
    /// Γ((n-m)/2)
    gamma_y: f64,
    /// Γ(m/2), for m > 0
    gamma_half_m: Option<f64>,
    /// Γ(n/2 - 1), for n > 2
    gamma_scale: Option<f64>,
    /// Γ(1 - m/2), for m < 2
    gamma_reflect: Option<f64>,
    beta: Option<f64>,
}

impl ProjectionContext {
    /// Context with relative tolerance 1e-12 on every integral.
    pub fn new(params: ModelParams) -> Self {
        Self::with_quadrature(
            params,
            QuadratureSpec::default().with_tolerances(1e-12, 0.0),
        )
    }

    pub fn with_quadrature(params: ModelParams, quad: QuadratureSpec) -> Self {
        let m = params.m();
        let positive = |k: f64| if k > 0.0 { gamma_fn(k).ok() } else { None };
        Self {
            params,
            quad,
            scale: scale_of(&params),
            gamma_y: gamma_fn(params.y_shape()).expect("(n - m)/2 > 0"),
            gamma_half_m: positive(0.5 * m),
            gamma_scale: if params.is_log_scale() {
                None
            } else {
                positive(params.scale_exponent())
            },
            gamma_reflect: positive(1.0 - 0.5 * m),
            beta: beta_constant(&params).ok(),
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn quadrature(&self) -> &QuadratureSpec {
        &self.quad
    }

    /// Cached (Γ((n-m)/2), Γ(m/2), Γ(n/2-1), Γ(1-m/2), β).
    pub fn constants(&self) -> (f64, Option<f64>, Option<f64>, Option<f64>, Option<f64>) {
        (
            self.gamma_y,
            self.gamma_half_m,
            self.gamma_scale,
            self.gamma_reflect,
            self.beta,
        )
    }

    fn require_reflecting_or_absorbed(&self, what: &str) -> Result<()> {
        if self.params.m() >= 2.0 {
            return domain(format!("{what} requires m < 2"));
        }
        Ok(())
    }

    fn require_reflecting(&self, what: &str) -> Result<()> {
        if self.params.regime() != Regime::Reflected {
            return domain(format!("{what} requires 0 < m < 2"));
        }
        Ok(())
    }

    fn require_power_reflecting(&self, what: &str) -> Result<()> {
        if self.params.is_log_scale() || self.params.regime() != Regime::Reflected {
            return domain(format!("{what} requires n > 2 and 0 < m < 2"));
        }
        Ok(())
    }

    fn spec(&self, alpha: f64, degree: f64, breakpoint: Option<f64>) -> QuadratureSpec {
        let mut spec = self.quad.clone();
        spec.singularity_exponent = alpha;
        spec.truncation_bound = spec.truncation_bound.max(default_truncation(degree));
        spec.breakpoints.extend(breakpoint.filter(|b| *b > 0.0));
        spec
    }

    /// (1/Γ(b)) ∫ s^{(order)}(x + 2tw) w^{b-1+extra} e^{-w} dw.
    fn kernel_integral(&self, order: u8, extra: f64, t: f64, x: f64) -> Result<f64> {
        let b = self.params.y_shape();
        let w_power = b - 1.0 + extra;
        let origin = if x > 0.0 {
            w_power
        } else {
            w_power + self.scale.origin_exponent(order)
        };
        if origin <= -1.0 {
            // Not integrable at the origin; the integrand is positive there.
            return Ok(f64::INFINITY * self.scale.deriv(order, 1.0).signum());
        }
        let spec = self.spec(
            (-origin).max(0.0),
            w_power,
            (x > 0.0).then(|| x / (2.0 * t)),
        );
        let scale = self.scale;
        let integrand = |w: f64| scale.deriv(order, x + 2.0 * t * w) * w.powf(w_power) * (-w).exp();
        Ok(integrate_singular_exp(integrand, &spec)?.value / self.gamma_y)
    }

    fn check_tx(t: f64, x: f64) -> Result<()> {
        if !(t > 0.0) || !t.is_finite() {
            return domain(format!("t must be > 0, got {t}"));
        }
        if !(x >= 0.0) || !x.is_finite() {
            return domain(format!("x must be ≥ 0, got {x}"));
        }
        Ok(())
    }

    /// f(t, x) = E[s(x + Y_t)], by quadrature. For m ≥ 2 and x = 0 this is +∞.
    pub fn f_proj(&self, t: f64, x: f64) -> Result<f64> {
        Self::check_tx(t, x)?;
        self.kernel_integral(0, 0.0, t, x)
    }

    /// f(t, 0): closed form `(2t)^{1-n/2} Γ(1-m/2)/Γ((n-m)/2)` for n > 2, quadrature for n = 2.
    pub fn f_at_zero(&self, t: f64) -> Result<f64> {
        Self::check_tx(t, 0.0)?;
        self.require_reflecting_or_absorbed("f_at_zero")?;
        match self.scale {
            Scale::Power(a) => {
                Ok((2.0 * t).powf(-a) * self.gamma_reflect.expect("m < 2") / self.gamma_y)
            }
            Scale::Log => self.kernel_integral(0, 0.0, t, 0.0),
        }
    }

    /// ∂f/∂x by differentiating under the integral; strictly negative.
    pub fn f_x_derivative(&self, t: f64, x: f64) -> Result<f64> {
        Self::check_tx(t, x)?;
        if x == 0.0 {
            return domain("f_x is singular at x = 0");
        }
        self.kernel_integral(1, 0.0, t, x)
    }

    /// ∂²f/∂x² under the integral.
    pub fn f_xx_derivative(&self, t: f64, x: f64) -> Result<f64> {
        Self::check_tx(t, x)?;
        if x == 0.0 {
            return domain("f_xx is singular at x = 0");
        }
        self.kernel_integral(2, 0.0, t, x)
    }

    /// ∂f/∂t = (1/Γ(b)) ∫ 2w s'(x + 2tw) w^{b-1} e^{-w} dw.
    pub fn f_t_derivative(&self, t: f64, x: f64) -> Result<f64> {
        Self::check_tx(t, x)?;
        if x == 0.0 {
            return domain("f_t is evaluated for x > 0");
        }
        Ok(2.0 * self.kernel_integral(1, 1.0, t, x)?)
    }

    /// f_t + m f_x + 2x f_xx, which vanishes for the exact f.
    pub fn pde_residual(&self, t: f64, x: f64) -> Result<f64> {
        let ft = self.f_t_derivative(t, x)?;
        let fx = self.f_x_derivative(t, x)?;
        let fxx = self.f_xx_derivative(t, x)?;
        Ok(ft + self.params.m() * fx + 2.0 * x * fxx)
    }

    /// ψ(x), computed after the substitution `y = x w`:
    /// `ψ(x) = x^{m/2-1}/Γ(b) ∫ k(x/y) y^{-m/2} e^{-y} dy`.
    pub fn psi_fn(&self, x: f64) -> Result<f64> {
        self.require_reflecting_or_absorbed("psi")?;
        if !(x > 0.0) || !x.is_finite() {
            return domain(format!("psi requires x > 0, got {x}"));
        }
        let half_m = 0.5 * self.params.m();
        let scale = self.scale;
        let spec = self.spec(half_m, 0.0, Some(x));
        let integrand = |y: f64| scale.psi_kernel(x / y) * y.powf(-half_m) * (-y).exp();
        let value = integrate_singular_exp(integrand, &spec)?.value;
        Ok(x.powf(half_m - 1.0) * value / self.gamma_y)
    }

    /// ψ(0+) in closed form.
    pub fn psi_at_zero(&self) -> Result<f64> {
        self.require_reflecting("psi_at_zero")?;
        let half_m = 0.5 * self.params.m();
        let base = self.gamma_half_m.expect("m > 0") / (1.0 - half_m);
        Ok(match self.scale {
            Scale::Power(_) => base / self.gamma_scale.expect("n > 2"),
            Scale::Log => base,
        })
    }

    /// p(x) = -x^{1-m/2} ψ'(x).
    ///
    /// Uses the iterated integral `∫∫ (sx+v)^{-n/2} ...  ds dv` with the inner
    /// `s`-integral done exactly:
    /// `p(x) = 1/Γ(b) ∫ v^{1-m/2} k(x/v)/x e^{-v} dv`.
    pub fn p_fn(&self, x: f64) -> Result<f64> {
        self.require_reflecting_or_absorbed("p")?;
        if !(x > 0.0) || !x.is_finite() {
            return domain(format!("p requires x > 0, got {x}"));
        }
        let half_m = 0.5 * self.params.m();
        let scale = self.scale;
        let spec = self.spec(half_m, 1.0 - half_m, Some(x));
        let integrand = |v: f64| v.powf(1.0 - half_m) * (scale.psi_kernel(x / v) / x) * (-v).exp();
        Ok(integrate_singular_exp(integrand, &spec)?.value / self.gamma_y)
    }

    /// ψ'(x) = -p(x) x^{m/2 - 1}.
    pub fn psi_derivative(&self, x: f64) -> Result<f64> {
        Ok(-self.p_fn(x)? * x.powf(0.5 * self.params.m() - 1.0))
    }

    /// p(0+) = (n/2 - 1) Γ(1 - m/2)/Γ((n-m)/2) for n > 2; Γ(1-m/2)/Γ(1-m/2) = 1 for n = 2
    /// is not attained (p grows logarithmically there), so only n > 2 is supported.
    pub fn p_at_zero(&self) -> Result<f64> {
        self.require_reflecting_or_absorbed("p_at_zero")?;
        match self.scale {
            Scale::Power(a) => Ok(a * self.gamma_reflect.expect("m < 2") / self.gamma_y),
            Scale::Log => domain("p(0+) is infinite for n = 2"),
        }
    }

    /// Right side of `f(t,x) = f(t,0) - x^{1-m/2} (2t)^{-(n-m)/2} ψ(x/2t)`.
    pub fn f_via_psi(&self, t: f64, x: f64) -> Result<f64> {
        Ok(self.f_at_zero(t)? - self.psi_correction(t, x)?)
    }

    /// x^{1-m/2} (2t)^{-(n-m)/2} ψ(x/2t), which tends to 0 as x ↓ 0.
    pub fn psi_correction(&self, t: f64, x: f64) -> Result<f64> {
        Self::check_tx(t, x)?;
        let half_m = 0.5 * self.params.m();
        let two_t = 2.0 * t;
        Ok(x.powf(1.0 - half_m) * two_t.powf(-self.params.y_shape()) * self.psi_fn(x / two_t)?)
    }

    /// f_x from the ψ decomposition:
    /// `-(1-m/2) x^{-m/2} (2t)^{-b} ψ(x/2t) - x^{1-m/2} (2t)^{-b} ψ'(x/2t) / 2t`.
    pub fn f_x_via_psi(&self, t: f64, x: f64) -> Result<f64> {
        Self::check_tx(t, x)?;
        let half_m = 0.5 * self.params.m();
        let two_t = 2.0 * t;
        let pre = two_t.powf(-self.params.y_shape());
        let y = x / two_t;
        Ok(-(1.0 - half_m) * x.powf(-half_m) * pre * self.psi_fn(y)?
            - x.powf(1.0 - half_m) * pre * self.psi_derivative(y)? / two_t)
    }

    /// Density of the finite-variation part: against dΛ_u for 0 < m < 2,
    /// against 1{ρ ≤ u} du for m = 0.
    pub fn fv_density(&self, u: f64) -> Result<f64> {
        if !(u > 0.0) {
            return domain(format!("fv_density requires u > 0, got {u}"));
        }
        let half_m = 0.5 * self.params.m();
        match (self.params.regime(), self.scale) {
            (Regime::Reflected, Scale::Power(_)) => Ok(self.gamma_half_m.expect("m > 0")
                / self.gamma_scale.expect("n > 2")
                * (2.0 * u).powf(-self.params.y_shape())),
            (Regime::Reflected, Scale::Log) => {
                Ok(self.gamma_half_m.expect("m > 0") * (2.0 * u).powf(half_m - 1.0))
            }
            (Regime::Absorbed, Scale::Power(_)) => {
                Ok(2.0 / self.gamma_scale.expect("n > 2") * (2.0 * u).powf(-0.5 * self.params.n()))
            }
            (Regime::Absorbed, Scale::Log) => Ok(1.0 / u),
            (Regime::Positive, _) => domain("no finite-variation term for m ≥ 2"),
        }
    }

    /// ∫_{u0}^{u1} fv_density(u) du for m = 0, in closed form.
    pub fn fv_integral_absorbed(&self, u0: f64, u1: f64) -> Result<f64> {
        if self.params.regime() != Regime::Absorbed {
            return domain("fv_integral_absorbed requires m = 0");
        }
        if !(u0 > 0.0) || u1 < u0 {
            return domain("requires 0 < u0 ≤ u1");
        }
        match self.scale {
            Scale::Power(a) => {
                // ∫ 2/Γ(a) (2u)^{-(a+1)} du = (2u)^{-a} / (Γ(a) (-a))
                let anti = |u: f64| -(2.0 * u).powf(-a) / (a * self.gamma_scale.expect("n > 2"));
                Ok(anti(u1) - anti(u0))
            }
            Scale::Log => Ok((u1 / u0).ln()),
        }
    }

    /// g(h, z; x) = z^{n/2-2}/Γ(n/2-1) exp(-z - Γ(m/2)/Γ(1-m/2) (z/2x)^{1-m/2} h).
    pub fn g_fn(&self, h: f64, z: f64, x: f64) -> Result<f64> {
        self.require_power_reflecting("g")?;
        if !(h >= 0.0) || !(z > 0.0) || !(x > 0.0) {
            return domain("g requires h ≥ 0, z > 0, x > 0");
        }
        Ok(self.g_unchecked(h, z, x))
    }

    fn laplace_coefficient(&self) -> f64 {
        self.gamma_half_m.expect("m > 0") / self.gamma_reflect.expect("m < 2")
    }

    fn g_unchecked(&self, h: f64, z: f64, x: f64) -> f64 {
        let a = self.params.scale_exponent();
        let rate = self.laplace_coefficient() * (z / (2.0 * x)).powf(1.0 - 0.5 * self.params.m());
        z.powf(a - 1.0) * (-z - rate * h).exp() / self.gamma_scale.expect("n > 2")
    }

    /// ∂g/∂h, which is ≤ 0 and increasing in h.
    pub fn g_h_derivative(&self, h: f64, z: f64, x: f64) -> Result<f64> {
        let g = self.g_fn(h, z, x)?;
        Ok(-self.laplace_coefficient() * (z / (2.0 * x)).powf(1.0 - 0.5 * self.params.m()) * g)
    }

    /// ∫₀^∞ g(h, z; x) dz.
    pub fn g_mass(&self, h: f64, x: f64) -> Result<f64> {
        self.require_power_reflecting("g")?;
        if !(h >= 0.0) || !(x > 0.0) {
            return domain("g_mass requires h ≥ 0, x > 0");
        }
        let a = self.params.scale_exponent();
        let spec = self.spec((1.0 - a).max(0.0), a - 1.0, None);
        Ok(integrate_singular_exp(|z| self.g_unchecked(h, z, x), &spec)?.value)
    }

    /// -∫₀^∞ ∂g/∂h(0+, z; x) dz by quadrature.
    pub fn compensator_rate_quadrature(&self, x: f64) -> Result<f64> {
        self.require_power_reflecting("compensator rate")?;
        if !(x > 0.0) {
            return domain("compensator rate requires a > 0");
        }
        let b = self.params.y_shape();
        let spec = self.spec((1.0 - b).max(0.0), b - 1.0, None);
        let value = integrate_singular_exp(
            |z| -self.g_h_derivative(0.0, z, x).unwrap_or(f64::NAN),
            &spec,
        )?
        .value;
        Ok(value)
    }

    /// β (1/2a)^{1-m/2}.
    pub fn compensator_rate(&self, a: f64) -> Result<f64> {
        self.require_power_reflecting("compensator rate")?;
        if !(a > 0.0) {
            return domain("compensator rate requires a > 0");
        }
        Ok(self.beta.expect("n > 2, 0 < m < 2") * (0.5 / a).powf(1.0 - 0.5 * self.params.m()))
    }
}

/// f for (n, m) = (3, 1): √(2π/t) e^{x/2t} (1 - Φ(√(x/t))).
pub fn closed_form_n3m1(t: f64, x: f64) -> Result<f64> {
    ProjectionContext::check_tx(t, x)?;
    let z = (x / t).sqrt();
    if z > 30.0 {
        // Mills ratio expansion once e^{z²/2} would overflow
        let z2 = 1.0 / (z * z);
        let mills = (1.0 - z2 * (1.0 - 3.0 * z2 * (1.0 - 5.0 * z2 * (1.0 - 7.0 * z2)))) / z;
        return Ok(mills / t.sqrt());
    }
    Ok((2.0 * std::f64::consts::PI / t).sqrt() * (x / (2.0 * t)).exp() * normal_sf(z))
}

/// f for (n, m) = (3, 2): (2πt)^{-1/2} e^{x/4t} K0(x/4t). Infinite at x = 0.
pub fn closed_form_n3m2(t: f64, x: f64) -> Result<f64> {
    ProjectionContext::check_tx(t, x)?;
    if x == 0.0 {
        let ctx = ProjectionContext::new(ModelParams::new(3.0, 2.0)?);
        return ctx.f_proj(t, 0.0);
    }
    Ok(bessel_k0_scaled(x / (4.0 * t))? / (2.0 * std::f64::consts::PI * t).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::normal_cdf;
    use std::f64::consts::PI;

    fn ctx(n: f64, m: f64) -> ProjectionContext {
        ProjectionContext::new(ModelParams::new(n, m).unwrap())
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn scale_function() {
        let p3 = ModelParams::new(3.0, 1.0).unwrap();
        let p2 = ModelParams::new(2.0, 1.0).unwrap();
        let p4 = ModelParams::new(4.0, 1.0).unwrap();
        assert_eq!(s_fn(1.0, &p3).unwrap(), 1.0);
        assert_eq!(s_fn(1.0, &p2).unwrap(), 0.0);
        assert_eq!(s_fn(4.0, &p4).unwrap(), 0.25);
        assert!(s_fn(0.0, &p3).is_err());
        assert!(s_fn(-1.0, &p2).is_err());
    }

    #[test]
    fn cached_constants_match_fresh_gamma() {
        for (n, m) in [(3.0, 1.0), (4.0, 0.0), (2.0, 0.5), (5.0, 2.5)] {
            let c = ctx(n, m);
            let (gy, gm, gs, gr, beta) = c.constants();
            assert!((gy - gamma_fn((n - m) / 2.0).unwrap()).abs() <= 1e-14 * gy);
            if m > 0.0 {
                assert!((gm.unwrap() - gamma_fn(m / 2.0).unwrap()).abs() <= 1e-14 * gm.unwrap());
            }
            if n > 2.0 {
                assert!(
                    (gs.unwrap() - gamma_fn(n / 2.0 - 1.0).unwrap()).abs() <= 1e-14 * gs.unwrap()
                );
            }
            if m < 2.0 {
                assert!(
                    (gr.unwrap() - gamma_fn(1.0 - m / 2.0).unwrap()).abs() <= 1e-14 * gr.unwrap()
                );
            }
            assert_eq!(beta.is_some(), n > 2.0 && m > 0.0 && m < 2.0);
        }
    }

    #[test]
    fn f_proj_examples() {
        let oracle = (2.0 * PI).sqrt() * 0.5f64.exp() * (1.0 - normal_cdf(1.0));
        let v = ctx(3.0, 1.0).f_proj(1.0, 1.0).unwrap();
        assert!((v - 0.65568).abs() < 1e-4);
        assert!(rel(v, oracle) < 1e-10);
        assert!((ctx(4.0, 0.0).f_proj(0.5, 0.0).unwrap() - 1.0).abs() < 1e-10);
        let far = ctx(4.0, 1.0).f_proj(1.0, 1e6).unwrap();
        assert!(far > 0.0 && far < 2e-6);
        assert!(ctx(4.0, 1.0).f_proj(0.0, 1.0).is_err());
        assert!(ctx(4.0, 1.0).f_proj(-1.0, 1.0).is_err());
        assert!(ctx(4.0, 2.5).f_proj(1.0, 0.0).unwrap().is_infinite());
    }

    #[test]
    fn f_positive_and_decreasing_in_x() {
        for (n, m) in [(3.0, 1.0), (4.0, 0.0), (5.0, 2.5), (2.0, 0.5)] {
            let c = ctx(n, m);
            for &t in &[0.1, 1.0, 3.0] {
                let mut prev = f64::INFINITY;
                for &x in &[1e-3, 0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 20.0] {
                    let v = c.f_proj(t, x).unwrap();
                    if n > 2.0 {
                        assert!(v > 0.0);
                    }
                    assert!(v < prev, "(n, m) = ({n}, {m}), t = {t}, x = {x}");
                    prev = v;
                }
                assert!(c.f_proj(t, 0.0).unwrap() > c.f_proj(t, 1e-3).unwrap());
            }
        }
    }

    #[test]
    fn f_at_zero_examples() {
        assert!((ctx(4.0, 0.0).f_at_zero(0.5).unwrap() - 1.0).abs() < 1e-14);
        assert!(rel(ctx(3.0, 1.0).f_at_zero(1.0).unwrap(), (PI / 2.0).sqrt()) < 1e-14);
        let c = ctx(2.0, 1.0);
        assert!((c.f_at_zero(1.0).unwrap() - c.f_proj(1.0, 0.0).unwrap()).abs() < 1e-8);
        // closed form f(t,0) agrees with quadrature of the defining integral
        for (n, m) in [(3.0, 1.0), (4.0, 0.0), (4.0, 1.5), (6.0, 0.7)] {
            let c = ctx(n, m);
            assert!(rel(c.f_at_zero(0.7).unwrap(), c.f_proj(0.7, 0.0).unwrap()) < 1e-10);
        }
        // n = 2: -log(2t) - digamma(1 - m/2)
        let expect = -(2.0f64).ln() - crate::specfun::digamma(0.5).unwrap();
        assert!((c.f_at_zero(1.0).unwrap() - expect).abs() < 1e-10);
        assert!(ctx(4.0, 2.5).f_at_zero(1.0).is_err());
    }

    #[test]
    fn psi_examples() {
        let c = ctx(4.0, 1.0);
        let two_sqrt_pi = 2.0 * PI.sqrt();
        // ψ(0) - ψ(x) ~ 4 x^{1/2} here, so the limit is only visible for much smaller x
        assert!(rel(c.psi_fn(1e-8).unwrap(), 3.544_507_737_257_442_6) < 1e-10);
        assert!((c.psi_fn(1e-12).unwrap() - two_sqrt_pi).abs() < 1e-4);
        let psi1 = c.psi_fn(1.0).unwrap();
        assert!(psi1 > 0.0 && psi1 < two_sqrt_pi);
        assert!(c.psi_fn(10.0).unwrap() < psi1);
        assert!(ctx(4.0, 2.5).psi_fn(1.0).is_err());
        assert!(c.psi_fn(0.0).is_err());
    }

    #[test]
    fn psi_matches_original_integral() {
        // direct w-form ∫ (1 - (w/(1+w))^a) w^{-m/2} e^{-xw} dw at moderate x
        let c = ctx(4.0, 1.0);
        for &x in &[0.5f64, 1.0, 3.0] {
            let direct = crate::quadrature::integrate_adaptive(
                |u: f64| {
                    // w = u², dw = 2u du removes w^{-1/2}
                    let w = u * u;
                    2.0 * (1.0 - w / (1.0 + w)) * (-x * w).exp()
                },
                0.0,
                (80.0 / x).sqrt(),
                1e-13,
            )
            .unwrap()
                / gamma_fn(1.5).unwrap();
            assert!(rel(c.psi_fn(x).unwrap(), direct) < 1e-10, "x = {x}");
        }
    }

    #[test]
    fn psi_at_zero_examples() {
        let two_sqrt_pi = 3.544_907_701_811_032;
        assert!(rel(ctx(4.0, 1.0).psi_at_zero().unwrap(), two_sqrt_pi) < 1e-14);
        assert!(rel(ctx(2.0, 1.0).psi_at_zero().unwrap(), two_sqrt_pi) < 1e-14);
        assert!(rel(ctx(3.0, 1.0).psi_at_zero().unwrap(), 2.0) < 1e-14);
        assert!(ctx(4.0, 0.0).psi_at_zero().is_err());
        assert!(ctx(4.0, 2.0).psi_at_zero().is_err());
    }

    #[test]
    fn p_examples() {
        let c = ctx(4.0, 1.0);
        let p0 = c.p_fn(1e-8).unwrap();
        assert!((p0 - 2.0).abs() < 1e-3);
        assert!(rel(c.p_at_zero().unwrap(), 2.0) < 1e-14);
        let p1 = c.p_fn(1.0).unwrap();
        assert!(p1 > 0.0 && p1 < p0);
        // finite-difference oracle on ψ
        let h = 1e-4;
        let fd = (c.psi_fn(1.0 + h).unwrap() - c.psi_fn(1.0 - h).unwrap()) / (2.0 * h);
        assert!((p1 + fd).abs() < 1e-5);
    }

    #[test]
    fn p_log_scale_matches_finite_difference() {
        let c = ctx(2.0, 0.5);
        for &x in &[0.3, 1.0, 4.0] {
            let h = 1e-4 * x;
            let fd = (c.psi_fn(x + h).unwrap() - c.psi_fn(x - h).unwrap()) / (2.0 * h);
            let p_fd = -x.powf(1.0 - 0.25) * fd;
            assert!((c.p_fn(x).unwrap() - p_fd).abs() < 1e-6, "x = {x}");
        }
    }

    #[test]
    fn f_x_examples() {
        let c = ctx(3.0, 1.0);
        let h = 1e-4;
        let fd = (c.f_proj(1.0, 1.0 + h).unwrap() - c.f_proj(1.0, 1.0 - h).unwrap()) / (2.0 * h);
        let fx = c.f_x_derivative(1.0, 1.0).unwrap();
        assert!((fx - fd).abs() < 1e-6);
        assert!(fx < 0.0);
        let c4 = ctx(4.0, 1.0);
        let direct = c4.f_x_derivative(1.0, 1.0).unwrap();
        assert!((direct - c4.f_x_via_psi(1.0, 1.0).unwrap()).abs() < 1e-6);
        assert!(c4.f_x_derivative(1.0, 0.0).is_err());
    }

    #[test]
    fn f_x_negative_on_grid() {
        for (n, m) in [(3.0, 1.0), (2.0, 0.5), (5.0, 2.5), (4.0, 0.0)] {
            let c = ctx(n, m);
            for &t in &[0.1, 1.0] {
                for &x in &[0.01, 1.0, 10.0] {
                    assert!(c.f_x_derivative(t, x).unwrap() < 0.0);
                }
            }
        }
    }

    #[test]
    fn pde_examples() {
        assert!(ctx(3.0, 1.0).pde_residual(1.0, 1.0).unwrap().abs() < 1e-6);
        assert!(ctx(4.0, 2.5).pde_residual(0.2, 3.0).unwrap().abs() < 1e-6);
        assert!(ctx(2.0, 0.5).pde_residual(1.0, 1.0).unwrap().abs() < 1e-6);
    }

    #[test]
    fn second_derivatives_match_finite_differences() {
        let c = ctx(5.0, 2.5);
        let (t, x) = (0.5, 1.0);
        let h = 1e-4;
        let fxx_fd =
            (c.f_x_derivative(t, x + h).unwrap() - c.f_x_derivative(t, x - h).unwrap()) / (2.0 * h);
        assert!(rel(c.f_xx_derivative(t, x).unwrap(), fxx_fd) < 1e-7);
        let ft_fd = (c.f_proj(t + h, x).unwrap() - c.f_proj(t - h, x).unwrap()) / (2.0 * h);
        assert!(rel(c.f_t_derivative(t, x).unwrap(), ft_fd) < 1e-7);
    }

    #[test]
    fn closed_forms_examples() {
        let v = closed_form_n3m1(1.0, 0.0).unwrap();
        assert!(rel(v, 1.253_314_137_315_500_3) < 1e-14);
        assert!(rel(v, ctx(3.0, 1.0).f_at_zero(1.0).unwrap()) < 1e-14);
        assert!((closed_form_n3m1(1.0, 1.0).unwrap() - 0.65568).abs() < 1e-5);
        let q = ctx(3.0, 2.0).f_proj(1.0, 1.0).unwrap();
        assert!(rel(closed_form_n3m2(1.0, 1.0).unwrap(), q) < 1e-8);
        assert!(closed_form_n3m2(1.0, 0.0).unwrap().is_infinite());
        // Mills-ratio branch agrees with the direct branch near the switch
        let a = closed_form_n3m1(1.0, 899.0).unwrap();
        let b = (2.0 * PI).sqrt() * (899.0f64 / 2.0).exp() * normal_sf(899.0f64.sqrt());
        assert!(rel(a, b) < 1e-9);
    }

    #[test]
    fn fv_density_examples() {
        assert!(rel(ctx(4.0, 1.0).fv_density(0.5).unwrap(), PI.sqrt()) < 1e-14);
        assert!(rel(ctx(4.0, 0.0).fv_density(0.5).unwrap(), 2.0) < 1e-14);
        assert!(rel(ctx(2.0, 0.0).fv_density(0.5).unwrap(), 2.0) < 1e-14);
        assert!(ctx(4.0, 2.5).fv_density(0.5).is_err());
        assert!(ctx(4.0, 1.0).fv_density(0.0).is_err());
    }

    #[test]
    fn fv_integral_absorbed_matches_quadrature() {
        for n in [2.0, 3.0, 4.0, 6.5] {
            let c = ctx(n, 0.0);
            let q = crate::quadrature::integrate_adaptive(
                |u| c.fv_density(u).unwrap(),
                0.2,
                1.3,
                1e-13,
            )
            .unwrap();
            assert!(rel(c.fv_integral_absorbed(0.2, 1.3).unwrap(), q) < 1e-11);
        }
    }

    #[test]
    fn g_examples() {
        let c = ctx(4.0, 1.0);
        for &x in &[0.3, 1.0, 7.0] {
            assert!((c.g_mass(0.0, x).unwrap() - 1.0).abs() < 1e-10);
        }
        for &z in &[0.1, 1.0, 5.0] {
            assert!(c.g_fn(0.7, z, 1.0).unwrap() <= c.g_fn(0.0, z, 1.0).unwrap());
        }
        let expect = gamma_fn(1.5).unwrap() / 2f64.sqrt();
        assert!(rel(c.compensator_rate_quadrature(1.0).unwrap(), expect) < 1e-10);
        assert!(rel(expect, 0.626_657_068_657_750_1) < 1e-14);
        assert!(ctx(4.0, 0.0).g_fn(0.0, 1.0, 1.0).is_err());
        assert!(ctx(2.0, 1.0).g_fn(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn g_h_derivative_bounds() {
        // 0 ≥ ∂_h g(h) ≥ ∂_h g(0+)
        let c = ctx(3.0, 0.5);
        for &z in &[0.05, 0.5, 2.0, 9.0] {
            let at0 = c.g_h_derivative(0.0, z, 0.8).unwrap();
            for &h in &[0.01, 0.3, 2.0] {
                let d = c.g_h_derivative(h, z, 0.8).unwrap();
                assert!(d <= 0.0 && d >= at0);
            }
        }
    }

    #[test]
    fn compensator_rate_examples() {
        let c = ctx(4.0, 1.0);
        assert!(rel(c.compensator_rate(0.5).unwrap(), 0.886_226_925_452_758) < 1e-14);
        assert!(c.compensator_rate(1e8).unwrap() < 1e-3);
        assert!(ctx(3.0, 0.5).compensator_rate(1e8).unwrap() < 1e-3);
        let q = c.compensator_rate_quadrature(1.0).unwrap();
        assert!((q - c.compensator_rate(1.0).unwrap()).abs() < 1e-8);
        assert!(c.compensator_rate(0.0).is_err());
    }
}
