//! Optional projections of scaled squared Bessel processes.
//!
//! Let `X ~ BESQ^m(1)` and `Y ~ BESQ^{n-m}(0)` be independent, so that `X + Y`
//! is a squared Bessel process of dimension `n`. This crate evaluates the
//! projection `Z_t = f(t, X_t)` of `s(X + Y)` onto the filtration of `X`, its
//! derivatives and decomposition pieces ([`projection`]), simulates `X` exactly
//! together with its Markov local time at zero ([`simulate`]), and checks the
//! resulting identities by Monte Carlo against deterministic quadrature
//! ([`verify`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod projection;
pub mod quadrature;
pub mod simulate;
pub mod specfun;
pub mod verify;

pub use error::{Error, Result};
pub use projection::{closed_form_n3m1, closed_form_n3m2, s_fn, ProjectionContext};
pub use quadrature::{integrate_adaptive, integrate_singular_exp, Integral, QuadratureSpec};
pub use specfun::{bessel_k0, beta_constant, gamma_fn, normal_cdf, ModelParams, Regime};
