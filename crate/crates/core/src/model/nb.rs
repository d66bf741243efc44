//! Negative binomial (mean/dispersion form) with mean `λ` and variance
//! `λ + λ²/φ`.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::stats::log_add_exp;

/// `ln P(Y = y)` for `Y ~ NB(λ, φ)`.
pub fn nb_logpmf(y: u64, lambda: f64, phi: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!(
            "NB mean must be positive, got {lambda}"
        )));
    }
    if !(phi > 0.0 && phi.is_finite()) {
        return Err(Error::invalid(format!(
            "NB dispersion must be positive, got {phi}"
        )));
    }
    Ok(nb_logpmf_log_mean(y as f64, lambda.ln(), phi))
}

/// Same density parameterized by `η = ln λ`. No argument checks.
#[inline]
pub fn nb_logpmf_log_mean(y: f64, eta: f64, phi: f64) -> f64 {
    let log_phi = phi.ln();
    let log_total = log_add_exp(log_phi, eta);
    ln_gamma(y + phi) - ln_gamma(phi) - ln_gamma(y + 1.0)
        + phi * (log_phi - log_total)
        + y * (eta - log_total)
}

/// Log density together with its partial derivatives in `η` and `φ`.
#[inline]
pub(crate) fn nb_logpmf_with_grad(y: f64, eta: f64, phi: f64) -> (f64, f64, f64) {
    let log_phi = phi.ln();
    let log_total = log_add_exp(log_phi, eta);
    let value = ln_gamma(y + phi) - ln_gamma(phi) - ln_gamma(y + 1.0)
        + phi * (log_phi - log_total)
        + y * (eta - log_total);
    // λ / (φ + λ), computed in log space to survive extreme η.
    let share = (eta - log_total).exp();
    let d_eta = y - (y + phi) * share;
    let d_phi =
        digamma(y + phi) - digamma(phi) + (log_phi - log_total) + share - y * (-log_total).exp();
    (value, d_eta, d_phi)
}

/// `ln` of a `Gamma(shape, 1)` variate, accurate for very small shapes where
/// the variate itself underflows.
pub(crate) fn sample_log_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    if shape >= 1.0 {
        let g: f64 = Gamma::new(shape, 1.0).expect("valid gamma").sample(rng);
        return g.ln();
    }
    // X = Y * U^(1/shape) with Y ~ Gamma(shape + 1).
    let y: f64 = Gamma::new(shape + 1.0, 1.0)
        .expect("valid gamma")
        .sample(rng);
    let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    y.ln() + u.ln() / shape
}

/// Poisson variate that degrades to a rounded normal approximation for
/// rates beyond what the exact sampler accepts.
pub(crate) fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    if rate.is_nan() || rate <= 0.0 {
        return 0.0;
    }
    if !rate.is_finite() {
        return f64::INFINITY;
    }
    if rate < 1e12 {
        Poisson::new(rate).expect("valid poisson").sample(rng)
    } else {
        let z: f64 = StandardNormal.sample(rng);
        (rate + rate.sqrt() * z).round().max(0.0)
    }
}

/// One NB draw through the gamma-Poisson mixture, given `η = ln λ`.
pub fn sample_nb<R: Rng + ?Sized>(rng: &mut R, eta: f64, phi: f64) -> f64 {
    let log_rate = sample_log_gamma(rng, phi) + eta - phi.ln();
    sample_poisson(rng, log_rate.min(709.0).exp())
}
