//! The Betoidal distribution: the law of `X = Phi(Z)` with `Z ~ N(0, sigma^2)`,
//! and its left-truncated variant.
//!
//! `sigma = 1` gives the uniform distribution on `(0, 1)`; larger `sigma`
//! pushes mass towards both endpoints (U shape), smaller `sigma` concentrates
//! it around one half (bell shape).

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{domain, Error, Result};
use crate::specfun::{norm_cdf, norm_quantile, owens_t_h0};

/// Scale of the latent normal variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetoidalParam {
    sigma: f64,
}

impl BetoidalParam {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(domain("BetoidalParam::new", sigma, "sigma > 0"));
        }
        Ok(Self { sigma })
    }

    #[inline]
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Betoidal scale plus the lower truncation point `x_star`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LTBetoidalParam {
    base: BetoidalParam,
    x_star: f64,
    /// `1 - F(x_star)`, cached.
    survival: f64,
}

impl LTBetoidalParam {
    pub fn new(sigma: f64, x_star: f64) -> Result<Self> {
        let base = BetoidalParam::new(sigma)?;
        if !(0.0..1.0).contains(&x_star) {
            return Err(domain("LTBetoidalParam::new", x_star, "[0, 1)"));
        }
        let survival = sf(x_star, &base);
        if !(survival >= f64::MIN_POSITIVE) {
            return Err(Error::SurvivalUnderflow { sigma });
        }
        Ok(Self {
            base,
            x_star,
            survival,
        })
    }

    #[inline]
    pub fn sigma(&self) -> f64 {
        self.base.sigma
    }

    #[inline]
    pub fn x_star(&self) -> f64 {
        self.x_star
    }

    /// Untruncated mass above the truncation point.
    #[inline]
    pub fn survival(&self) -> f64 {
        self.survival
    }

    #[inline]
    pub fn base(&self) -> BetoidalParam {
        self.base
    }
}

fn check_interior(func: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(domain(func, x, "(0, 1)"))
    }
}

/// Density `phi(z / sigma) / (sigma phi(z))` with `z = Phi^-1(x)`.
pub fn pdf(x: f64, p: &BetoidalParam) -> Result<f64> {
    check_interior("betoidal::pdf", x)?;
    let z = norm_quantile(x)?;
    let s = p.sigma;
    Ok((0.5 * z * z * (1.0 - 1.0 / (s * s))).exp() / s)
}

/// CDF; defined by continuity as 0 at `x = 0` and 1 at `x = 1`.
pub fn cdf(x: f64, p: &BetoidalParam) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(domain("betoidal::cdf", x, "[0, 1]"));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    Ok(norm_cdf(norm_quantile(x)? / p.sigma))
}

/// Upper tail `1 - F(x)` without cancellation.
fn sf(x: f64, p: &BetoidalParam) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x >= 1.0 {
        return 0.0;
    }
    // interior, so the quantile exists
    let z = norm_quantile(x).unwrap_or(0.0);
    norm_cdf(-z / p.sigma)
}

/// Quantile function `Phi(sigma Phi^-1(q))`.
pub fn quantile(q: f64, p: &BetoidalParam) -> Result<f64> {
    check_interior("betoidal::quantile", q)?;
    Ok(norm_cdf(p.sigma * norm_quantile(q)?))
}

/// `atan(sqrt(1 + 2 sigma^2)) / pi - 1/4`.
///
/// Uses `atan(s) - pi/4 = atan((s - 1)/(s + 1))` so that small `sigma` does
/// not cancel.
pub fn variance(p: &BetoidalParam) -> f64 {
    let s2 = 2.0 * p.sigma * p.sigma;
    let s = (1.0 + s2).sqrt();
    let num = s2 / (s + 1.0);
    (num / (s + 1.0)).atan() / PI
}

/// Variance written through Owen's T, `(1 - 8 T(0, 1/sqrt(2 sigma^2 + 1))) / 4`.
pub fn variance_owens_t(p: &BetoidalParam) -> f64 {
    let a = 1.0 / (2.0 * p.sigma * p.sigma + 1.0).sqrt();
    (1.0 - 8.0 * owens_t_h0(a)) / 4.0
}

/// Shape `a` of the symmetric `Beta(a, a)` with the same variance.
pub fn beta_shape_equiv(p: &BetoidalParam) -> f64 {
    (1.0 / (4.0 * variance(p)) - 1.0) / 2.0
}

/// `n` draws of `Phi(sigma * N(0, 1))`.
pub fn sample<R: Rng + ?Sized>(p: &BetoidalParam, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            norm_cdf(p.sigma * z)
        })
        .collect()
}

fn check_lt_support(func: &'static str, x: f64, p: &LTBetoidalParam) -> Result<()> {
    if x >= p.x_star && x <= 1.0 {
        Ok(())
    } else {
        Err(domain(func, x, "[x_star, 1]"))
    }
}

pub fn lt_pdf(x: f64, p: &LTBetoidalParam) -> Result<f64> {
    check_lt_support("betoidal::lt_pdf", x, p)?;
    Ok(pdf(x, &p.base)? / p.survival)
}

pub fn lt_cdf(x: f64, p: &LTBetoidalParam) -> Result<f64> {
    check_lt_support("betoidal::lt_cdf", x, p)?;
    if x == p.x_star {
        return Ok(0.0);
    }
    Ok((1.0 - sf(x, &p.base) / p.survival).clamp(0.0, 1.0))
}

/// `quantile(F(x_star) + q (1 - F(x_star)))`, solved on the upper tail.
pub fn lt_quantile(q: f64, p: &LTBetoidalParam) -> Result<f64> {
    check_interior("betoidal::lt_quantile", q)?;
    let tail = (1.0 - q) * p.survival;
    let z = norm_quantile(tail)?;
    Ok(norm_cdf(-p.base.sigma * z).max(p.x_star))
}

/// Inverse-CDF sampling from the truncated distribution.
pub fn lt_sample<R: Rng + ?Sized>(p: &LTBetoidalParam, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u = open_unit(rng);
            lt_quantile(u, p).expect("open-interval uniform is in the quantile domain")
        })
        .collect()
}

/// Uniform draw on the open interval `(0, 1)`.
pub(crate) fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let bits = rng.random::<u64>() >> 11;
    (bits as f64 + 0.5) / (1u64 << 53) as f64
}

/// ML estimate `sqrt(mean Phi^-1(x_i)^2)` and its asymptotic variance
/// `sigma_hat^2 / (2n)` from the Fisher information `2n / sigma^2`.
pub fn mle_sigma_iid(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.is_empty() {
        return Err(Error::Degenerate("empty sample".into()));
    }
    let mut ss = 0.0;
    for &x in xs {
        check_interior("betoidal::mle_sigma_iid", x)?;
        let z = norm_quantile(x)?;
        ss += z * z;
    }
    if ss == 0.0 {
        return Err(Error::Degenerate(
            "all observations equal 0.5; the estimate is 0".into(),
        ));
    }
    let n = xs.len() as f64;
    let sigma_hat = (ss / n).sqrt();
    Ok((sigma_hat, sigma_hat * sigma_hat / (2.0 * n)))
}

/// First and second derivatives in `sigma` of the i.i.d. log-likelihood.
pub fn iid_loglik_derivatives(sigma: f64, xs: &[f64]) -> Result<(f64, f64)> {
    let mut ss = 0.0;
    for &x in xs {
        check_interior("betoidal::iid_loglik_derivatives", x)?;
        let z = norm_quantile(x)?;
        ss += z * z;
    }
    let n = xs.len() as f64;
    let s2 = sigma * sigma;
    Ok((-n / sigma + ss / (s2 * sigma), n / s2 - 3.0 * ss / (s2 * s2)))
}
