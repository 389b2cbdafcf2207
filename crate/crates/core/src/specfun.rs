//! Special functions: error function and its inverse, the standard normal
//! distribution, Owen's T at `h = 0` and the chi-square upper tail.
//!
//! `erf`/`erfc` are the libm (musl/fdlibm) kernels, accurate to about one ulp.
//! Everything else is implemented here.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use crate::error::{domain, Result};

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Error function.
#[inline]
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

/// Complementary error function `1 - erf(x)`, accurate in the upper tail.
#[inline]
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Scaled complementary error function `exp(x^2) * erfc(x)` for `x >= 0`.
///
/// Stays finite and accurate where `erfc` itself underflows.
pub fn erfcx(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < 5.0 {
        return (x * x).exp() * erfc(x);
    }
    // Continued fraction erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    // evaluated from the tail.
    let mut tail = x;
    for n in (1..=60).rev() {
        tail = x + (n as f64 * 0.5) / tail;
    }
    1.0 / (tail * PI.sqrt())
}

/// Initial approximation of erf^-1 (single-precision minimax polynomial in
/// `w = -ln(1 - x^2)`), later polished by Newton iterations.
fn erf_inv_seed(x: f64) -> f64 {
    let mut w = -((1.0 - x) * (1.0 + x)).ln();
    let p = if w < 5.0 {
        w -= 2.5;
        let mut p = 2.810_226_36e-08;
        p = 3.432_739_39e-07 + p * w;
        p = -3.523_387_7e-06 + p * w;
        p = -4.391_506_54e-06 + p * w;
        p = 0.000_218_580_87 + p * w;
        p = -0.001_253_725_03 + p * w;
        p = -0.004_177_681_64 + p * w;
        p = 0.246_640_727 + p * w;
        1.501_409_41 + p * w
    } else {
        w = w.sqrt() - 3.0;
        let mut p = -0.000_200_214_257;
        p = 0.000_100_950_558 + p * w;
        p = 0.001_349_343_22 + p * w;
        p = -0.003_673_428_44 + p * w;
        p = 0.005_739_507_73 + p * w;
        p = -0.007_622_461_3 + p * w;
        p = 0.009_438_870_47 + p * w;
        p = 1.001_674_06 + p * w;
        2.832_976_82 + p * w
    };
    p * x
}

/// Inverse of the complementary error function for `c` in `(0, 1]`.
///
/// Newton iterations run on `ln erfc(y) = ln c`, which is nearly linear in
/// the far tail, so the result stays accurate for `c` down to the smallest
/// subnormal.
fn erfc_inv_upper(c: f64) -> f64 {
    debug_assert!(c > 0.0 && c <= 1.0);
    let mut y = if c > 1e-15 {
        erf_inv_seed(1.0 - c).max(0.0)
    } else {
        (-c.ln()).sqrt()
    };
    if c > 0.5 {
        // Central region: the seed is already accurate, plain Newton on erfc.
        for _ in 0..2 {
            let f = erfc(y) - c;
            y += f / (FRAC_2_SQRT_PI * (-y * y).exp());
        }
        return y;
    }
    let target = c.ln();
    for _ in 0..60 {
        let g = ln_erfc(y) - target;
        let dg = -FRAC_2_SQRT_PI / erfcx(y.max(0.0));
        let step = g / dg;
        y -= step;
        if step.abs() <= 1e-16 * y.abs().max(1e-300) {
            break;
        }
    }
    y
}

/// `ln erfc(y)` for `y >= 0` without underflow.
pub(crate) fn ln_erfc(y: f64) -> f64 {
    if y < 5.0 {
        erfc(y).ln()
    } else {
        -y * y + erfcx(y).ln()
    }
}

/// Inverse error function on `(-1, 1)`.
pub fn erf_inv(p: f64) -> Result<f64> {
    if !(p > -1.0 && p < 1.0) {
        return Err(domain("erf_inv", p, "(-1, 1)"));
    }
    if p == 0.0 {
        return Ok(p);
    }
    let a = p.abs();
    let y = if a <= 0.5 {
        let mut y = erf_inv_seed(a);
        for _ in 0..2 {
            let f = erf(y) - a;
            y -= f / (FRAC_2_SQRT_PI * (-y * y).exp());
        }
        y
    } else {
        // 1 - a is exact here (Sterbenz).
        erfc_inv_upper(1.0 - a)
    };
    Ok(y.copysign(p))
}

/// Standard normal density.
#[inline]
pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

/// Log of the standard normal density.
#[inline]
pub fn norm_logpdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// Standard normal CDF, `(1 + erf(z / sqrt 2)) / 2`, evaluated through
/// `erfc` so both tails keep relative accuracy.
#[inline]
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// Standard normal quantile on `(0, 1)`.
pub fn norm_quantile(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(domain("norm_quantile", q, "(0, 1)"));
    }
    if q == 0.5 {
        return Ok(0.0);
    }
    if q < 0.5 {
        Ok(-SQRT_2 * erfc_inv_upper(2.0 * q))
    } else {
        Ok(SQRT_2 * erfc_inv_upper(2.0 * (1.0 - q)))
    }
}

/// Owen's T function at `h = 0`, which has the closed form `atan(a) / (2 pi)`.
#[inline]
pub fn owens_t_h0(a: f64) -> f64 {
    a.atan() / (2.0 * PI)
}

/// Upper tail `P(X > x)` of a chi-square variable with `df` degrees of freedom.
pub fn chi2_sf(x: f64, df: u32) -> Result<f64> {
    if df < 1 {
        return Err(domain("chi2_sf", df as f64, "df >= 1"));
    }
    if !(x >= 0.0) {
        return Err(domain("chi2_sf", x, "[0, inf)"));
    }
    Ok(gamma_q(0.5 * df as f64, 0.5 * x))
}

/// Regularized upper incomplete gamma `Q(a, x)`.
///
/// Series for `P` when `x < a + 1`, Lentz continued fraction for `Q` otherwise.
fn gamma_q(a: f64, x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    let log_prefix = a * x.ln() - x - libm::lgamma(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        1.0 - sum * log_prefix.exp()
    } else {
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        log_prefix.exp() * h
    }
}
