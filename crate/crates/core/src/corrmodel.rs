//! Size-dependent intra-departmental correlation.
//!
//! The linear predictor `F = alpha + beta (N_d - 1)` is mapped to a
//! correlation through the inverse pseudo-Fisher link
//! `rho = (e^F - 1) / (e^F + N_max)`, which keeps `rho` inside
//! `(-1/N_max, 1)` so that `sigma_d^2 = 1 + rho (N_d - 1)` is positive for
//! every department in the cohort.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the linear predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelTheta {
    pub alpha: f64,
    pub beta: f64,
}

impl ModelTheta {
    pub const NULL: ModelTheta = ModelTheta {
        alpha: 0.0,
        beta: 0.0,
    };

    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "theta must be finite, got ({alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.alpha, self.beta]
    }
}

/// Full, constant and null correlation models, nested in that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationModelKind {
    Fcm,
    Ccm,
    Ncm,
}

impl CorrelationModelKind {
    pub fn free_params(self) -> usize {
        match self {
            Self::Fcm => 2,
            Self::Ccm => 1,
            Self::Ncm => 0,
        }
    }

    /// Project `theta` onto the model's constraint set.
    pub fn constrain(self, theta: ModelTheta) -> ModelTheta {
        match self {
            Self::Fcm => theta,
            Self::Ccm => ModelTheta {
                alpha: theta.alpha,
                beta: 0.0,
            },
            Self::Ncm => ModelTheta::NULL,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Fcm => "fcm",
            Self::Ccm => "ccm",
            Self::Ncm => "ncm",
        }
    }
}

/// Department size together with the cohort maximum size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SizeContext {
    n_d: u32,
    n_max: u32,
}

impl SizeContext {
    pub fn new(n_d: u32, n_max: u32) -> Result<Self> {
        if n_d < 2 || n_d > n_max {
            return Err(Error::InvalidInput(format!(
                "department size {n_d} must satisfy 2 <= n_d <= n_max = {n_max}"
            )));
        }
        Ok(Self { n_d, n_max })
    }

    #[inline]
    pub fn n_d(&self) -> u32 {
        self.n_d
    }

    #[inline]
    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    /// `N_d - 1`, the multiplier of `beta`.
    #[inline]
    pub fn nm1(&self) -> f64 {
        f64::from(self.n_d - 1)
    }
}

#[inline]
pub fn linpred(theta: &ModelTheta, ctx: &SizeContext) -> f64 {
    theta.alpha + theta.beta * ctx.nm1()
}

/// Inverse link `(e^f - 1) / (e^f + n_max)`, rewritten in `e^-f` for `f > 0`
/// so neither tail overflows.
pub fn rho_from_linpred(f: f64, n_max: f64) -> f64 {
    if f > 0.0 {
        let t = (-f).exp();
        (1.0 - t) / (1.0 + n_max * t)
    } else {
        let e = f.exp();
        // e^f - 1 via expm1 keeps precision for f near 0
        f.exp_m1() / (e + n_max)
    }
}

/// Pseudo-Fisher link `ln((1 + n_max rho) / (1 - rho))`.
pub fn linpred_from_rho(rho: f64, n_max: f64) -> f64 {
    ((1.0 + n_max * rho) / (1.0 - rho)).ln()
}

/// `d rho / d F = e^F (n_max + 1) / (e^F + n_max)^2`.
pub fn delta_from_linpred(f: f64, n_max: f64) -> f64 {
    if f > 0.0 {
        let t = (-f).exp();
        let den = 1.0 + n_max * t;
        t * (n_max + 1.0) / (den * den)
    } else {
        let e = f.exp();
        let den = e + n_max;
        e * (n_max + 1.0) / (den * den)
    }
}

/// `(n_max - e^F) / (n_max + e^F)`, the logarithmic derivative of `delta`.
pub fn delta_log_slope(f: f64, n_max: f64) -> f64 {
    if f > 0.0 {
        let t = (-f).exp();
        (n_max * t - 1.0) / (n_max * t + 1.0)
    } else {
        let e = f.exp();
        (n_max - e) / (n_max + e)
    }
}

#[inline]
pub fn rho_d(theta: &ModelTheta, ctx: &SizeContext) -> f64 {
    rho_from_linpred(linpred(theta, ctx), f64::from(ctx.n_max))
}

/// `sqrt(1 + rho (n - 1))`.
#[inline]
pub fn sigma_from_rho(rho: f64, n: u32) -> f64 {
    (1.0 + rho * f64::from(n - 1)).sqrt()
}

#[inline]
pub fn sigma_d(theta: &ModelTheta, ctx: &SizeContext) -> f64 {
    sigma_from_rho(rho_d(theta, ctx), ctx.n_d)
}

#[inline]
pub fn delta_alpha(theta: &ModelTheta, ctx: &SizeContext) -> f64 {
    delta_from_linpred(linpred(theta, ctx), f64::from(ctx.n_max))
}

/// Per-department link quantities shared by all likelihood contributions.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LinkTerms {
    pub nm1: f64,
    pub sigma2: f64,
    pub sigma: f64,
    /// `(N_d - 1) delta`, i.e. `d sigma^2 / d alpha`.
    pub dsigma2: f64,
    pub slope: f64,
}

impl LinkTerms {
    pub fn at(theta: &ModelTheta, ctx: &SizeContext) -> Self {
        let f = linpred(theta, ctx);
        let n_max = f64::from(ctx.n_max);
        let nm1 = ctx.nm1();
        let sigma2 = 1.0 + rho_from_linpred(f, n_max) * nm1;
        Self {
            nm1,
            sigma2,
            sigma: sigma2.sqrt(),
            dsigma2: nm1 * delta_from_linpred(f, n_max),
            slope: delta_log_slope(f, n_max),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const THETA0: ModelTheta = ModelTheta {
        alpha: 3.752,
        beta: -0.00376,
    };

    fn ctx(n: u32, n_max: u32) -> SizeContext {
        SizeContext::new(n, n_max).unwrap()
    }

    #[test]
    fn linpred_examples() {
        assert_eq!(linpred(&ModelTheta::NULL, &ctx(50, 464)), 0.0);
        assert!((linpred(&THETA0, &ctx(24, 464)) - 3.66552).abs() < 1e-12);
        let t = ModelTheta::new(1.0, -0.01).unwrap();
        assert!(linpred(&t, &ctx(101, 464)).abs() < 1e-15);
    }

    #[test]
    fn inverse_link_examples() {
        assert_eq!(rho_from_linpred(0.0, 464.0), 0.0);
        assert_eq!(rho_from_linpred(800.0, 464.0), 1.0);
        assert!((rho_from_linpred(-800.0, 464.0) + 1.0 / 464.0).abs() < 1e-18);
        let r = rho_from_linpred(3.66552, 464.0);
        assert!((r - 0.0757).abs() < 0.0005);
    }

    #[test]
    fn table_summaries_from_published_theta() {
        assert!((rho_d(&ModelTheta::NULL, &ctx(300, 464))).abs() < 1e-18);
        let r_min = rho_d(&THETA0, &ctx(464, 464));
        assert!((r_min - 0.0137).abs() < 0.0005, "{r_min}");
        let s = sigma_d(&THETA0, &ctx(24, 464));
        assert!((s - 1.657).abs() < 0.003, "{s}");
    }

    #[test]
    fn sigma_examples() {
        assert_eq!(sigma_from_rho(0.0, 75), 1.0);
        assert!((sigma_from_rho(0.05, 75) - 4.7f64.sqrt()).abs() < 1e-15);
        assert!((sigma_from_rho(0.05, 75) - 2.1679).abs() < 1e-4);
    }

    #[test]
    fn delta_examples() {
        assert!((delta_from_linpred(0.0, 1.0) - 0.5).abs() < 1e-16);
        assert!(delta_from_linpred(800.0, 464.0) < 1e-300);
        assert!(delta_from_linpred(-800.0, 464.0) < 1e-300);
        let c = ctx(130, 464);
        let h = 1e-6;
        let up = ModelTheta::new(THETA0.alpha + h, THETA0.beta).unwrap();
        let dn = ModelTheta::new(THETA0.alpha - h, THETA0.beta).unwrap();
        let fd = (rho_d(&up, &c) - rho_d(&dn, &c)) / (2.0 * h);
        let d = delta_alpha(&THETA0, &c);
        assert!(((d - fd) / d).abs() < 1e-7);
    }

    #[test]
    fn beta_derivative_is_scaled_alpha_derivative() {
        let c = ctx(200, 464);
        let h = 1e-8;
        let up = ModelTheta::new(THETA0.alpha, THETA0.beta + h).unwrap();
        let dn = ModelTheta::new(THETA0.alpha, THETA0.beta - h).unwrap();
        let fd = (rho_d(&up, &c) - rho_d(&dn, &c)) / (2.0 * h);
        let d = c.nm1() * delta_alpha(&THETA0, &c);
        assert!(((d - fd) / d).abs() < 1e-6);
    }

    #[test]
    fn decreasing_in_size_for_negative_beta() {
        let mut prev = f64::INFINITY;
        for n in 2..=464 {
            let r = rho_d(&THETA0, &ctx(n, 464));
            assert!(r < prev);
            prev = r;
        }
    }

    #[test]
    fn rho_times_size_is_bounded() {
        let n_max = 100_000u32;
        let theta = ModelTheta::new(10.0, -0.01).unwrap();
        let products: Vec<(u32, f64)> = (2..=n_max)
            .step_by(7)
            .map(|n| (n, rho_d(&theta, &ctx(n, n_max)) * f64::from(n)))
            .collect();
        let (argmax, peak) = products
            .iter()
            .cloned()
            .fold((0, f64::MIN), |acc, p| if p.1 > acc.1 { p } else { acc });
        // the supremum is reached at a moderate size; further out rho tends
        // to -1/n_max, so the product stays within [-1, peak]
        assert!(argmax < 2_000, "argmax {argmax}");
        assert!(peak.is_finite() && peak > 1.0);
        for &(n, v) in &products {
            assert!(v >= -1.0 - 1e-12 && v <= peak, "n {n} value {v}");
        }
    }

    #[test]
    fn size_context_validation() {
        assert!(SizeContext::new(1, 10).is_err());
        assert!(SizeContext::new(11, 10).is_err());
        assert!(SizeContext::new(10, 10).is_ok());
        assert!(ModelTheta::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn model_constraints() {
        let t = ModelTheta::new(2.0, -0.1).unwrap();
        assert_eq!(CorrelationModelKind::Ccm.constrain(t).beta, 0.0);
        assert_eq!(CorrelationModelKind::Ncm.constrain(t), ModelTheta::NULL);
        assert_eq!(CorrelationModelKind::Fcm.constrain(t), t);
    }

    proptest! {
        #[test]
        fn rho_stays_in_link_range(alpha in -50.0f64..50.0, beta in -1.0f64..1.0, n in 2u32..1000, extra in 0u32..1000) {
            let n_max = n + extra;
            let c = ctx(n, n_max);
            let t = ModelTheta::new(alpha, beta).unwrap();
            let r = rho_d(&t, &c);
            prop_assert!(r >= -1.0 / f64::from(n_max) && r <= 1.0);
            prop_assert!(sigma_d(&t, &c) > 0.0);
        }

        #[test]
        fn link_round_trip(f in -10.0f64..10.0, n_max in 2u32..2000) {
            let nm = f64::from(n_max);
            let rho = rho_from_linpred(f, nm);
            let back = linpred_from_rho(rho, nm);
            // the forward map rounds rho; allow that rounding amplified by dF/drho
            let cond = nm / (1.0 + nm * rho) + 1.0 / (1.0 - rho);
            let tol = 1e-12 + 4.0 * f64::EPSILON * rho.abs() * cond;
            prop_assert!((back - f).abs() < tol, "f {} back {} tol {}", f, back, tol);
        }
    }
}
