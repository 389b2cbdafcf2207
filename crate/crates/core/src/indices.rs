//! The ISPD index and its correlation-adjusted variants.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corrmodel::{sigma_d, sigma_from_rho, ModelTheta, SizeContext};
use crate::error::{domain, Error, Result};
use crate::specfun::norm_cdf;

/// An index value on the half-integer grid `0, 0.5, ..., 100`, stored as a
/// count of half points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "f64", try_from = "f64")]
pub struct IndexValue(u16);

impl IndexValue {
    pub const MAX_HALF_POINTS: u16 = 200;

    pub fn from_half_points(h: u16) -> Result<Self> {
        if h > Self::MAX_HALF_POINTS {
            return Err(Error::InvalidInput(format!("{h} half points exceeds 100")));
        }
        Ok(Self(h))
    }

    /// Parses a grid value, tolerating representation error up to 1e-9.
    pub fn from_value(v: f64) -> Result<Self> {
        let twice = 2.0 * v;
        let h = twice.round();
        if !(0.0..=200.0).contains(&h) || (twice - h).abs() > 2e-9 {
            return Err(Error::InvalidInput(format!("{v} is not a grid value in [0, 100]")));
        }
        Ok(Self(h as u16))
    }

    pub fn half_points(self) -> u16 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 2.0
    }
}

impl From<IndexValue> for f64 {
    fn from(v: IndexValue) -> f64 {
        v.value()
    }
}

impl TryFrom<f64> for IndexValue {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::from_value(v)
    }
}

impl fmt::Display for IndexValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

/// `floor(200 x + 0.5) / 2`.
pub fn ispd_round(x: f64) -> Result<IndexValue> {
    if !(0.0..=1.0).contains(&x) {
        return Err(domain("indices::ispd_round", x, "[0, 1]"));
    }
    Ok(IndexValue((200.0 * x + 0.5).floor() as u16))
}

/// `sum(z) / sqrt(N)`.
pub fn scaled_average(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("scaled average of an empty department".into()));
    }
    Ok(scores.iter().sum::<f64>() / (scores.len() as f64).sqrt())
}

pub fn ispd_original(z: f64) -> IndexValue {
    ispd_round(norm_cdf(z)).expect("normal CDF lies in [0, 1]")
}

/// Index of `z / sigma` for a known department standard deviation.
pub fn ispd_theo(z: f64, sigma: f64) -> Result<IndexValue> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(domain("indices::ispd_theo", sigma, "sigma > 0"));
    }
    Ok(ispd_original(z / sigma))
}

/// Average cross-product `sum_{i != i'} z_i z_i' / (N (N - 1))`; not clamped.
pub fn rho_np(scores: &[f64]) -> Result<f64> {
    let n = scores.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("rho_np needs at least 2 scores, got {n}")));
    }
    let s: f64 = scores.iter().sum();
    let ss: f64 = scores.iter().map(|z| z * z).sum();
    let nf = n as f64;
    Ok((s * s - ss) / (nf * (nf - 1.0)))
}

/// Index with the department's own correlation estimate, clamped to [0, 1].
pub fn ispd_np(z: f64, scores: &[f64]) -> Result<IndexValue> {
    let rho = rho_np(scores)?.clamp(0.0, 1.0);
    ispd_theo(z, sigma_from_rho(rho, scores.len() as u32))
}

/// Pooled intraclass correlation from the one-way ANOVA decomposition,
/// clamped to `[0, 1)`.
///
/// With `G` groups of sizes `n_g` and `M = sum n_g`, the between and within
/// mean squares give `s_b^2 = (MSB - MSW) / n0`, where
/// `n0 = (M - sum n_g^2 / M) / (G - 1)`, and the estimate is
/// `s_b^2 / (s_b^2 + MSW)`.
pub fn rho_rim<S: AsRef<[f64]>>(groups: &[S]) -> Result<f64> {
    let g = groups.len();
    if g < 2 {
        return Err(Error::InvalidInput(format!("rho_rim needs at least 2 departments, got {g}")));
    }
    let mut m = 0usize;
    let mut total = 0.0;
    let mut sum_n2 = 0.0;
    for grp in groups {
        let grp = grp.as_ref();
        if grp.is_empty() {
            return Err(Error::InvalidInput("rho_rim: empty department".into()));
        }
        m += grp.len();
        total += grp.iter().sum::<f64>();
        sum_n2 += (grp.len() as f64).powi(2);
    }
    if m <= g {
        return Err(Error::Degenerate("rho_rim: no within-department degrees of freedom".into()));
    }
    let mf = m as f64;
    let grand = total / mf;
    let (mut ssb, mut ssw) = (0.0, 0.0);
    for grp in groups {
        let grp = grp.as_ref();
        let n = grp.len() as f64;
        let mean = grp.iter().sum::<f64>() / n;
        ssb += n * (mean - grand).powi(2);
        ssw += grp.iter().map(|z| (z - mean).powi(2)).sum::<f64>();
    }
    if ssb + ssw == 0.0 {
        return Err(Error::Degenerate("rho_rim: zero total variance".into()));
    }
    let gf = g as f64;
    let msb = ssb / (gf - 1.0);
    let msw = ssw / (mf - gf);
    let n0 = (mf - sum_n2 / mf) / (gf - 1.0);
    let sb2 = (msb - msw) / n0;
    let icc = if sb2 <= 0.0 { 0.0 } else { sb2 / (sb2 + msw) };
    Ok(icc.clamp(0.0, 1.0 - f64::EPSILON / 2.0))
}

pub fn ispd_rim(z: f64, n: u32, rho: f64) -> Result<IndexValue> {
    if n == 0 {
        return Err(Error::InvalidInput("department size must be positive".into()));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(domain("indices::ispd_rim", rho, "[0, 1)"));
    }
    ispd_theo(z, sigma_from_rho(rho, n))
}

/// Index with the department standard deviation implied by a fitted model.
pub fn ispd_fcm(z: f64, ctx: &SizeContext, theta: &ModelTheta) -> IndexValue {
    let s = sigma_d(theta, ctx);
    debug_assert!(s > 0.0);
    ispd_original(z / s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::norm_quantile;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: f64) -> f64 {
        ispd_round(x).unwrap().value()
    }

    #[test]
    fn rounding_examples() {
        assert_eq!(v(0.5), 50.0);
        assert_eq!(v(1.0), 100.0);
        assert_eq!(v(0.0), 0.0);
        assert_eq!(v(0.97725), 97.5);
        assert!(ispd_round(1.0 + 1e-12).is_err());
        assert!(ispd_round(f64::NAN).is_err());
    }

    #[test]
    fn published_original_and_theo_examples() {
        assert_eq!(ispd_original(0.0).value(), 50.0);
        assert_eq!(ispd_original(2.0).value(), 97.5);
        assert!((100.0 * norm_cdf(2.0) - 97.72).abs() < 5e-3);
        // 200 * 0.0227501 + 0.5 = 5.05, so the rounded index is 2.5
        assert_eq!(ispd_original(-2.0).value(), 2.5);
        assert!((100.0 * norm_cdf(-2.0) - 2.28).abs() < 5e-3);

        let sa = sigma_from_rho(0.05, 75);
        let sb = sigma_from_rho(0.05, 150);
        assert!((sa - 2.1679).abs() < 5e-5 && (sb - 2.9069).abs() < 5e-5);
        assert!((100.0 * norm_cdf(2.0 / sa) - 82.19).abs() < 5e-3);
        assert!((100.0 * norm_cdf(2.0 / sb) - 75.43).abs() < 5e-3);
        assert_eq!(ispd_theo(2.0, sa).unwrap().value(), 82.0);
        assert_eq!(ispd_theo(2.0, sb).unwrap().value(), 75.5);
        assert_eq!(ispd_rim(2.0, 75, 0.05).unwrap().value(), 82.0);
        assert_eq!(ispd_theo(1.3, 1.0).unwrap(), ispd_original(1.3));
        assert!(ispd_theo(1.0, 0.0).is_err());
    }

    #[test]
    fn scaled_average_identities() {
        assert_eq!(scaled_average(&[0.0; 5]).unwrap(), 0.0);
        assert_eq!(scaled_average(&[1.0; 4]).unwrap(), 2.0);
        assert!(scaled_average(&[]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..37).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mean = xs.iter().sum::<f64>() / 37.0;
        assert!((scaled_average(&xs).unwrap() - mean * 37f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn rho_np_examples_and_pairwise_oracle() {
        assert_eq!(rho_np(&[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(rho_np(&[1.0, -1.0]).unwrap(), -1.0);
        assert!(rho_np(&[1.0]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for n in [2usize, 3, 10, 57] {
            let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-2.5..2.5)).collect();
            let mut pairs = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        pairs += xs[i] * xs[j];
                    }
                }
            }
            let nf = n as f64;
            let oracle = pairs / (nf * (nf - 1.0));
            assert!((rho_np(&xs).unwrap() - oracle).abs() < 1e-12);
            let zt = scaled_average(&xs).unwrap();
            let ms = xs.iter().map(|x| x * x).sum::<f64>() / nf;
            assert!((rho_np(&xs).unwrap() - (zt * zt - ms) / (nf - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn ispd_np_special_cases() {
        assert_eq!(ispd_np(0.0, &[0.0; 6]).unwrap(), ispd_original(0.0));
        // replicated unit scores: rho = 1, sigma = sqrt(N), index of Phi(mean)
        for c in [1.0, -1.0] {
            let xs = [c; 9];
            assert_eq!(rho_np(&xs).unwrap(), 1.0);
            let z = scaled_average(&xs).unwrap();
            assert_eq!(ispd_np(z, &xs).unwrap(), ispd_original(c));
        }
        // other replicated values give rho = c^2, clamped to 1 above one
        let xs = [1.6; 9];
        assert!((rho_np(&xs).unwrap() - 2.56).abs() < 1e-12);
        assert_eq!(ispd_np(scaled_average(&xs).unwrap(), &xs).unwrap(), ispd_original(1.6));
        // negative estimates are clamped to zero
        assert_eq!(ispd_np(0.0, &[1.0, -1.0]).unwrap(), ispd_original(0.0));
    }

    #[test]
    fn rho_rim_extremes() {
        let groups = vec![vec![1.0; 5], vec![-1.0; 7], vec![0.3; 4]];
        let r = rho_rim(&groups).unwrap();
        assert!(r > 0.999_999 && r < 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let iid: Vec<Vec<f64>> = (0..300)
            .map(|i| {
                (0..(10 + i % 40))
                    .map(|_| norm_quantile(rng.random_range(1e-9..1.0 - 1e-9)).unwrap())
                    .collect()
            })
            .collect();
        assert!(rho_rim(&iid).unwrap() < 0.01);
        assert!(rho_rim(&[vec![0.0; 3], vec![0.0; 3]]).is_err());
        assert!(rho_rim(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn rho_rim_matches_balanced_formula() {
        // balanced design: n0 = n and the estimator is (MSB - MSW)/(MSB + (n-1) MSW)
        let groups = [[0.1, 0.5, 0.9], [1.0, 1.4, 2.2], [-0.5, 0.0, -0.1], [0.3, 0.2, 0.7]];
        let n = 3.0;
        let means: Vec<f64> = groups.iter().map(|g| g.iter().sum::<f64>() / n).collect();
        let grand = means.iter().sum::<f64>() / 4.0;
        let msb = n * means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / 3.0;
        let msw = groups
            .iter()
            .zip(&means)
            .map(|(g, m)| g.iter().map(|x| (x - m).powi(2)).sum::<f64>())
            .sum::<f64>()
            / 8.0;
        let expected = (msb - msw) / (msb + (n - 1.0) * msw);
        assert!((rho_rim(&groups).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn fcm_plug_in_identities() {
        let ctx = SizeContext::new(120, 464).unwrap();
        assert_eq!(ispd_fcm(1.7, &ctx, &ModelTheta::NULL), ispd_original(1.7));
        let t = ModelTheta::new(3.7527, -0.0038).unwrap();
        assert_eq!(ispd_fcm(1.7, &ctx, &t), ispd_theo(1.7, sigma_d(&t, &ctx)).unwrap());
    }

    #[test]
    fn index_value_conversions() {
        assert_eq!(IndexValue::from_value(73.0).unwrap().half_points(), 146);
        assert_eq!(IndexValue::from_value(72.5 + 1e-10).unwrap().value(), 72.5);
        assert!(IndexValue::from_value(72.3).is_err());
        assert!(IndexValue::from_half_points(201).is_err());
        let json = serde_json::to_string(&IndexValue::from_value(12.5).unwrap()).unwrap();
        assert_eq!(json, "12.5");
        let back: IndexValue = serde_json::from_str(&json).unwrap();
        assert_eq!(back.value(), 12.5);
    }

    proptest! {
        #[test]
        fn rounding_is_on_grid_and_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(ispd_round(lo).unwrap() <= ispd_round(hi).unwrap());
            prop_assert!(ispd_round(a).unwrap().half_points() <= 200);
        }

        #[test]
        fn rounding_reflects_away_from_ties(k in 0u32..1000, frac in 0.01f64..0.99) {
            // 200 x + 0.5 sits strictly between integers; ties (x on a cell edge)
            // round up on both sides and are the documented exception
            let x = (f64::from(k % 200) + frac) / 200.0;
            prop_assume!((frac - 0.5).abs() > 1e-6);
            let r = ispd_round(x).unwrap().value();
            let m = ispd_round(1.0 - x).unwrap().value();
            prop_assert_eq!(m, 100.0 - r);
        }

        #[test]
        fn indices_are_monotone_in_z(z1 in -6.0f64..6.0, z2 in -6.0f64..6.0, n in 2u32..464, rho in 0.0f64..0.9,
                                     a in 0.0f64..5.0, b in -0.02f64..0.0) {
            let (lo, hi) = if z1 <= z2 { (z1, z2) } else { (z2, z1) };
            let ctx = SizeContext::new(n, 464).unwrap();
            let t = ModelTheta::new(a, b).unwrap();
            let s = sigma_from_rho(rho, n);
            prop_assert!(ispd_original(lo) <= ispd_original(hi));
            prop_assert!(ispd_theo(lo, s).unwrap() <= ispd_theo(hi, s).unwrap());
            prop_assert!(ispd_rim(lo, n, rho).unwrap() <= ispd_rim(hi, n, rho).unwrap());
            prop_assert!(ispd_fcm(lo, &ctx, &t) <= ispd_fcm(hi, &ctx, &t));
            prop_assert_eq!(ispd_theo(lo, s).unwrap(), ispd_original(lo / s));
        }

        #[test]
        fn zero_correlation_collapses_indices(z in -5.0f64..5.0, n in 2u32..300) {
            let ctx = SizeContext::new(n, 300).unwrap();
            let o = ispd_original(z);
            prop_assert_eq!(ispd_theo(z, 1.0).unwrap(), o);
            prop_assert_eq!(ispd_rim(z, n, 0.0).unwrap(), o);
            prop_assert_eq!(ispd_fcm(z, &ctx, &ModelTheta::NULL), o);
            prop_assert_eq!(ispd_np(z, &[1.0, -1.0]).unwrap(), o);
        }
    }
}
