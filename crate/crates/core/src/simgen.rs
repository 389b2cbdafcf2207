//! Generator of standardized scores with a target intra-departmental
//! correlation, built by replicating independent draws in clusters, plus the
//! perturbation scenarios and simulated department sizes.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::betoidal::{self, BetoidalParam, LTBetoidalParam};
use crate::corrmodel::{sigma_d, ModelTheta, SizeContext};
use crate::error::{Error, Result};
use crate::indices::ispd_round;
use crate::likelihoods::{DeptRecord, IspdGrid};
use crate::specfun::norm_quantile;

const DIST_TOL: f64 = 1e-12;
// the published five-decimal support gives mean 1.5e-6 and variance 1.000002
const MOMENT_TOL: f64 = 1e-5;

/// Discrete marginal distribution of standardized scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDist {
    support: Vec<f64>,
    probs: Vec<f64>,
    #[serde(skip)]
    sampler: Option<WeightedIndex<f64>>,
}

impl Default for ScoreDist {
    fn default() -> Self {
        Self::new(
            vec![-1.69580, -1.06773, -0.12561, 0.81650, 1.44457],
            vec![0.1, 0.2, 0.3, 0.25, 0.15],
        )
        .expect("embedded constants are valid")
    }
}

#[derive(Deserialize)]
struct ScoreDistDoc {
    support: Vec<f64>,
    probs: Vec<f64>,
}

impl ScoreDist {
    pub fn new(support: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != probs.len() {
            return Err(Error::LengthMismatch {
                left: support.len(),
                right: probs.len(),
            });
        }
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) || support.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidInput("score distribution entries must be finite, probabilities nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > DIST_TOL {
            return Err(Error::InvalidInput(format!("probabilities sum to {total}, not 1")));
        }
        let mean: f64 = support.iter().zip(&probs).map(|(s, p)| s * p).sum();
        let var: f64 = support.iter().zip(&probs).map(|(s, p)| p * (s - mean).powi(2)).sum();
        if mean.abs() > MOMENT_TOL || (var - 1.0).abs() > MOMENT_TOL {
            return Err(Error::InvalidInput(format!(
                "scores must be standardized: mean {mean}, variance {var}"
            )));
        }
        let sampler = WeightedIndex::new(&probs).map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(Self {
            support,
            probs,
            sampler: Some(sampler),
        })
    }

    /// Parses `{"support": [...], "probs": [...]}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ScoreDistDoc =
            serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("score distribution JSON: {e}")))?;
        Self::new(doc.support, doc.probs)
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mean(&self) -> f64 {
        self.support.iter().zip(&self.probs).map(|(s, p)| s * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.support.iter().zip(&self.probs).map(|(s, p)| p * (s - m).powi(2)).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let idx = match &self.sampler {
            Some(w) => w.sample(rng),
            // deserialized without a sampler
            None => WeightedIndex::new(&self.probs).expect("validated").sample(rng),
        };
        self.support[idx]
    }
}

/// `m` clusters of `k` replicated draws and one cluster of `k_check`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterTriplet {
    pub m: u32,
    pub k: u32,
    pub k_check: u32,
}

impl ClusterTriplet {
    pub fn validate(&self, n: u32) -> Result<()> {
        let used = u64::from(self.m) * u64::from(self.k) + u64::from(self.k_check);
        if self.k < 2 || self.k_check > self.k || used > u64::from(n) {
            return Err(Error::InvalidInput(format!("triplet {self:?} is invalid for N = {n}")));
        }
        Ok(())
    }
}

/// `{M k (k - 1) + k_check (k_check - 1)} / {N (N - 1)}`.
pub fn achieved_rho(t: &ClusterTriplet, n: u32) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("department size {n} < 2")));
    }
    t.validate(n)?;
    let (m, k, kc, nf) = (f64::from(t.m), f64::from(t.k), f64::from(t.k_check), f64::from(n));
    Ok((m * k * (k - 1.0) + kc * (kc - 1.0)) / (nf * (nf - 1.0)))
}

/// A selected triplet with the heuristic's side conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TripletChoice {
    pub triplet: ClusterTriplet,
    pub achieved: f64,
    /// The partial cluster was rounded up to a full cluster of size `k`.
    pub relaxed: bool,
    /// The partial cluster was limited by the remaining `N - M k` slots.
    pub capped: bool,
}

impl TripletChoice {
    pub fn relative_error(&self, target: f64) -> f64 {
        if target == 0.0 {
            self.achieved.abs()
        } else {
            (self.achieved - target).abs() / target
        }
    }
}

/// Heuristic choice of `(M, k, k_check)` approximating `rho` for size `n`.
pub fn triplet_select(rho: f64, n: u32) -> Result<TripletChoice> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("department size {n} < 2")));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Infeasible(format!("target correlation {rho} outside [0, 1) for N = {n}")));
    }
    if rho == 0.0 {
        let triplet = ClusterTriplet { m: 0, k: 2, k_check: 0 };
        return Ok(TripletChoice {
            triplet,
            achieved: 0.0,
            relaxed: false,
            capped: false,
        });
    }
    let nf = f64::from(n);
    let pairs = nf * (nf - 1.0);
    // guard integer boundaries against representation error
    let eps = 1e-9;
    let k = ((1.0 + rho * (nf - 1.0) - eps).ceil() as u32).max(2);
    if k > n {
        return Err(Error::Infeasible(format!("target correlation {rho} too close to 1 for N = {n}")));
    }
    let kf = f64::from(k);
    let m = (rho * pairs / (kf * (kf - 1.0)) + eps).floor() as u32;
    let rho_r = f64::from(m) * kf * (kf - 1.0) / pairs;
    let ks = 0.5 + (0.25 + (rho - rho_r).max(0.0) * pairs).sqrt();
    let rounded = ks.round() as u32;
    let room = n - m * k;
    let k_check = rounded.min(room);
    let triplet = ClusterTriplet { m, k, k_check };
    Ok(TripletChoice {
        triplet,
        achieved: achieved_rho(&triplet, n)?,
        relaxed: k_check == k,
        capped: rounded > room,
    })
}

/// `n` scores with target correlation `rho`: `M` leading blocks of `k`
/// identical draws, then one block of `k_check`, then independent draws.
pub fn gen_scores<R: Rng + ?Sized>(n: u32, rho: f64, dist: &ScoreDist, rng: &mut R) -> Result<Vec<f64>> {
    let choice = triplet_select(rho, n)?;
    Ok(gen_scores_with(n, &choice.triplet, dist, rng))
}

pub fn gen_scores_with<R: Rng + ?Sized>(n: u32, t: &ClusterTriplet, dist: &ScoreDist, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(n as usize);
    for _ in 0..t.m {
        let z = dist.sample(rng);
        out.extend(std::iter::repeat_n(z, t.k as usize));
    }
    if t.k_check > 0 {
        let z = dist.sample(rng);
        out.extend(std::iter::repeat_n(z, t.k_check as usize));
    }
    while out.len() < n as usize {
        out.push(dist.sample(rng));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationLevel {
    Null,
    Small,
    Medium,
    Large,
}

impl PerturbationLevel {
    pub const ALL: [PerturbationLevel; 4] = [Self::Null, Self::Small, Self::Medium, Self::Large];

    /// Range of the multiplicative uniform perturbation.
    pub fn range(self) -> (f64, f64) {
        match self {
            Self::Null => (1.0, 1.0),
            Self::Small => (0.9, 1.1),
            Self::Medium => (0.75, 1.25),
            Self::Large => (0.5, 1.5),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Null => "null",
            Self::Small => "small",
            Self::Medium => "medium",
            Self::Large => "large",
        }
    }
}

impl std::str::FromStr for PerturbationLevel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown perturbation level '{s}'")))
    }
}

pub fn perturb_rho<R: Rng + ?Sized>(rho: f64, level: PerturbationLevel, rng: &mut R) -> f64 {
    match level {
        PerturbationLevel::Null => rho,
        _ => {
            let (lo, hi) = level.range();
            rho * rng.random_range(lo..hi)
        }
    }
}

/// Six-number summary of department sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub min: f64,
    pub q1: f64,
    pub q2: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
}

impl SizeSummary {
    /// Sizes of the 766 departments of the 2017 exercise.
    pub const Y2017: SizeSummary = SizeSummary {
        min: 24.0,
        q1: 96.0,
        q2: 120.0,
        mean: 130.6,
        q3: 153.5,
        max: 464.0,
    };

    /// Sizes of the 350 released departments of the 2022 exercise.
    pub const Y2022: SizeSummary = SizeSummary {
        min: 78.0,
        q1: 159.0,
        q2: 198.0,
        mean: 219.8,
        q3: 254.2,
        max: 615.0,
    };
}

/// Shifted log-normal `c + exp(mu + s Z)` whose quartiles equal the summary's.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftedLogNormal {
    pub shift: f64,
    pub mu: f64,
    pub s: f64,
}

impl ShiftedLogNormal {
    pub fn from_quartiles(q1: f64, q2: f64, q3: f64) -> Result<Self> {
        let denom = q1 + q3 - 2.0 * q2;
        if !(q1 < q2 && q2 < q3) || !(denom > 0.0) {
            return Err(Error::InvalidInput("quartiles must be increasing and right-skewed".into()));
        }
        let shift = (q1 * q3 - q2 * q2) / denom;
        let z75 = norm_quantile(0.75)?;
        Ok(Self {
            shift,
            mu: (q2 - shift).ln(),
            s: ((q3 - shift) / (q2 - shift)).ln() / z75,
        })
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        Ok(self.shift + (self.mu + self.s * norm_quantile(p)?).exp())
    }

    pub fn mean(&self) -> f64 {
        self.shift + (self.mu + 0.5 * self.s * self.s).exp()
    }
}

/// `d` department sizes at the stratified quantiles `(i - 0.5) / d` of the
/// quartile-matched shifted log-normal, rounded, clamped to the summary's
/// range, with the extremes pinned to its min and max. Sorted ascending.
pub fn sizes_from_summary(summary: &SizeSummary, d: usize) -> Result<Vec<u32>> {
    if d < 2 {
        return Err(Error::InvalidInput("need at least 2 departments".into()));
    }
    if !(summary.min >= 2.0 && summary.min <= summary.q1 && summary.q3 <= summary.max) {
        return Err(Error::InvalidInput(format!("invalid size summary {summary:?}")));
    }
    let dist = ShiftedLogNormal::from_quartiles(summary.q1, summary.q2, summary.q3)?;
    let mut out = Vec::with_capacity(d);
    for i in 0..d {
        let p = (i as f64 + 0.5) / d as f64;
        let v = dist.quantile(p)?.round().clamp(summary.min, summary.max);
        out.push(v as u32);
    }
    out[0] = summary.min as u32;
    out[d - 1] = summary.max as u32;
    Ok(out)
}

/// Scaled averages `z_d ~ N(0, sigma_d^2)` drawn directly from the model.
pub fn simulate_scaled_records<R: Rng + ?Sized>(
    theta: &ModelTheta,
    sizes: &[u32],
    n_max: u32,
    rng: &mut R,
) -> Result<Vec<DeptRecord>> {
    sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let s = sigma_d(theta, &SizeContext::new(n, n_max)?);
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            DeptRecord::scaled(format!("d{i}"), n, s * z)
        })
        .collect()
}

/// Rounded ISPD values drawn from the Betoidal law of each department,
/// optionally left-truncated at a grid value.
pub fn simulate_ispd_records<R: Rng + ?Sized>(
    theta: &ModelTheta,
    sizes: &[u32],
    n_max: u32,
    truncation: Option<f64>,
    rng: &mut R,
) -> Result<Vec<DeptRecord>> {
    let x_star = match truncation {
        Some(v) => Some(IspdGrid::new().lower(IspdGrid::index_of(v)?)),
        None => None,
    };
    sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let s = sigma_d(theta, &SizeContext::new(n, n_max)?);
            let x = match x_star {
                Some(xs) => betoidal::lt_sample(&LTBetoidalParam::new(s, xs)?, 1, rng)[0],
                None => betoidal::sample(&BetoidalParam::new(s)?, 1, rng)[0],
            };
            DeptRecord::ispd(format!("d{i}"), n, ispd_round(x)?.value())
        })
        .collect()
}
