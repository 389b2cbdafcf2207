//! Monte Carlo comparison of the adjusted indices against the infeasible
//! benchmark that knows each department's true standard deviation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrmodel::{rho_d, sigma_from_rho, CorrelationModelKind, ModelTheta, SizeContext};
use crate::error::{Error, Result};
use crate::estimation::{fit, FitConfig};
use crate::indices::{
    ispd_fcm, ispd_np, ispd_original, ispd_rim, ispd_theo, rho_rim, scaled_average, IndexValue,
};
use crate::likelihoods::{Cohort, DeptRecord, LikelihoodKind, GRID_SIZE};
use crate::simgen::{gen_scores_with, perturb_rho, triplet_select, PerturbationLevel, ScoreDist};
use crate::specfun::norm_cdf;

/// Mean absolute difference on the 0-100 scale.
pub fn mad(a: &[IndexValue], b: &[IndexValue]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("MAD of empty vectors".into()));
    }
    let total: u64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| u64::from(x.half_points().abs_diff(y.half_points())))
        .sum();
    Ok(total as f64 / 2.0 / a.len() as f64)
}

/// Percentage of department pairs whose order (with ties as sign 0)
/// differs between `a` and `b`.
pub fn pdc(a: &[IndexValue], b: &[IndexValue]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let d = a.len();
    if d < 2 {
        return Err(Error::InvalidInput("PDC needs at least 2 departments".into()));
    }
    let mut discordant: u64 = 0;
    for i in 1..d {
        for j in 0..i {
            if a[i].cmp(&a[j]) != b[i].cmp(&b[j]) {
                discordant += 1;
            }
        }
    }
    Ok(200.0 * discordant as f64 / (d as f64 * (d as f64 - 1.0)))
}

/// min, quartiles (linear interpolation between order statistics), mean, max.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub min: f64,
    pub q1: f64,
    pub q2: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
}

fn type7(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64]) -> Result<SummaryRow> {
    if values.is_empty() {
        return Err(Error::InvalidInput("summary of an empty list".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("summary of a list containing NaN".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(SummaryRow {
        min: s[0],
        q1: type7(&s, 0.25),
        q2: type7(&s, 0.5),
        mean: s.iter().sum::<f64>() / s.len() as f64,
        q3: type7(&s, 0.75),
        max: s[s.len() - 1],
    })
}

/// The indices compared against the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexKind {
    Original,
    Np,
    Rim,
    Fcm,
}

impl IndexKind {
    pub const ALL: [IndexKind; 4] = [Self::Original, Self::Np, Self::Rim, Self::Fcm];

    pub fn name(self) -> &'static str {
        match self {
            Self::Original => "ispd",
            Self::Np => "ispd_np",
            Self::Rim => "ispd_rim",
            Self::Fcm => "ispd_fcm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub perturbation: PerturbationLevel,
    pub replications: usize,
    pub seed: u64,
    pub theta0: ModelTheta,
    pub sizes: Vec<u32>,
    pub score_dist: ScoreDist,
    /// Defaults to the largest size.
    pub n_max: Option<u32>,
    pub fit: FitConfig,
}

impl ScenarioConfig {
    pub fn new(perturbation: PerturbationLevel, replications: usize, seed: u64, sizes: Vec<u32>) -> Self {
        Self {
            perturbation,
            replications,
            seed,
            theta0: ModelTheta {
                alpha: 3.752,
                beta: -0.00376,
            },
            sizes,
            score_dist: ScoreDist::default(),
            n_max: None,
            fit: FitConfig::default(),
        }
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
            .unwrap_or_else(|| self.sizes.iter().copied().max().unwrap_or(0))
    }

    fn validate(&self) -> Result<Vec<SizeContext>> {
        if self.replications == 0 {
            return Err(Error::InvalidInput("replications must be at least 1".into()));
        }
        if self.sizes.len() < 2 {
            return Err(Error::InvalidInput("a scenario needs at least 2 departments".into()));
        }
        let n_max = self.n_max();
        self.sizes
            .iter()
            .map(|&n| SizeContext::new(n, n_max))
            .collect()
    }
}

/// Metrics of one index in one replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IndexMetrics {
    pub kind: IndexKind,
    pub mad: f64,
    pub pdc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationResult {
    pub replication: usize,
    /// Metrics in [`IndexKind::ALL`] order; FCM entries are NaN when the
    /// refit failed.
    pub metrics: [IndexMetrics; 4],
    pub theta_hat: Option<ModelTheta>,
    pub fit_error: Option<String>,
    pub rho_rim: f64,
    /// Grid counts of the original and FCM indices over departments.
    pub hist_original: Vec<u32>,
    pub hist_fcm: Vec<u32>,
    /// `z / sigma` for the smallest and the largest department.
    pub standardized_extremes: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioResult {
    pub config: ScenarioConfig,
    pub replications: Vec<ReplicationResult>,
    /// Departments whose triplet hit the room cap at their target.
    pub capped_departments: usize,
}

impl ScenarioResult {
    pub fn metric_values(&self, kind: IndexKind, pdc_metric: bool) -> Vec<f64> {
        let i = IndexKind::ALL.iter().position(|&k| k == kind).expect("listed kind");
        self.replications
            .iter()
            .map(|r| if pdc_metric { r.metrics[i].pdc } else { r.metrics[i].mad })
            .filter(|v| !v.is_nan())
            .collect()
    }

    pub fn summary(&self, kind: IndexKind, pdc_metric: bool) -> Result<SummaryRow> {
        summarize(&self.metric_values(kind, pdc_metric))
    }

    pub fn failed_fits(&self) -> usize {
        self.replications.iter().filter(|r| r.fit_error.is_some()).count()
    }

    pub fn pooled_histogram(&self, fcm: bool) -> Vec<u64> {
        let mut out = vec![0u64; GRID_SIZE];
        for r in &self.replications {
            let h = if fcm { &r.hist_fcm } else { &r.hist_original };
            for (o, &c) in out.iter_mut().zip(h) {
                *o += u64::from(c);
            }
        }
        out
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent stream for (seed, replication, department, purpose).
pub fn substream(seed: u64, replication: u64, dept: u64, tag: u64) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for v in [replication, dept, tag] {
        h = splitmix(h ^ v);
    }
    ChaCha8Rng::seed_from_u64(h)
}

const TAG_PERTURB: u64 = 1;
const TAG_SCORES: u64 = 2;

fn histogram(values: &[IndexValue]) -> Vec<u32> {
    let mut h = vec![0u32; GRID_SIZE];
    for v in values {
        h[usize::from(v.half_points())] += 1;
    }
    h
}

fn run_replication(cfg: &ScenarioConfig, ctxs: &[SizeContext], rep: usize) -> Result<(ReplicationResult, usize)> {
    let d = ctxs.len();
    let mut scores: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut z = Vec::with_capacity(d);
    let mut theo = Vec::with_capacity(d);
    let mut sigma_true = Vec::with_capacity(d);
    let mut capped = 0;
    for (i, ctx) in ctxs.iter().enumerate() {
        let mut prng = substream(cfg.seed, rep as u64, i as u64, TAG_PERTURB);
        let rho = perturb_rho(rho_d(&cfg.theta0, ctx), cfg.perturbation, &mut prng);
        let choice = triplet_select(rho, ctx.n_d())
            .map_err(|e| {
                let msg = match e {
                    Error::Infeasible(m) => m,
                    other => other.to_string(),
                };
                Error::Infeasible(format!("department {i} (N = {}): {msg}", ctx.n_d()))
            })?;
        capped += usize::from(choice.capped);
        let mut srng = substream(cfg.seed, rep as u64, i as u64, TAG_SCORES);
        let xs = gen_scores_with(ctx.n_d(), &choice.triplet, &cfg.score_dist, &mut srng);
        let zd = scaled_average(&xs)?;
        let s = sigma_from_rho(rho, ctx.n_d());
        theo.push(ispd_theo(zd, s)?);
        sigma_true.push(s);
        z.push(zd);
        scores.push(xs);
    }
    let original: Vec<IndexValue> = z.iter().map(|&v| ispd_original(v)).collect();
    let np: Vec<IndexValue> = z
        .iter()
        .zip(&scores)
        .map(|(&v, xs)| ispd_np(v, xs))
        .collect::<Result<_>>()?;
    let rho_pooled = rho_rim(&scores)?;
    let rim: Vec<IndexValue> = z
        .iter()
        .zip(ctxs)
        .map(|(&v, c)| ispd_rim(v, c.n_d(), rho_pooled))
        .collect::<Result<_>>()?;

    let records: Vec<DeptRecord> = z
        .iter()
        .zip(ctxs)
        .enumerate()
        .map(|(i, (&v, c))| DeptRecord::scaled(format!("d{i}"), c.n_d(), v))
        .collect::<Result<_>>()?;
    let cohort = Cohort::new(records, Some(cfg.n_max()), None)?;
    let fitted = fit(&cohort, CorrelationModelKind::Fcm, LikelihoodKind::Scaled, &cfg.fit);
    let (theta_hat, fit_error, fcm) = match fitted {
        Ok(r) => {
            let v: Vec<IndexValue> = z.iter().zip(ctxs).map(|(&v, c)| ispd_fcm(v, c, &r.theta_hat)).collect();
            (Some(r.theta_hat), None, Some(v))
        }
        Err(e) => (None, Some(e.to_string()), None),
    };

    let metric = |kind, idx: &[IndexValue]| -> Result<IndexMetrics> {
        Ok(IndexMetrics {
            kind,
            mad: mad(idx, &theo)?,
            pdc: pdc(idx, &theo)?,
        })
    };
    let fcm_metrics = match &fcm {
        Some(v) => metric(IndexKind::Fcm, v)?,
        None => IndexMetrics {
            kind: IndexKind::Fcm,
            mad: f64::NAN,
            pdc: f64::NAN,
        },
    };
    let (lo, hi) = extreme_positions(ctxs);
    Ok((
        ReplicationResult {
            replication: rep,
            metrics: [
                metric(IndexKind::Original, &original)?,
                metric(IndexKind::Np, &np)?,
                metric(IndexKind::Rim, &rim)?,
                fcm_metrics,
            ],
            theta_hat,
            fit_error,
            rho_rim: rho_pooled,
            hist_original: histogram(&original),
            hist_fcm: fcm.as_deref().map(histogram).unwrap_or_else(|| vec![0; GRID_SIZE]),
            standardized_extremes: [z[lo] / sigma_true[lo], z[hi] / sigma_true[hi]],
        },
        capped,
    ))
}

// first smallest and last largest department
fn extreme_positions(ctxs: &[SizeContext]) -> (usize, usize) {
    let mut lo = 0;
    let mut hi = 0;
    for (i, c) in ctxs.iter().enumerate() {
        if c.n_d() < ctxs[lo].n_d() {
            lo = i;
        }
        if c.n_d() >= ctxs[hi].n_d() {
            hi = i;
        }
    }
    (lo, hi)
}

/// Runs all replications of a scenario; replications are independent and
/// gathered in index order, so the result does not depend on scheduling.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioResult> {
    let ctxs = cfg.validate()?;
    let reps: Vec<(ReplicationResult, usize)> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| run_replication(cfg, &ctxs, r))
        .collect::<Result<_>>()?;
    // caps depend on the perturbed targets, so they are counted per replication
    let capped_departments = reps.iter().map(|(_, c)| c).sum();
    Ok(ScenarioResult {
        config: cfg.clone(),
        replications: reps.into_iter().map(|(r, _)| r).collect(),
        capped_departments,
    })
}

/// Anderson-Darling statistic against the standard normal and its
/// asymptotic p-value.
pub fn anderson_darling_normal(xs: &[f64]) -> Result<(f64, f64)> {
    let n = xs.len();
    if n < 5 {
        return Err(Error::InvalidInput("Anderson-Darling needs at least 5 values".into()));
    }
    let mut u: Vec<f64> = xs.iter().map(|&x| norm_cdf(x)).collect();
    u.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut s = 0.0;
    for i in 0..n {
        let a = u[i].max(f64::MIN_POSITIVE).ln();
        let b = (1.0 - u[n - 1 - i]).max(f64::MIN_POSITIVE).ln();
        s += (2.0 * i as f64 + 1.0) * (a + b);
    }
    let a2 = -nf - s / nf;
    Ok((a2, 1.0 - ad_inf_cdf(a2)))
}

// Marsaglia & Marsaglia's approximation to the limiting distribution
fn ad_inf_cdf(z: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    if z < 2.0 {
        (-1.2337141 / z).exp() / z.sqrt()
            * (2.00012 + (0.247105 - (0.0649821 - (0.0347962 - (0.011672 - 0.00168691 * z) * z) * z) * z) * z)
    } else {
        (-(1.0776 - (2.30695 - (0.43424 - (0.082433 - (0.008056 - 0.0003146 * z) * z) * z) * z) * z).exp()).exp()
    }
}
