//! Log-likelihoods of the correlation model with analytic score and Hessian.
//!
//! Three observation schemes are supported:
//!
//! * exact scaled averages `z_d ~ N(0, sigma_d^2)`;
//! * ISPD values rounded onto the half-integer grid, i.e. the Betoidal
//!   variable `X_d = Phi(z_d)` observed only up to its grid cell;
//! * rounded values that are additionally left-truncated at a grid value,
//!   where each cell probability is renormalised by the survival
//!   `1 - F(x_star; sigma_d)`.
//!
//! Every department contributes through `sigma_d` only, so each contribution
//! is differentiated in `alpha` and the `beta` entries follow from the
//! `(1, N_d - 1)` tensor structure.
//!
//! Cell probabilities deep in the tails are carried in scaled form
//! (`exp(u^2) erfc(u)`) so that neither the log-likelihood nor the score
//! underflows when `sigma_d` is far from the data.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::corrmodel::{LinkTerms, ModelTheta, SizeContext};
use crate::error::{Error, Result};
use crate::specfun::{erf, erf_inv, erfc, erfcx, ln_erfc, norm_logpdf};

/// Number of ISPD grid values `0, 0.5, ..., 100`.
pub const GRID_SIZE: usize = 201;

/// Floor applied to cell probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-300;

const GRID_TOL: f64 = 1e-9;
const SCALED_SWITCH: f64 = 5.0;

/// The half-integer ISPD grid and its cell bounds on the probability scale.
#[derive(Debug, Clone)]
pub struct IspdGrid {
    lower: [f64; GRID_SIZE],
    upper: [f64; GRID_SIZE],
    // erf^-1(2x - 1) at the bounds; -inf / +inf at 0 / 1
    e_lower: [f64; GRID_SIZE],
    e_upper: [f64; GRID_SIZE],
}

fn e_of(x: f64) -> f64 {
    if x <= 0.0 {
        f64::NEG_INFINITY
    } else if x >= 1.0 {
        f64::INFINITY
    } else {
        erf_inv(2.0 * x - 1.0).expect("interior bound")
    }
}

impl Default for IspdGrid {
    fn default() -> Self {
        Self::new()
    }
}

impl IspdGrid {
    pub fn new() -> Self {
        let mut lower = [0.0; GRID_SIZE];
        let mut upper = [0.0; GRID_SIZE];
        let mut e_lower = [0.0; GRID_SIZE];
        let mut e_upper = [0.0; GRID_SIZE];
        for j in 0..GRID_SIZE {
            let s = Self::value(j);
            // end cells are clamped to [0, 1]
            lower[j] = ((s - 0.25) / 100.0).clamp(0.0, 1.0);
            upper[j] = ((s + 0.25) / 100.0).clamp(0.0, 1.0);
            e_lower[j] = e_of(lower[j]);
            e_upper[j] = e_of(upper[j]);
        }
        Self {
            lower,
            upper,
            e_lower,
            e_upper,
        }
    }

    /// Grid value of the 0-based cell index.
    #[inline]
    pub fn value(j: usize) -> f64 {
        j as f64 * 0.5
    }

    /// 0-based cell index of a grid value, rejecting off-grid input.
    pub fn index_of(value: f64) -> Result<usize> {
        let twice = 2.0 * value;
        let j = twice.round();
        if !(0.0..=200.0).contains(&j) || (twice - j).abs() > 2.0 * GRID_TOL {
            return Err(Error::InvalidInput(format!(
                "{value} is not on the half-integer grid 0, 0.5, ..., 100"
            )));
        }
        Ok(j as usize)
    }

    #[inline]
    pub fn lower(&self, j: usize) -> f64 {
        self.lower[j]
    }

    #[inline]
    pub fn upper(&self, j: usize) -> f64 {
        self.upper[j]
    }
}

/// What was observed for a department.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Observation {
    ScaledAvg(f64),
    /// 0-based grid index.
    IspdCell(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeptRecord {
    pub id: String,
    pub size: u32,
    pub observation: Observation,
}

impl DeptRecord {
    pub fn scaled(id: impl Into<String>, size: u32, z: f64) -> Result<Self> {
        let id = id.into();
        if !z.is_finite() {
            return Err(Error::InvalidInput(format!(
                "department {id}: scaled average must be finite"
            )));
        }
        Ok(Self {
            id,
            size,
            observation: Observation::ScaledAvg(z),
        })
    }

    pub fn ispd(id: impl Into<String>, size: u32, value: f64) -> Result<Self> {
        let id = id.into();
        let j = IspdGrid::index_of(value)
            .map_err(|e| Error::InvalidInput(format!("department {id}: {e}")))?;
        Ok(Self {
            id,
            size,
            observation: Observation::IspdCell(j),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LikelihoodKind {
    /// Exact scaled averages.
    Scaled,
    /// Rounded ISPD cells.
    Coarse,
    /// Rounded and left-truncated ISPD cells.
    CoarseTruncated,
}

/// A homogeneous set of department records plus the cohort settings that
/// stay fixed between fitting and adjustment.
#[derive(Debug, Clone)]
pub struct Cohort {
    records: Vec<DeptRecord>,
    contexts: Vec<SizeContext>,
    n_max: u32,
    truncation: Option<usize>,
    grid: IspdGrid,
    // canonical summation order, so sums do not depend on input order
    order: Vec<usize>,
}

fn observation_key(o: &Observation) -> (u8, f64) {
    match *o {
        Observation::ScaledAvg(z) => (0, z),
        Observation::IspdCell(j) => (1, j as f64),
    }
}

impl Cohort {
    /// Builds a cohort. `n_max` defaults to the largest department size;
    /// `truncation` is a grid value (e.g. 73) and requires ISPD observations.
    pub fn new(records: Vec<DeptRecord>, n_max: Option<u32>, truncation: Option<f64>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidInput("cohort has no departments".into()));
        }
        let is_scaled = matches!(records[0].observation, Observation::ScaledAvg(_));
        if records
            .iter()
            .any(|r| matches!(r.observation, Observation::ScaledAvg(_)) != is_scaled)
        {
            return Err(Error::InvalidInput(
                "cohort mixes scaled averages and ISPD cells".into(),
            ));
        }
        let largest = records.iter().map(|r| r.size).max().unwrap_or(0);
        let n_max = n_max.unwrap_or(largest);
        if n_max < largest {
            return Err(Error::InvalidInput(format!(
                "n_max = {n_max} is below the largest department size {largest}"
            )));
        }
        let contexts = records
            .iter()
            .map(|r| {
                SizeContext::new(r.size, n_max)
                    .map_err(|e| Error::InvalidInput(format!("department {}: {e}", r.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let truncation = match truncation {
            None => None,
            Some(_) if is_scaled => {
                return Err(Error::InvalidInput(
                    "truncation applies to ISPD observations only".into(),
                ))
            }
            Some(v) => {
                let t = IspdGrid::index_of(v)?;
                for r in &records {
                    if let Observation::IspdCell(j) = r.observation {
                        if j < t {
                            return Err(Error::InvalidInput(format!(
                                "department {}: ISPD {} below truncation {}",
                                r.id,
                                IspdGrid::value(j),
                                v
                            )));
                        }
                    }
                }
                Some(t)
            }
        };
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (&records[a], &records[b]);
            let (ka, kb) = (observation_key(&ra.observation), observation_key(&rb.observation));
            ra.size
                .cmp(&rb.size)
                .then(ka.0.cmp(&kb.0))
                .then(ka.1.total_cmp(&kb.1))
        });
        Ok(Self {
            records,
            contexts,
            n_max,
            truncation,
            grid: IspdGrid::new(),
            order,
        })
    }

    pub fn records(&self) -> &[DeptRecord] {
        &self.records
    }

    pub fn contexts(&self) -> &[SizeContext] {
        &self.contexts
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Truncation grid index, if any.
    pub fn truncation(&self) -> Option<usize> {
        self.truncation
    }

    pub fn grid(&self) -> &IspdGrid {
        &self.grid
    }

    pub fn is_scaled(&self) -> bool {
        matches!(self.records[0].observation, Observation::ScaledAvg(_))
    }

    /// The likelihood that matches the observation type and truncation.
    pub fn natural_likelihood(&self) -> LikelihoodKind {
        if self.is_scaled() {
            LikelihoodKind::Scaled
        } else if self.truncation.is_some() {
            LikelihoodKind::CoarseTruncated
        } else {
            LikelihoodKind::Coarse
        }
    }

    fn check_kind(&self, lik: LikelihoodKind) -> Result<()> {
        let ok = match lik {
            LikelihoodKind::Scaled => self.is_scaled(),
            LikelihoodKind::Coarse => !self.is_scaled() && self.truncation.is_none(),
            LikelihoodKind::CoarseTruncated => !self.is_scaled() && self.truncation.is_some(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "likelihood {lik:?} does not match the cohort observations"
            )))
        }
    }
}

/// Log-likelihood, score and Hessian at one parameter value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loglik: f64,
    pub score: [f64; 2],
    pub hessian: [[f64; 2]; 2],
    /// Number of departments whose cell probability hit [`PROB_FLOOR`].
    pub floored: usize,
}

/// `alpha`-derivatives of one department's contribution.
#[derive(Debug, Clone, Copy)]
struct Contribution {
    loglik: f64,
    d1: f64,
    d2: f64,
    floored: bool,
}

fn scaled_contribution(z: f64, link: &LinkTerms) -> Contribution {
    let s2 = link.sigma2;
    let loglik = -link.sigma.ln() + norm_logpdf(z / link.sigma);
    let a = link.dsigma2;
    let d1 = a * (z * z - s2) / (2.0 * s2 * s2);
    let d2 = d1 * (link.slope - 2.0 * a / s2) - a * a / (2.0 * s2 * s2);
    Contribution {
        loglik,
        d1,
        d2,
        floored: false,
    }
}

/// A cell probability and its alpha-derivatives (`eta`, `tau`), all divided
/// by `exp(log_scale)`.
#[derive(Debug, Clone, Copy)]
struct ScaledCell {
    log_scale: f64,
    pi: f64,
    eta: f64,
    tau: f64,
}

#[inline]
fn gauss_moment(x: f64, power: i32) -> f64 {
    // exp(-x^2) x^power, zero at infinite bounds
    if x.is_infinite() {
        0.0
    } else {
        (-x * x).exp() * x.powi(power)
    }
}

/// Probability of `e_lo < e(X) <= e_hi` for `X ~ Betoidal(sigma)` and its
/// derivatives in `alpha`.
fn cell_terms(e_lo: f64, e_hi: f64, link: &LinkTerms) -> ScaledCell {
    let sigma = link.sigma;
    let mut u = e_lo / sigma;
    let mut v = e_hi / sigma;
    // the cell probability and the Gaussian moments are invariant under
    // (u, v) -> (-v, -u), so fold the lower tail onto the upper one
    if v <= 0.0 {
        (u, v) = (-v, -u);
    }
    let (log_scale, pi, g1, g3) = if u > SCALED_SWITCH {
        let r = if v.is_infinite() { 0.0 } else { (-(v - u) * (v + u)).exp() };
        let pi = 0.5 * (erfcx(u) - r * if v.is_infinite() { 0.0 } else { erfcx(v) });
        let (g1, g3) = if v.is_infinite() {
            (u, u * u * u)
        } else {
            (u - r * v, u * u * u - r * v * v * v)
        };
        (-u * u, pi, g1, g3)
    } else {
        let pi = if u >= 0.0 {
            0.5 * (erfc(u) - erfc(v))
        } else {
            0.5 * (erf(v) - erf(u))
        };
        (
            0.0,
            pi,
            gauss_moment(u, 1) - gauss_moment(v, 1),
            gauss_moment(u, 3) - gauss_moment(v, 3),
        )
    };
    let a = link.dsigma2;
    let s2 = link.sigma2;
    let eta = a / (2.0 * PI.sqrt() * s2) * g1;
    let q = a / (PI.sqrt() * s2) * g3;
    let tau = link.slope * eta + a / (2.0 * s2) * (q - 3.0 * eta);
    ScaledCell {
        log_scale,
        pi,
        eta,
        tau,
    }
}

/// Survival `1 - F(x_star)` and its first two alpha-derivatives, scaled by
/// `exp(log_scale)`.
#[derive(Debug, Clone, Copy)]
struct ScaledSurvival {
    log_scale: f64,
    surv: f64,
    omega: f64,
    xi: f64,
}

fn survival_terms(e_star: f64, link: &LinkTerms) -> ScaledSurvival {
    if e_star == f64::NEG_INFINITY {
        return ScaledSurvival {
            log_scale: 0.0,
            surv: 1.0,
            omega: 0.0,
            xi: 0.0,
        };
    }
    let w = e_star / link.sigma;
    let (log_scale, surv, gw) = if w > SCALED_SWITCH {
        (-w * w, 0.5 * erfcx(w), w)
    } else {
        (0.0, 0.5 * erfc(w), gauss_moment(w, 1))
    };
    let a = link.dsigma2;
    let s2 = link.sigma2;
    let omega = a / (2.0 * PI.sqrt() * s2) * gw;
    let xi = omega * (link.slope + a / (2.0 * s2) * (2.0 * w * w - 3.0));
    ScaledSurvival {
        log_scale,
        surv,
        omega,
        xi,
    }
}

fn finish_cell(log_scale: f64, pi: f64, eta: f64, tau: f64) -> Contribution {
    // with the tail scaling a cell only fails to be representable when its
    // scaled probability is itself degenerate
    if !(pi > 0.0 && pi.is_finite()) {
        return Contribution {
            loglik: PROB_FLOOR.ln(),
            d1: 0.0,
            d2: 0.0,
            floored: true,
        };
    }
    let d1 = eta / pi;
    Contribution {
        loglik: log_scale + pi.ln(),
        d1,
        d2: tau / pi - d1 * d1,
        floored: false,
    }
}

fn coarse_contribution(grid: &IspdGrid, j: usize, link: &LinkTerms) -> Contribution {
    let c = cell_terms(grid.e_lower[j], grid.e_upper[j], link);
    finish_cell(c.log_scale, c.pi, c.eta, c.tau)
}

fn truncated_contribution(grid: &IspdGrid, j: usize, j_star: usize, link: &LinkTerms) -> Result<Contribution> {
    let c = cell_terms(grid.e_lower[j], grid.e_upper[j], link);
    let s = survival_terms(grid.e_lower[j_star], link);
    if s.log_scale + s.surv.ln() < f64::MIN_POSITIVE.ln() || !(s.surv > 0.0) {
        return Err(Error::SurvivalUnderflow { sigma: link.sigma });
    }
    // renormalised cell: pi* = pi / S with the chain rule through S
    let pi_star = c.pi / s.surv;
    let eta_star = (c.eta - pi_star * s.omega) / s.surv;
    let tau_star = (c.tau - 2.0 * eta_star * s.omega - pi_star * s.xi) / s.surv;
    Ok(finish_cell(c.log_scale - s.log_scale, pi_star, eta_star, tau_star))
}

/// Evaluate log-likelihood, score and Hessian of `lik` at `theta`.
pub fn evaluate(lik: LikelihoodKind, theta: &ModelTheta, cohort: &Cohort) -> Result<Evaluation> {
    cohort.check_kind(lik)?;
    let mut out = Evaluation {
        loglik: 0.0,
        score: [0.0; 2],
        hessian: [[0.0; 2]; 2],
        floored: 0,
    };
    for &i in &cohort.order {
        let (rec, ctx) = (&cohort.records[i], &cohort.contexts[i]);
        let link = LinkTerms::at(theta, ctx);
        let c = match (lik, rec.observation) {
            (LikelihoodKind::Scaled, Observation::ScaledAvg(z)) => scaled_contribution(z, &link),
            (LikelihoodKind::Coarse, Observation::IspdCell(j)) => coarse_contribution(&cohort.grid, j, &link),
            (LikelihoodKind::CoarseTruncated, Observation::IspdCell(j)) => {
                let j_star = cohort.truncation.expect("checked by check_kind");
                truncated_contribution(&cohort.grid, j, j_star, &link)?
            }
            _ => unreachable!("observation kind checked by check_kind"),
        };
        let m = link.nm1;
        out.loglik += c.loglik;
        out.score[0] += c.d1;
        out.score[1] += m * c.d1;
        out.hessian[0][0] += c.d2;
        out.hessian[0][1] += m * c.d2;
        out.hessian[1][1] += m * m * c.d2;
        out.floored += usize::from(c.floored);
    }
    out.hessian[1][0] = out.hessian[0][1];
    Ok(out)
}

/// Log-likelihood as a function of `theta` only; reports the first
/// department whose cell probability underflows.
pub fn loglik(lik: LikelihoodKind, theta: &ModelTheta, cohort: &Cohort) -> Result<f64> {
    let ev = evaluate(lik, theta, cohort)?;
    if ev.floored > 0 {
        return Err(first_floored(lik, theta, cohort));
    }
    Ok(ev.loglik)
}

fn first_floored(lik: LikelihoodKind, theta: &ModelTheta, cohort: &Cohort) -> Error {
    for (rec, ctx) in cohort.records.iter().zip(&cohort.contexts) {
        if let Observation::IspdCell(j) = rec.observation {
            let link = LinkTerms::at(theta, ctx);
            let c = match (lik, cohort.truncation) {
                (LikelihoodKind::CoarseTruncated, Some(t)) => truncated_contribution(&cohort.grid, j, t, &link),
                _ => Ok(coarse_contribution(&cohort.grid, j, &link)),
            };
            if c.map(|c| c.floored).unwrap_or(true) {
                return Error::ZeroProbabilityCell {
                    dept_id: rec.id.clone(),
                    value: IspdGrid::value(j),
                };
            }
        }
    }
    Error::InvalidInput("floored cell not found".into())
}

pub fn loglik_scaled(theta: &ModelTheta, cohort: &Cohort) -> Result<f64> {
    loglik(LikelihoodKind::Scaled, theta, cohort)
}

pub fn score_scaled(theta: &ModelTheta, cohort: &Cohort) -> Result<[f64; 2]> {
    Ok(evaluate(LikelihoodKind::Scaled, theta, cohort)?.score)
}

pub fn hessian_scaled(theta: &ModelTheta, cohort: &Cohort) -> Result<[[f64; 2]; 2]> {
    Ok(evaluate(LikelihoodKind::Scaled, theta, cohort)?.hessian)
}

pub fn loglik_coarse(theta: &ModelTheta, cohort: &Cohort) -> Result<f64> {
    loglik(LikelihoodKind::Coarse, theta, cohort)
}

pub fn score_coarse(theta: &ModelTheta, cohort: &Cohort) -> Result<[f64; 2]> {
    Ok(evaluate(LikelihoodKind::Coarse, theta, cohort)?.score)
}

pub fn hessian_coarse(theta: &ModelTheta, cohort: &Cohort) -> Result<[[f64; 2]; 2]> {
    Ok(evaluate(LikelihoodKind::Coarse, theta, cohort)?.hessian)
}

pub fn loglik_trunc(theta: &ModelTheta, cohort: &Cohort) -> Result<f64> {
    loglik(LikelihoodKind::CoarseTruncated, theta, cohort)
}

pub fn score_trunc(theta: &ModelTheta, cohort: &Cohort) -> Result<[f64; 2]> {
    Ok(evaluate(LikelihoodKind::CoarseTruncated, theta, cohort)?.score)
}

pub fn hessian_trunc(theta: &ModelTheta, cohort: &Cohort) -> Result<[[f64; 2]; 2]> {
    Ok(evaluate(LikelihoodKind::CoarseTruncated, theta, cohort)?.hessian)
}

/// Probability that a department of the given size lands in grid cell `j`
/// (0-based).
pub fn cell_prob(theta: &ModelTheta, ctx: &SizeContext, grid: &IspdGrid, j: usize) -> f64 {
    let link = LinkTerms::at(theta, ctx);
    let c = cell_terms(grid.e_lower[j], grid.e_upper[j], &link);
    c.pi * c.log_scale.exp()
}

/// Cell probability renormalised to the cells at or above `j_star`.
pub fn cell_prob_trunc(
    theta: &ModelTheta,
    ctx: &SizeContext,
    grid: &IspdGrid,
    j: usize,
    j_star: usize,
) -> Result<f64> {
    if j < j_star {
        return Ok(0.0);
    }
    let link = LinkTerms::at(theta, ctx);
    let c = cell_terms(grid.e_lower[j], grid.e_upper[j], &link);
    let s = survival_terms(grid.e_lower[j_star], &link);
    if s.log_scale + s.surv.ln() < f64::MIN_POSITIVE.ln() {
        return Err(Error::SurvivalUnderflow { sigma: link.sigma });
    }
    Ok(c.pi / s.surv * (c.log_scale - s.log_scale).exp())
}

/// `ln(1 - F(x; sigma))` from the cached bound `e(x)`; used by tests and
/// diagnostics.
pub fn log_survival(e_x: f64, sigma: f64) -> f64 {
    let w = e_x / sigma;
    if w >= 0.0 {
        ln_erfc(w) - std::f64::consts::LN_2
    } else {
        (0.5 * erfc(w)).ln()
    }
}
