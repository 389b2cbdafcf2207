//! Maximum-likelihood fitting of the correlation model, standard errors and
//! the Wald and likelihood-ratio tests.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrmodel::{CorrelationModelKind, ModelTheta};
use crate::error::{Error, Result};
use crate::likelihoods::{evaluate, Cohort, Evaluation, LikelihoodKind};
use crate::specfun::{chi2_sf, norm_cdf};

/// Slack allowed for a negative likelihood-ratio statistic.
pub const LRT_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Newton-Raphson with step halving.
    Newton,
    /// Quasi-Newton with backtracking line search.
    Bfgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub starts: Vec<ModelTheta>,
    pub grad_tol: f64,
    pub rel_loglik_tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    pub optimizer: Optimizer,
}

impl Default for FitConfig {
    fn default() -> Self {
        let mut starts = Vec::with_capacity(24);
        for a in 0..=5 {
            for &b in &[-0.02, -0.01, -0.005, 0.0] {
                starts.push(ModelTheta {
                    alpha: f64::from(a),
                    beta: b,
                });
            }
        }
        Self {
            starts,
            grad_tol: 1e-8,
            rel_loglik_tol: 1e-12,
            max_iter: 200,
            max_halvings: 40,
            optimizer: Optimizer::Newton,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.starts.is_empty() {
            return Err(Error::InvalidInput("fit needs at least one start point".into()));
        }
        if !(self.grad_tol > 0.0) || !(self.rel_loglik_tol > 0.0) {
            return Err(Error::InvalidInput("tolerances must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidInput("max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of one start of the multi-start search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StartDiagnostic {
    pub start: ModelTheta,
    pub theta: ModelTheta,
    pub loglik: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub kind: CorrelationModelKind,
    pub likelihood: LikelihoodKind,
    pub theta_hat: ModelTheta,
    pub loglik: f64,
    /// Standard errors of the free parameters (alpha, then beta).
    pub std_errors: Vec<f64>,
    /// Full 2x2 Hessian at the optimum.
    pub hessian: [[f64; 2]; 2],
    pub converged: bool,
    /// Negative Hessian of the free parameters is not positive definite.
    pub indefinite: bool,
    pub grad_norm: f64,
    pub n_starts_used: usize,
    pub iterations: usize,
    /// Departments whose cell probability was floored at the optimum.
    pub floored: usize,
    pub starts: Vec<StartDiagnostic>,
}

/// Log-likelihood, gradient and Hessian restricted to the free parameters.
#[derive(Debug, Clone, Copy)]
struct Local {
    ll: f64,
    g: [f64; 2],
    h: [[f64; 2]; 2],
}

struct Problem<'a> {
    cohort: &'a Cohort,
    lik: LikelihoodKind,
    dim: usize,
}

impl Problem<'_> {
    fn theta(&self, x: [f64; 2]) -> ModelTheta {
        ModelTheta {
            alpha: x[0],
            beta: if self.dim == 2 { x[1] } else { 0.0 },
        }
    }

    fn eval(&self, x: [f64; 2]) -> Result<(Local, Evaluation)> {
        if !x[0].is_finite() || !x[1].is_finite() {
            return Err(Error::NonConvergence("non-finite iterate".into()));
        }
        let ev = evaluate(self.lik, &self.theta(x), self.cohort)?;
        if !ev.loglik.is_finite() {
            return Err(Error::NonConvergence("non-finite log-likelihood".into()));
        }
        let mut local = Local {
            ll: ev.loglik,
            g: ev.score,
            h: ev.hessian,
        };
        if self.dim == 1 {
            local.g[1] = 0.0;
            local.h[0][1] = 0.0;
            local.h[1][0] = 0.0;
            local.h[1][1] = 0.0;
        }
        Ok((local, ev))
    }

    fn grad_norm(&self, l: &Local) -> f64 {
        l.g[..self.dim].iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Inverse of the negative Hessian of the free parameters, when it is
/// positive definite.
fn neg_inverse(h: &[[f64; 2]; 2], dim: usize) -> Option<[[f64; 2]; 2]> {
    if dim == 1 {
        return (h[0][0] < 0.0).then(|| [[-1.0 / h[0][0], 0.0], [0.0, 0.0]]);
    }
    let (a, b, d) = (-h[0][0], -h[0][1], -h[1][1]);
    let det = a * d - b * b;
    if a > 0.0 && det > 0.0 && det.is_finite() {
        Some([[d / det, -b / det], [-b / det, a / det]])
    } else {
        None
    }
}

fn mat_vec(m: &[[f64; 2]; 2], v: &[f64; 2]) -> [f64; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

// diagonally preconditioned ascent direction
fn fallback_direction(l: &Local, dim: usize) -> [f64; 2] {
    let mut d = [0.0; 2];
    for i in 0..dim {
        let s = l.h[i][i].abs();
        d[i] = if s > 0.0 && s.is_finite() { l.g[i] / s } else { l.g[i] };
    }
    d
}

struct StartOutcome {
    x: [f64; 2],
    local: Local,
    iterations: usize,
    converged: bool,
    message: Option<String>,
}

fn converged(p: &Problem, l: &Local, prev_ll: Option<f64>, cfg: &FitConfig) -> bool {
    let small_change = match prev_ll {
        None => true,
        Some(prev) => (l.ll - prev).abs() <= cfg.rel_loglik_tol * l.ll.abs().max(1.0),
    };
    p.grad_norm(l) < cfg.grad_tol && small_change
}

/// Backtracking along `d` from `x`; returns the first improving point.
fn line_search(p: &Problem, x: [f64; 2], l: &Local, d: [f64; 2], cfg: &FitConfig) -> Option<([f64; 2], Local)> {
    let mut t = 1.0;
    for _ in 0..=cfg.max_halvings {
        let y = [x[0] + t * d[0], x[1] + t * d[1]];
        if let Ok((ly, _)) = p.eval(y) {
            if ly.ll > l.ll {
                return Some((y, ly));
            }
        }
        t *= 0.5;
    }
    None
}

fn run_newton(p: &Problem, x0: [f64; 2], cfg: &FitConfig) -> Result<StartOutcome> {
    let (mut x, mut l) = (x0, p.eval(x0)?.0);
    let mut prev_ll = None;
    for it in 0..cfg.max_iter {
        if converged(p, &l, prev_ll, cfg) {
            return Ok(StartOutcome {
                x,
                local: l,
                iterations: it,
                converged: true,
                message: None,
            });
        }
        let newton = neg_inverse(&l.h, p.dim).map(|m| mat_vec(&m, &l.g));
        let mut step = newton.and_then(|d| line_search(p, x, &l, d, cfg));
        if step.is_none() {
            step = line_search(p, x, &l, fallback_direction(&l, p.dim), cfg);
        }
        match step {
            Some((y, ly)) => {
                prev_ll = Some(l.ll);
                x = y;
                l = ly;
            }
            None => {
                // no improving point: at the attainable optimum up to rounding
                let ok = p.grad_norm(&l) < cfg.grad_tol;
                return Ok(StartOutcome {
                    x,
                    local: l,
                    iterations: it,
                    converged: ok,
                    message: (!ok).then(|| "line search failed".to_string()),
                });
            }
        }
    }
    let ok = converged(p, &l, prev_ll, cfg);
    Ok(StartOutcome {
        x,
        local: l,
        iterations: cfg.max_iter,
        converged: ok,
        message: (!ok).then(|| "iteration limit reached".to_string()),
    })
}

fn run_bfgs(p: &Problem, x0: [f64; 2], cfg: &FitConfig) -> Result<StartOutcome> {
    let (mut x, mut l) = (x0, p.eval(x0)?.0);
    // inverse of the negative-Hessian approximation
    let diag = |l: &Local| {
        let mut m = [[0.0; 2]; 2];
        for i in 0..p.dim {
            let s = l.h[i][i].abs();
            m[i][i] = if s > 0.0 && s.is_finite() { 1.0 / s } else { 1.0 };
        }
        m
    };
    let mut b = neg_inverse(&l.h, p.dim).unwrap_or_else(|| diag(&l));
    let mut prev_ll = None;
    for it in 0..cfg.max_iter {
        if converged(p, &l, prev_ll, cfg) {
            return Ok(StartOutcome {
                x,
                local: l,
                iterations: it,
                converged: true,
                message: None,
            });
        }
        let mut d = mat_vec(&b, &l.g);
        if d[0] * l.g[0] + d[1] * l.g[1] <= 0.0 {
            b = diag(&l);
            d = mat_vec(&b, &l.g);
        }
        let step = line_search(p, x, &l, d, cfg).or_else(|| {
            b = diag(&l);
            line_search(p, x, &l, mat_vec(&b, &l.g), cfg)
        });
        let Some((y, ly)) = step else {
            let ok = p.grad_norm(&l) < cfg.grad_tol;
            return Ok(StartOutcome {
                x,
                local: l,
                iterations: it,
                converged: ok,
                message: (!ok).then(|| "line search failed".to_string()),
            });
        };
        // minimisation form: s = dx, q = change in the negative gradient
        let s = [y[0] - x[0], y[1] - x[1]];
        let q = [l.g[0] - ly.g[0], l.g[1] - ly.g[1]];
        let sq = s[0] * q[0] + s[1] * q[1];
        if sq > 1e-300 {
            let bq = mat_vec(&b, &q);
            let qbq = q[0] * bq[0] + q[1] * bq[1];
            for i in 0..2 {
                for j in 0..2 {
                    b[i][j] += (sq + qbq) * s[i] * s[j] / (sq * sq) - (bq[i] * s[j] + s[i] * bq[j]) / sq;
                }
            }
        }
        prev_ll = Some(l.ll);
        x = y;
        l = ly;
    }
    let ok = converged(p, &l, prev_ll, cfg);
    Ok(StartOutcome {
        x,
        local: l,
        iterations: cfg.max_iter,
        converged: ok,
        message: (!ok).then(|| "iteration limit reached".to_string()),
    })
}

fn std_errors_from(h: &[[f64; 2]; 2], dim: usize) -> Result<Vec<f64>> {
    let inv = neg_inverse(h, dim).ok_or(Error::SingularHessian)?;
    Ok((0..dim).map(|i| inv[i][i].sqrt()).collect())
}

/// Fit `kind` by maximising likelihood `lik` over the configured starts.
pub fn fit(cohort: &Cohort, kind: CorrelationModelKind, lik: LikelihoodKind, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    let dim = kind.free_params();
    if dim == 0 {
        let ev = evaluate(lik, &ModelTheta::NULL, cohort)?;
        return Ok(FitResult {
            kind,
            likelihood: lik,
            theta_hat: ModelTheta::NULL,
            loglik: ev.loglik,
            std_errors: Vec::new(),
            hessian: ev.hessian,
            converged: true,
            indefinite: false,
            grad_norm: 0.0,
            n_starts_used: 0,
            iterations: 0,
            floored: ev.floored,
            starts: Vec::new(),
        });
    }
    let problem = Problem { cohort, lik, dim };
    let mut starts: Vec<ModelTheta> = Vec::new();
    for s in &cfg.starts {
        let c = kind.constrain(*s);
        if !starts.contains(&c) {
            starts.push(c);
        }
    }
    let outcomes: Vec<Result<StartOutcome>> = starts
        .par_iter()
        .map(|s| {
            let x0 = [s.alpha, s.beta];
            match cfg.optimizer {
                Optimizer::Newton => run_newton(&problem, x0, cfg),
                Optimizer::Bfgs => run_bfgs(&problem, x0, cfg),
            }
        })
        .collect();

    let mut diagnostics = Vec::with_capacity(starts.len());
    let mut best: Option<(usize, &StartOutcome)> = None;
    for (i, (s, o)) in starts.iter().zip(&outcomes).enumerate() {
        match o {
            Ok(o) => {
                diagnostics.push(StartDiagnostic {
                    start: *s,
                    theta: problem.theta(o.x),
                    loglik: o.local.ll,
                    grad_norm: problem.grad_norm(&o.local),
                    iterations: o.iterations,
                    converged: o.converged,
                    message: o.message.clone(),
                });
                // strict comparison keeps the lowest index on ties
                if o.converged && best.is_none_or(|(_, b)| o.local.ll > b.local.ll) {
                    best = Some((i, o));
                }
            }
            Err(e) => diagnostics.push(StartDiagnostic {
                start: *s,
                theta: *s,
                loglik: f64::NAN,
                grad_norm: f64::NAN,
                iterations: 0,
                converged: false,
                message: Some(e.to_string()),
            }),
        }
    }
    let Some((_, o)) = best else {
        let detail: Vec<String> = diagnostics
            .iter()
            .map(|d| {
                format!(
                    "start ({}, {}): {}",
                    d.start.alpha,
                    d.start.beta,
                    d.message.as_deref().unwrap_or("not converged")
                )
            })
            .collect();
        return Err(Error::NonConvergence(format!(
            "no start converged for {} / {:?}; {}",
            kind.name(),
            lik,
            detail.join("; ")
        )));
    };
    let (_, ev) = problem.eval(o.x)?;
    let se = std_errors_from(&o.local.h, dim);
    Ok(FitResult {
        kind,
        likelihood: lik,
        theta_hat: problem.theta(o.x),
        loglik: o.local.ll,
        indefinite: se.is_err(),
        std_errors: se.unwrap_or_default(),
        hessian: ev.hessian,
        converged: true,
        grad_norm: problem.grad_norm(&o.local),
        n_starts_used: starts.len(),
        iterations: o.iterations,
        floored: ev.floored,
        starts: diagnostics,
    })
}

/// Square roots of the diagonal of the inverse negative Hessian of the free
/// parameters.
pub fn std_errors(result: &FitResult) -> Result<Vec<f64>> {
    if !result.converged {
        return Err(Error::NonConvergence("fit did not converge".into()));
    }
    std_errors_from(&result.hessian, result.kind.free_params())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Param {
    Alpha,
    Beta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sidedness {
    TwoSided,
    /// Alternative: parameter below the null value.
    Less,
    /// Alternative: parameter above the null value.
    Greater,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestResult {
    pub stat: f64,
    pub df: u32,
    pub p_value: f64,
}

/// p-value of a standard normal statistic.
pub fn normal_p_value(z: f64, side: Sidedness) -> f64 {
    match side {
        Sidedness::TwoSided => 2.0 * norm_cdf(-z.abs()),
        Sidedness::Less => norm_cdf(z),
        Sidedness::Greater => norm_cdf(-z),
    }
}

pub fn wald_test(result: &FitResult, param: Param, null_value: f64, side: Sidedness) -> Result<TestResult> {
    let (idx, est) = match param {
        Param::Alpha => (0, result.theta_hat.alpha),
        Param::Beta => (1, result.theta_hat.beta),
    };
    let se = *result
        .std_errors
        .get(idx)
        .ok_or_else(|| Error::InvalidInput(format!("no standard error for {param:?} under {}", result.kind.name())))?;
    let z = (est - null_value) / se;
    Ok(TestResult {
        stat: z,
        df: 1,
        p_value: normal_p_value(z, side),
    })
}

/// Likelihood-ratio test from two maximised log-likelihoods.
pub fn lrt_from_logliks(loglik_full: f64, loglik_nested: f64, df: u32) -> Result<TestResult> {
    if df == 0 {
        return Err(Error::InvalidInput("LRT needs a positive difference in free parameters".into()));
    }
    let stat = 2.0 * (loglik_full - loglik_nested);
    if stat < -LRT_SLACK || !stat.is_finite() {
        return Err(Error::NonConvergence(format!(
            "negative likelihood-ratio statistic {stat}: the full model was not maximised"
        )));
    }
    let stat = stat.max(0.0);
    Ok(TestResult {
        stat,
        df,
        p_value: chi2_sf(stat, df)?,
    })
}

pub fn lrt(full: &FitResult, nested: &FitResult) -> Result<TestResult> {
    if full.likelihood != nested.likelihood {
        return Err(Error::InvalidInput("LRT compares fits of different likelihoods".into()));
    }
    let (pf, pn) = (full.kind.free_params(), nested.kind.free_params());
    if pf <= pn {
        return Err(Error::InvalidInput(format!(
            "{} is not nested in {}",
            nested.kind.name(),
            full.kind.name()
        )));
    }
    lrt_from_logliks(full.loglik, nested.loglik, (pf - pn) as u32)
}
