use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use ispd_core::corrmodel::{rho_d, sigma_d};
use ispd_core::estimation::{fit, lrt, wald_test, FitConfig, FitResult, Param, Sidedness, TestResult};
use ispd_core::simstudy::{summarize, SummaryRow};
use ispd_core::{Cohort, CorrelationModelKind, LikelihoodKind, ModelTheta};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::input::{parse_pair, read_cohort, Column};
use crate::output::{emit, RunManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Exact scaled averages (`scaled_avg` column)
    Micro,
    /// Rounded ISPD values (`ispd` column)
    Coarse,
    /// Rounded ISPD values above a truncation point
    CoarseTrunc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Fcm,
    Ccm,
    Ncm,
}

impl From<Model> for CorrelationModelKind {
    fn from(m: Model) -> Self {
        match m {
            Model::Fcm => CorrelationModelKind::Fcm,
            Model::Ccm => CorrelationModelKind::Ccm,
            Model::Ncm => CorrelationModelKind::Ncm,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Cohort CSV (dept_id, n_products, and scaled_avg or ispd)
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Mode,
    #[arg(long, value_enum, default_value = "fcm")]
    pub model: Model,
    /// Largest department size of the full cohort (default: largest in the file)
    #[arg(long)]
    pub n_max: Option<u32>,
    /// Truncation grid value for coarse-trunc (default 73)
    #[arg(long)]
    pub trunc: Option<f64>,
    /// Start points as `A,B;A,B;...` (default: a 6 x 4 grid)
    #[arg(long)]
    pub starts: Option<String>,
    /// Write the JSON report here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Report {
    model: Model,
    mode: Mode,
    likelihood: LikelihoodKind,
    n_departments: usize,
    n_max: u32,
    truncation: Option<f64>,
    alpha: f64,
    se_alpha: Option<f64>,
    p_alpha: Option<f64>,
    beta: f64,
    se_beta: Option<f64>,
    p_beta: Option<f64>,
    loglik: f64,
    lrt_vs_ncm: Option<TestResult>,
    lrt_vs_ccm: Option<TestResult>,
    rho: SummaryRow,
    sigma: SummaryRow,
    converged: bool,
    indefinite: bool,
    grad_norm: f64,
    iterations: usize,
    starts_used: usize,
    floored: usize,
}

pub fn parse_starts(spec: &str) -> CliResult<Vec<ModelTheta>> {
    let starts = spec
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let (a, b) = parse_pair(s).map_err(|e| CliError::Input(format!("--starts: {e}")))?;
            Ok(ModelTheta::new(a, b)?)
        })
        .collect::<CliResult<Vec<_>>>()?;
    if starts.is_empty() {
        return Err(CliError::Input("--starts: no start points given".into()));
    }
    Ok(starts)
}

fn wald(r: &FitResult, p: Param) -> Option<TestResult> {
    wald_test(r, p, 0.0, Sidedness::TwoSided).ok()
}

fn human(r: &Report) -> String {
    let mut s = String::new();
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    let _ = writeln!(
        s,
        "{} / {} likelihood, D = {}, N~ = {}",
        r.model.to_possible_value().unwrap().get_name(),
        serde_json::to_value(r.likelihood).unwrap().as_str().unwrap_or(""),
        r.n_departments,
        r.n_max
    );
    let _ = writeln!(s, "alpha  {:>10.4}  se {:>8}  p {:>8}", r.alpha, opt(r.se_alpha), opt(r.p_alpha));
    let _ = writeln!(s, "beta   {:>10.4}  se {:>8}  p {:>8}", r.beta, opt(r.se_beta), opt(r.p_beta));
    let _ = writeln!(s, "loglik {:>10.4}", r.loglik);
    for (name, t) in [("NCM", &r.lrt_vs_ncm), ("CCM", &r.lrt_vs_ccm)] {
        if let Some(t) = t {
            let _ = writeln!(s, "LRT vs {name}: {:.4} on {} df, p {:.4}", t.stat, t.df, t.p_value);
        }
    }
    for (name, row) in [("rho", &r.rho), ("sigma", &r.sigma)] {
        let _ = writeln!(
            s,
            "{name:<6} min {:.4}  Q1 {:.4}  Q2 {:.4}  mean {:.4}  Q3 {:.4}  max {:.4}",
            row.min, row.q1, row.q2, row.mean, row.q3, row.max
        );
    }
    s
}

pub fn run(args: &FitArgs) -> CliResult<()> {
    let file = read_cohort(&args.input)?;
    let (lik, truncation) = match (args.mode, file.column) {
        (Mode::Micro, Column::ScaledAvg) => (LikelihoodKind::Scaled, None),
        (Mode::Coarse, Column::Ispd) => (LikelihoodKind::Coarse, None),
        (Mode::CoarseTrunc, Column::Ispd) => (LikelihoodKind::CoarseTruncated, Some(args.trunc.unwrap_or(73.0))),
        (m, c) => {
            return Err(CliError::Input(format!(
                "mode {} does not match the '{}' column of {}",
                m.to_possible_value().unwrap().get_name(),
                c.name(),
                args.input.display()
            )))
        }
    };
    if args.trunc.is_some() && args.mode != Mode::CoarseTrunc {
        return Err(CliError::Input("--trunc only applies to --mode coarse-trunc".into()));
    }
    let n_max = args.n_max.unwrap_or_else(|| file.max_size());
    let cohort = Cohort::new(file.records, Some(n_max), truncation)?;

    let mut cfg = FitConfig::default();
    if let Some(s) = &args.starts {
        cfg.starts = parse_starts(s)?;
    }
    let kind: CorrelationModelKind = args.model.into();
    let main = fit(&cohort, kind, lik, &cfg)?;
    let nested = |k: CorrelationModelKind| -> CliResult<Option<TestResult>> {
        if k.free_params() >= kind.free_params() {
            return Ok(None);
        }
        let r = fit(&cohort, k, lik, &cfg)?;
        Ok(Some(lrt(&main, &r)?))
    };
    let lrt_vs_ncm = nested(CorrelationModelKind::Ncm)?;
    let lrt_vs_ccm = nested(CorrelationModelKind::Ccm)?;

    let rho: Vec<f64> = cohort.contexts().iter().map(|c| rho_d(&main.theta_hat, c)).collect();
    let sigma: Vec<f64> = cohort.contexts().iter().map(|c| sigma_d(&main.theta_hat, c)).collect();
    let (wa, wb) = (wald(&main, Param::Alpha), wald(&main, Param::Beta));
    let report = Report {
        model: args.model,
        mode: args.mode,
        likelihood: lik,
        n_departments: cohort.len(),
        n_max,
        truncation,
        alpha: main.theta_hat.alpha,
        se_alpha: main.std_errors.first().copied(),
        p_alpha: wa.map(|t| t.p_value),
        beta: main.theta_hat.beta,
        se_beta: main.std_errors.get(1).copied(),
        p_beta: wb.map(|t| t.p_value),
        loglik: main.loglik,
        lrt_vs_ncm,
        lrt_vs_ccm,
        rho: summarize(&rho)?,
        sigma: summarize(&sigma)?,
        converged: main.converged,
        indefinite: main.indefinite,
        grad_norm: main.grad_norm,
        iterations: main.iterations,
        starts_used: main.n_starts_used,
        floored: main.floored,
    };
    eprint!("{}", human(&report));

    let mut manifest = RunManifest::new(
        "fit",
        None,
        serde_json::json!({
            "mode": args.mode,
            "model": args.model,
            "n_max": n_max,
            "truncation": truncation,
            "fit": cfg,
        }),
    );
    manifest.input(&args.input)?;
    emit(
        &(serde_json::to_string_pretty(&report)? + "\n"),
        args.out.as_deref(),
        manifest,
    )
}
