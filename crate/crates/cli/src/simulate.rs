use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use ispd_core::indices::IndexValue;
use ispd_core::likelihoods::{IspdGrid, GRID_SIZE};
use ispd_core::simgen::{sizes_from_summary, PerturbationLevel, SizeSummary};
use ispd_core::simstudy::{run_scenario, summarize, IndexKind, ScenarioConfig, ScenarioResult};
use ispd_core::ModelTheta;

use crate::error::{CliError, CliResult};
use crate::input::{parse_pair, read_sizes};
use crate::output::{real, RunManifest};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Perturbation level: null, small, medium or large
    #[arg(long, value_parser = parse_level)]
    pub scenario: PerturbationLevel,
    #[arg(long)]
    pub reps: usize,
    #[arg(long)]
    pub seed: u64,
    /// CSV with an n_products column (default: 766 sizes matched to the 2017 summary)
    #[arg(long)]
    pub sizes: Option<PathBuf>,
    /// Generating parameters as A,B (default 3.752,-0.00376)
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<String>,
    #[arg(long)]
    pub n_max: Option<u32>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_level(s: &str) -> Result<PerturbationLevel, String> {
    s.parse().map_err(|e: ispd_core::Error| e.to_string())
}

const Z_EDGE: f64 = 5.0;
const Z_BIN: f64 = 0.25;

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn index_histogram(path: &Path, counts: &[u64]) -> CliResult<()> {
    let grid = IspdGrid::new();
    write_csv(
        path,
        &["ispd", "lower", "upper", "count"],
        (0..GRID_SIZE).map(|j| {
            vec![
                IndexValue::from_half_points(j as u16).unwrap().to_string(),
                real(grid.lower(j)),
                real(grid.upper(j)),
                counts[j].to_string(),
            ]
        }),
    )
}

// standardized scaled averages of the smallest and largest department
fn extremes_histogram(path: &Path, res: &ScenarioResult) -> CliResult<()> {
    let nbins = (2.0 * Z_EDGE / Z_BIN) as usize;
    let mut counts = vec![[0u64; 2]; nbins + 2];
    for r in &res.replications {
        for (k, &z) in r.standardized_extremes.iter().enumerate() {
            let b = if z < -Z_EDGE {
                0
            } else if z >= Z_EDGE {
                nbins + 1
            } else {
                (((z + Z_EDGE) / Z_BIN) as usize).min(nbins - 1) + 1
            };
            counts[b][k] += 1;
        }
    }
    write_csv(
        path,
        &["lower", "upper", "smallest", "largest"],
        counts.iter().enumerate().map(|(b, c)| {
            let (lo, hi) = match b {
                0 => (f64::NEG_INFINITY, -Z_EDGE),
                _ if b == nbins + 1 => (Z_EDGE, f64::INFINITY),
                _ => (-Z_EDGE + (b - 1) as f64 * Z_BIN, -Z_EDGE + b as f64 * Z_BIN),
            };
            vec![real(lo), real(hi), c[0].to_string(), c[1].to_string()]
        }),
    )
}

fn write_outputs(dir: &Path, res: &ScenarioResult, manifest: &mut RunManifest) -> CliResult<()> {
    let reps = dir.join("replications.csv");
    write_csv(
        &reps,
        &["replication", "index_kind", "mad", "pdc"],
        res.replications.iter().flat_map(|r| {
            r.metrics
                .iter()
                .map(|m| vec![r.replication.to_string(), m.kind.name().into(), real(m.mad), real(m.pdc)])
        }),
    )?;

    let fits = dir.join("fits.csv");
    write_csv(
        &fits,
        &["replication", "alpha_hat", "beta_hat", "rho_rim", "fit_error"],
        res.replications.iter().map(|r| {
            let (a, b) = r
                .theta_hat
                .map_or((String::new(), String::new()), |t| (real(t.alpha), real(t.beta)));
            vec![
                r.replication.to_string(),
                a,
                b,
                real(r.rho_rim),
                r.fit_error.clone().unwrap_or_default(),
            ]
        }),
    )?;

    let summary = dir.join("summary.csv");
    let mut rows = Vec::new();
    for (metric, pdc) in [("mad", false), ("pdc", true)] {
        for kind in IndexKind::ALL {
            let v: Vec<f64> = res
                .metric_values(kind, pdc)
                .into_iter()
                .filter(|x| !x.is_nan())
                .collect();
            let mut row = vec![metric.to_string(), kind.name().to_string(), v.len().to_string()];
            if v.is_empty() {
                row.extend(std::iter::repeat_n(String::new(), 6));
            } else {
                let s = summarize(&v)?;
                row.extend([s.min, s.q1, s.q2, s.mean, s.q3, s.max].map(real));
            }
            rows.push(row);
        }
    }
    write_csv(
        &summary,
        &["metric", "index_kind", "n", "min", "q1", "q2", "mean", "q3", "max"],
        rows,
    )?;

    let h_orig = dir.join("histogram_ispd.csv");
    index_histogram(&h_orig, &res.pooled_histogram(false))?;
    let h_fcm = dir.join("histogram_ispd_fcm.csv");
    index_histogram(&h_fcm, &res.pooled_histogram(true))?;
    let h_z = dir.join("histogram_standardized.csv");
    extremes_histogram(&h_z, res)?;

    for p in [&reps, &fits, &summary, &h_orig, &h_fcm, &h_z] {
        manifest.output(p)?;
    }
    Ok(())
}

pub fn run(args: &SimulateArgs) -> CliResult<()> {
    if args.reps == 0 {
        return Err(CliError::Input("--reps must be at least 1".into()));
    }
    let sizes = match &args.sizes {
        Some(p) => read_sizes(p)?,
        None => sizes_from_summary(&SizeSummary::Y2017, 766)?,
    };
    let mut cfg = ScenarioConfig::new(args.scenario, args.reps, args.seed, sizes);
    if let Some(t) = &args.theta {
        let (a, b) = parse_pair(t).map_err(|e| CliError::Input(format!("--theta: {e}")))?;
        cfg.theta0 = ModelTheta::new(a, b)?;
    }
    cfg.n_max = args.n_max;
    let res = run_scenario(&cfg)?;

    fs::create_dir_all(&args.out)?;
    let mut manifest = RunManifest::new("simulate", Some(args.seed), serde_json::to_value(&cfg)?);
    if let Some(p) = &args.sizes {
        manifest.input(p)?;
    }
    write_outputs(&args.out, &res, &mut manifest)?;
    manifest.write(&args.out.join("manifest.json"))?;

    let failed = res.failed_fits();
    if failed > 0 {
        eprintln!("warning: FCM fit failed in {failed} of {} replications", args.reps);
    }
    if res.capped_departments > 0 {
        eprintln!(
            "note: {} department draws used a capped partial cluster",
            res.capped_departments
        );
    }
    println!("{:<8} {:>10} {:>10}", "index", "mean MAD", "mean PDC");
    for kind in IndexKind::ALL {
        let m = |pdc| {
            let v: Vec<f64> = res.metric_values(kind, pdc).into_iter().filter(|x| !x.is_nan()).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        println!("{:<8} {:>10.4} {:>10.4}", kind.name(), m(false), m(true));
    }
    Ok(())
}
