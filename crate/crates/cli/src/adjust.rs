use std::path::PathBuf;

use clap::Args;
use ispd_core::corrmodel::{rho_d, sigma_d};
use ispd_core::indices::{ispd_fcm, ispd_original};
use ispd_core::likelihoods::Observation;
use ispd_core::{ModelTheta, SizeContext};

use crate::error::{CliError, CliResult};
use crate::input::{parse_pair, read_cohort, Column};
use crate::output::{emit, real, RunManifest};

#[derive(Debug, Args)]
pub struct AdjustArgs {
    /// Cohort CSV with a scaled_avg column
    #[arg(long)]
    pub input: PathBuf,
    /// Correlation-model parameters as A,B
    #[arg(long, allow_hyphen_values = true)]
    pub theta: String,
    /// Largest department size of the cohort (default: largest in the file)
    #[arg(long)]
    pub n_max: Option<u32>,
    /// Write the CSV here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: &AdjustArgs) -> CliResult<()> {
    let (a, b) = parse_pair(&args.theta).map_err(|e| CliError::Input(format!("--theta: {e}")))?;
    let theta = ModelTheta::new(a, b)?;
    let file = read_cohort(&args.input)?;
    if file.column != Column::ScaledAvg {
        return Err(CliError::Input(format!(
            "{}: adjust needs a 'scaled_avg' column",
            args.input.display()
        )));
    }
    let n_max = args.n_max.unwrap_or_else(|| file.max_size());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["dept_id", "n_products", "ispd_original", "ispd_fcm", "rho_hat", "sigma_hat"])?;
    for r in &file.records {
        let Observation::ScaledAvg(z) = r.observation else {
            unreachable!("column checked above")
        };
        let ctx = SizeContext::new(r.size, n_max)?;
        w.write_record([
            r.id.clone(),
            r.size.to_string(),
            ispd_original(z).to_string(),
            ispd_fcm(z, &ctx, &theta).to_string(),
            real(rho_d(&theta, &ctx)),
            real(sigma_d(&theta, &ctx)),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    let mut manifest = RunManifest::new(
        "adjust",
        None,
        serde_json::json!({ "theta": theta, "n_max": n_max }),
    );
    manifest.input(&args.input)?;
    emit(&String::from_utf8_lossy(&bytes), args.out.as_deref(), manifest)
}
