use clap::{Args, ValueEnum};
use ispd_core::betoidal::{self, BetoidalParam, LTBetoidalParam};

use crate::error::{CliError, CliResult};
use crate::output::real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Function {
    Pdf,
    Cdf,
    Quantile,
    Var,
}

#[derive(Debug, Args)]
pub struct DistArgs {
    #[arg(value_enum)]
    pub function: Function,
    #[arg(long)]
    pub sigma: f64,
    /// Left-truncation point x* in (0, 1)
    #[arg(long)]
    pub trunc: Option<f64>,
    /// Comma-separated evaluation points
    #[arg(long, allow_hyphen_values = true)]
    pub at: Option<String>,
}

fn points(at: &str) -> CliResult<Vec<f64>> {
    at.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Input(format!("--at: '{}' is not a number", s.trim())))
        })
        .collect()
}

/// Two-column table of the requested function.
pub fn table(args: &DistArgs) -> CliResult<String> {
    let base = BetoidalParam::new(args.sigma)?;
    let lt = args.trunc.map(|x| LTBetoidalParam::new(args.sigma, x)).transpose()?;
    if args.function == Function::Var {
        if lt.is_some() {
            return Err(CliError::Input("var is only available for the untruncated law".into()));
        }
        return Ok(format!("sigma,var\n{},{}\n", real(args.sigma), real(betoidal::variance(&base))));
    }
    let at = args
        .at
        .as_deref()
        .ok_or_else(|| CliError::Input("--at is required for pdf, cdf and quantile".into()))?;
    let (name, f): (&str, Box<dyn Fn(f64) -> ispd_core::Result<f64>>) = match (args.function, &lt) {
        (Function::Pdf, None) => ("pdf", Box::new(|x| betoidal::pdf(x, &base))),
        (Function::Cdf, None) => ("cdf", Box::new(|x| betoidal::cdf(x, &base))),
        (Function::Quantile, None) => ("quantile", Box::new(|q| betoidal::quantile(q, &base))),
        (Function::Pdf, Some(p)) => ("pdf", Box::new(move |x| betoidal::lt_pdf(x, p))),
        (Function::Cdf, Some(p)) => ("cdf", Box::new(move |x| betoidal::lt_cdf(x, p))),
        (Function::Quantile, Some(p)) => ("quantile", Box::new(move |q| betoidal::lt_quantile(q, p))),
        (Function::Var, _) => unreachable!(),
    };
    let mut out = format!("{},{name}\n", if args.function == Function::Quantile { "q" } else { "x" });
    for x in points(at)? {
        out += &format!("{},{}\n", real(x), real(f(x)?));
    }
    Ok(out)
}

pub fn run(args: &DistArgs) -> CliResult<()> {
    print!("{}", table(args)?);
    Ok(())
}
