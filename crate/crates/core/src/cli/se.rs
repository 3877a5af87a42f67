use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{create_file, ensure_dir, parse_list};
use crate::error::{Error, Result};
use crate::matrix::format_f64;
use crate::state_evolution::{se_run, Expectation, SeConfig, SeTrace, TauPolicy};

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SeArgs {
    /// Comma-separated signal strengths.
    #[arg(long, default_value = "2")]
    pub lambda: String,
    /// Comma-separated aspect ratios d/n.
    #[arg(long, default_value = "0.3")]
    pub alpha: String,
    #[arg(long, default_value_t = 0.3)]
    pub omega: f64,
    /// `quantile` or a fixed nonnegative threshold.
    #[arg(long, default_value = "quantile")]
    pub tau: String,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    /// Use Monte Carlo expectations with this many draws instead of quadrature.
    #[arg(long)]
    pub mc_samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub mc_seed: u64,
    #[arg(long)]
    pub allow_below_threshold: bool,
    #[arg(long, default_value = "uagg_se")]
    pub out_dir: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

impl Default for SeArgs {
    fn default() -> Self {
        Self {
            lambda: "2".into(),
            alpha: "0.3".into(),
            omega: 0.3,
            tau: "quantile".into(),
            iters: 100,
            mc_samples: None,
            mc_seed: 0,
            allow_below_threshold: false,
            out_dir: PathBuf::from("uagg_se"),
            config: None,
        }
    }
}

impl SeArgs {
    fn configs(&self) -> Result<Vec<SeConfig>> {
        let tau_policy = if self.tau.eq_ignore_ascii_case("quantile") {
            TauPolicy::QuantileMatched
        } else {
            let t: f64 = self
                .tau
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("--tau must be `quantile` or a number, got `{}`", self.tau)))?;
            TauPolicy::Fixed(t)
        };
        let expectation = match self.mc_samples {
            Some(samples) => Expectation::MonteCarlo { samples, seed: self.mc_seed },
            None => Expectation::Quadrature,
        };
        let lambdas: Vec<f64> = parse_list(&self.lambda, "lambda")?;
        let alphas: Vec<f64> = parse_list(&self.alpha, "alpha")?;
        let mut out = Vec::with_capacity(lambdas.len() * alphas.len());
        for &lambda in &lambdas {
            for &alpha in &alphas {
                out.push(SeConfig {
                    tau_policy,
                    iters: self.iters,
                    expectation,
                    allow_below_threshold: self.allow_below_threshold,
                    ..SeConfig::new(lambda, alpha, self.omega)
                });
            }
        }
        Ok(out)
    }
}

/// Writes `se_trace.csv` (one row per iteration) and `se_summary.csv` (one row per sweep cell).
pub fn run(args: SeArgs) -> Result<()> {
    let configs = args.configs()?;
    let traces: Vec<SeTrace> = configs.par_iter().map(se_run).collect::<Result<_>>()?;
    ensure_dir(&args.out_dir)?;
    let f = format_f64;

    let mut wtr = csv::Writer::from_writer(create_file(&args.out_dir, "se_trace.csv")?);
    wtr.write_record([
        "lambda", "alpha", "omega", "t", "mu", "sigma", "mu_bar", "sigma_bar", "tau", "cos_v", "cos_u", "residual",
    ])?;
    for tr in &traces {
        let c = &tr.config;
        for r in &tr.rows {
            wtr.write_record([
                f(c.lambda),
                f(c.alpha),
                f(c.omega),
                r.t.to_string(),
                f(r.mu),
                f(r.sigma),
                f(r.mu_bar),
                f(r.sigma_bar),
                f(r.tau),
                f(r.cos_v),
                f(r.cos_u),
                f(r.residual),
            ])?;
        }
    }
    wtr.flush()?;

    let mut wtr = csv::Writer::from_writer(create_file(&args.out_dir, "se_summary.csv")?);
    wtr.write_record([
        "lambda", "alpha", "omega", "mu0", "sigma0", "iterations", "converged", "mu", "sigma", "mu_bar", "sigma_bar",
        "tau", "growth", "cos_v", "cos_u", "residual",
    ])?;
    for tr in &traces {
        let (c, p) = (&tr.config, &tr.fixed_point);
        wtr.write_record([
            f(c.lambda),
            f(c.alpha),
            f(c.omega),
            f(tr.mu0),
            f(tr.sigma0),
            tr.rows.len().to_string(),
            tr.converged.to_string(),
            f(p.mu),
            f(p.sigma),
            f(p.mu_bar),
            f(p.sigma_bar),
            f(p.tau),
            f(p.growth),
            f(p.cos_v),
            f(p.cos_u),
            f(p.residual),
        ])?;
    }
    wtr.flush()?;
    println!("{} state-evolution runs written", traces.len());
    Ok(())
}
