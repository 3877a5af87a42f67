use std::path::PathBuf;

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::parse_list;
use crate::amp::AmpConfig;
use crate::baselines::{hetero_pca_aggregate, pca_aggregate, simple_average, HETERO_MAX_ITERS, HETERO_TOL};
use crate::cv::{default_grid, CvConfig};
use crate::error::{Error, Result};
use crate::eval::{model_performance, pearson, weight_concordance};
use crate::matrix::{format_f64, PredictionMatrix};
use crate::pipeline::{u_aggregate, PipelineConfig};
use crate::stabilize::normalize_values;
use crate::synthgen::{generate, NoiseRegime, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Figure {
    /// d x omega x regime factorial grid at fixed n.
    Accuracy,
    /// d = 100, n = 1000, heteroskedastic, growing lambda.
    UWeights,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value_t = Figure::Accuracy)]
    pub fig: Figure,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Comma-separated model counts.
    #[arg(long)]
    pub d: Option<String>,
    /// Comma-separated true sparsity ratios.
    #[arg(long)]
    pub omega: Option<String>,
    /// Comma-separated noise regimes.
    #[arg(long)]
    pub regimes: Option<String>,
    /// Comma-separated signal strengths `||v||`; the drawn norm is kept when absent.
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Skip the cross-validated U-aggregation variant.
    #[arg(long)]
    pub no_cv: bool,
    #[arg(long, default_value = "simulation.csv")]
    pub out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

impl Default for SimulateArgs {
    fn default() -> Self {
        Self {
            fig: Figure::Accuracy,
            n: 1000,
            d: None,
            omega: None,
            regimes: None,
            lambda: None,
            replicates: 10,
            seed: 0,
            folds: 5,
            no_cv: false,
            out: PathBuf::from("simulation.csv"),
            config: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub d: usize,
    pub omega: f64,
    pub regime: NoiseRegime,
    pub lambda: Option<f64>,
}

impl SimulateArgs {
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let (d0, w0, r0, l0) = match self.fig {
            Figure::Accuracy => ("50,100,150,200", "0.1,0.3,0.5,0.7", "homoskedastic,heteroskedastic", None),
            Figure::UWeights => ("100", "0.3", "heteroskedastic", Some("1,2,3,4,5")),
        };
        let ds: Vec<usize> = parse_list(self.d.as_deref().unwrap_or(d0), "d")?;
        let omegas: Vec<f64> = parse_list(self.omega.as_deref().unwrap_or(w0), "omega")?;
        let regimes = self
            .regimes
            .as_deref()
            .unwrap_or(r0)
            .split(',')
            .map(|s| NoiseRegime::from_str(s.trim(), true).map_err(|_| Error::InvalidConfig(format!("bad regime `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        let lambdas: Vec<Option<f64>> = match self.lambda.as_deref().or(l0) {
            Some(s) => parse_list::<f64>(s, "lambda")?.into_iter().map(Some).collect(),
            None => vec![None],
        };
        let mut cells = Vec::new();
        for &regime in &regimes {
            for &d in &ds {
                for &omega in &omegas {
                    for &lambda in &lambdas {
                        cells.push(Cell { d, omega, regime, lambda });
                    }
                }
            }
        }
        Ok(cells)
    }
}

/// Estimates of one method on one matrix.
#[derive(Debug, Clone)]
pub struct MethodOutput {
    pub method: &'static str,
    pub v_hat: Vec<f64>,
    pub u_hat: Option<Vec<f64>>,
    pub omega_hat: Option<f64>,
}

/// Runs U-aggregation (fixed omega when `oracle_omega` is given, CV when
/// `cv` is given) and the three baselines.
pub fn run_methods(y: &PredictionMatrix, oracle_omega: Option<f64>, cv: Option<CvConfig>) -> Result<Vec<MethodOutput>> {
    let mut out = Vec::with_capacity(5);
    if let Some(w) = oracle_omega {
        let r = u_aggregate(y, &PipelineConfig::fixed(w))?.result;
        out.push(MethodOutput { method: "u_agg_oracle", v_hat: r.v_hat, u_hat: Some(r.u_hat), omega_hat: Some(w) });
    }
    if let Some(cv) = cv {
        let r = u_aggregate(y, &PipelineConfig::cross_validated(cv))?.result;
        out.push(MethodOutput { method: "u_agg_cv", v_hat: r.v_hat, u_hat: Some(r.u_hat), omega_hat: Some(r.omega_used) });
    }
    let (ybar, _) = normalize_values(y.values(), false);
    for b in [simple_average(&ybar), pca_aggregate(&ybar), hetero_pca_aggregate(&ybar, HETERO_MAX_ITERS, HETERO_TOL)] {
        out.push(MethodOutput { method: b.method.as_str(), v_hat: b.v_hat, u_hat: b.u_hat, omega_hat: None });
    }
    Ok(out)
}

/// Deterministic per-replicate seed.
pub(crate) fn replicate_seed(base: u64, cell: usize, replicate: usize) -> u64 {
    let mut z = base ^ ((cell as u64) << 32) ^ replicate as u64;
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRow {
    pub method: &'static str,
    pub d: usize,
    pub omega: f64,
    pub regime: NoiseRegime,
    pub lambda: f64,
    pub replicate: usize,
    pub cor_v: f64,
    pub weight_concordance: Option<f64>,
    pub omega_hat: Option<f64>,
}

pub fn simulate_cell(args: &SimulateArgs, cell: &Cell, seed: u64, replicate: usize) -> Result<Vec<SimRow>> {
    let mut cfg = SynthConfig::new(args.n, cell.d, cell.omega, cell.regime, seed);
    cfg.lambda = cell.lambda;
    let (y, truth) = generate(&cfg)?;
    let cv = (!args.no_cv).then(|| CvConfig {
        folds: args.folds,
        grid: default_grid(),
        seed,
        amp: AmpConfig::default(),
        center: false,
    });
    let (rho, _) = model_performance(&y, &truth.v)?;
    run_methods(&y, Some(cell.omega), cv)?
        .into_iter()
        .map(|m| {
            let cor_v = pearson(&m.v_hat, &truth.v).unwrap_or(0.0);
            let conc = m.u_hat.as_ref().and_then(|u| weight_concordance(u, &rho).ok());
            Ok(SimRow {
                method: m.method,
                d: cell.d,
                omega: cell.omega,
                regime: cell.regime,
                lambda: truth.lambda(),
                replicate,
                cor_v,
                weight_concordance: conc,
                omega_hat: m.omega_hat,
            })
        })
        .collect()
}

pub fn run(args: SimulateArgs) -> Result<()> {
    if args.replicates < 1 {
        return Err(Error::InvalidConfig("--replicates must be at least 1".into()));
    }
    let cells = args.cells()?;
    let jobs: Vec<(usize, usize)> =
        (0..cells.len()).flat_map(|c| (0..args.replicates).map(move |r| (c, r))).collect();
    let rows: Vec<Vec<SimRow>> = jobs
        .par_iter()
        .map(|&(c, r)| simulate_cell(&args, &cells[c], replicate_seed(args.seed, c, r), r))
        .collect::<Result<_>>()?;

    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut wtr = csv::Writer::from_path(&args.out)?;
    wtr.write_record(["method", "d", "omega", "regime", "lambda", "replicate", "cor_v", "weight_concordance", "omega_hat"])?;
    let opt = |x: Option<f64>| x.map(format_f64).unwrap_or_default();
    for r in rows.iter().flatten() {
        wtr.write_record([
            r.method.to_string(),
            r.d.to_string(),
            format_f64(r.omega),
            r.regime.as_str().to_string(),
            format_f64(r.lambda),
            r.replicate.to_string(),
            format_f64(r.cor_v),
            opt(r.weight_concordance),
            opt(r.omega_hat),
        ])?;
    }
    wtr.flush()?;
    println!("{} cells x {} replicates written to {}", cells.len(), args.replicates, args.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_is_factorial() {
        let cells = SimulateArgs::default().cells().unwrap();
        assert_eq!(cells.len(), 4 * 4 * 2);
        let weights = SimulateArgs { fig: Figure::UWeights, ..SimulateArgs::default() }.cells().unwrap();
        assert_eq!(weights.len(), 5);
        assert!(weights.iter().all(|c| c.d == 100 && c.regime == NoiseRegime::Heteroskedastic));
        assert_eq!(weights[4].lambda, Some(5.0));
    }

    #[test]
    fn replicate_seeds_differ() {
        let s: std::collections::HashSet<u64> =
            (0..10).flat_map(|c| (0..10).map(move |r| replicate_seed(7, c, r))).collect();
        assert_eq!(s.len(), 100);
    }
}
