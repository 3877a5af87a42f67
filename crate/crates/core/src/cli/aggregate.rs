use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use super::{create_file, ensure_dir, parse_list, write_json};
use crate::amp::{write_trace_csv, AmpConfig, OnsagerMode, ThresholdMode};
use crate::cv::{default_grid, CvConfig};
use crate::error::{Error, Result};
use crate::matrix::{format_f64, Orientation, PredictionMatrix};
use crate::pipeline::{u_aggregate, Aggregation, PipelineConfig};

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregateArgs {
    /// Prediction matrix CSV; the first row and column hold ids.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value = "uagg_out")]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Orientation::ModelsAsRows)]
    pub orientation: Orientation,
    /// Center each row before normalizing.
    #[arg(long)]
    pub center: bool,
    /// Fixed sparsity ratio; cross-validation is used when absent.
    #[arg(long, conflicts_with = "cv")]
    pub omega: Option<f64>,
    /// Select omega by K-fold cross-validation (the default).
    #[arg(long)]
    pub cv: bool,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Comma-separated candidate omegas, default 0.1,0.2,...,0.9.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = OnsagerMode::Derivative)]
    pub onsager: OnsagerMode,
    #[arg(long, value_enum, default_value_t = ThresholdMode::Quantile)]
    pub threshold: ThresholdMode,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

impl Default for AggregateArgs {
    fn default() -> Self {
        Self {
            input: None,
            out_dir: PathBuf::from("uagg_out"),
            orientation: Orientation::ModelsAsRows,
            center: false,
            omega: None,
            cv: false,
            folds: 5,
            grid: None,
            seed: 0,
            max_iters: 100,
            tol: 1e-6,
            onsager: OnsagerMode::Derivative,
            threshold: ThresholdMode::Quantile,
            config: None,
        }
    }
}

impl AggregateArgs {
    pub(crate) fn amp_config(&self) -> AmpConfig {
        AmpConfig {
            omega: self.omega.unwrap_or(0.5),
            max_iters: self.max_iters,
            tol: self.tol,
            onsager_mode: self.onsager,
            threshold_mode: self.threshold,
            ..AmpConfig::default()
        }
    }

    pub(crate) fn pipeline_config(&self) -> Result<PipelineConfig> {
        if self.omega.is_some() && self.cv {
            return Err(Error::InvalidConfig("--omega and --cv are mutually exclusive".into()));
        }
        let amp = self.amp_config();
        let mut config = match self.omega {
            Some(w) => PipelineConfig { amp, ..PipelineConfig::fixed(w) },
            None => {
                let grid = match &self.grid {
                    Some(g) => parse_list(g, "grid")?,
                    None => default_grid(),
                };
                let cv = CvConfig { folds: self.folds, grid, seed: self.seed, amp, center: self.center };
                cv.validate()?;
                PipelineConfig::cross_validated(cv)
            }
        };
        config.center = self.center;
        Ok(config)
    }
}

pub(crate) fn read_matrix(path: &Option<PathBuf>, orientation: Orientation) -> Result<PredictionMatrix> {
    let path = path.as_ref().ok_or_else(|| Error::InvalidConfig("--input is required".into()))?;
    let file = File::open(path).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    PredictionMatrix::read_csv(BufReader::new(file), orientation)
}

#[derive(Serialize)]
struct Report<'a> {
    omega_hat: f64,
    omega_selection: &'static str,
    iterations: usize,
    converged: bool,
    n_models: usize,
    n_samples: usize,
    nonzero_weights: usize,
    theta_bar: f64,
    warnings: &'a [String],
    trace_path: &'static str,
    cv_losses_path: Option<&'static str>,
}

/// Writes `v_hat.csv`, `u_hat.csv`, `trace.csv`, `report.json` and, with CV, `cv_losses.csv`.
pub(crate) fn write_outputs(y: &PredictionMatrix, agg: &Aggregation, out_dir: &std::path::Path) -> Result<()> {
    ensure_dir(out_dir)?;
    let res = &agg.result;

    let mut wtr = csv::Writer::from_writer(create_file(out_dir, "v_hat.csv")?);
    wtr.write_record(["sample_id", "score"])?;
    for (id, s) in y.sample_ids().iter().zip(&res.v_hat) {
        wtr.write_record([id.as_str(), &format_f64(*s)])?;
    }
    wtr.flush()?;

    let mut order: Vec<usize> = (0..res.u_hat.len()).collect();
    order.sort_by(|&a, &b| res.u_hat[b].total_cmp(&res.u_hat[a]).then(a.cmp(&b)));
    let mut rank = vec![0; order.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r + 1;
    }
    let mut wtr = csv::Writer::from_writer(create_file(out_dir, "u_hat.csv")?);
    wtr.write_record(["model_id", "weight", "rank"])?;
    for (i, id) in y.model_ids().iter().enumerate() {
        wtr.write_record([id.as_str(), &format_f64(res.u_hat[i]), &rank[i].to_string()])?;
    }
    wtr.flush()?;

    write_trace_csv(&res.trace, create_file(out_dir, "trace.csv")?)?;
    if let Some(cv) = &agg.cv {
        cv.write_loss_csv(create_file(out_dir, "cv_losses.csv")?)?;
    }

    let report = Report {
        omega_hat: res.omega_used,
        omega_selection: if agg.cv.is_some() { "cross-validation" } else { "fixed" },
        iterations: res.iterations_run,
        converged: res.converged,
        n_models: y.n_models(),
        n_samples: y.n_samples(),
        nonzero_weights: res.u_hat.iter().filter(|x| **x != 0.0).count(),
        theta_bar: agg.stabilized.theta_bar,
        warnings: &res.warnings,
        trace_path: "trace.csv",
        cv_losses_path: agg.cv.as_ref().map(|_| "cv_losses.csv"),
    };
    write_json(out_dir, "report.json", &report)
}

pub fn run(args: AggregateArgs) -> Result<()> {
    let config = args.pipeline_config()?;
    let y = read_matrix(&args.input, args.orientation)?;
    let agg = u_aggregate(&y, &config)?;
    for w in &agg.result.warnings {
        log::warn!("{w}");
    }
    write_outputs(&y, &agg, &args.out_dir)?;
    println!(
        "omega = {}, {} of {} models weighted, {} iterations",
        agg.result.omega_used,
        agg.result.u_hat.iter().filter(|x| **x != 0.0).count(),
        y.n_models(),
        agg.result.iterations_run
    );
    Ok(())
}
