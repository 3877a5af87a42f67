use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use super::aggregate::read_matrix;
use super::simulate::run_methods;
use super::{create_file, ensure_dir, write_json};
use crate::amp::AmpConfig;
use crate::cv::{default_grid, CvConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::matrix::{format_f64, Orientation};

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// CSV with header `sample_id,value` holding the true consensus.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Orientation::ModelsAsRows)]
    pub orientation: Orientation,
    /// Also run U-aggregation at this fixed omega.
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "uagg_bench")]
    pub out_dir: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

impl Default for BenchArgs {
    fn default() -> Self {
        Self {
            input: None,
            truth: None,
            orientation: Orientation::ModelsAsRows,
            omega: None,
            folds: 5,
            seed: 0,
            out_dir: PathBuf::from("uagg_bench"),
            config: None,
        }
    }
}

/// Reads `sample_id,value` rows and orders them like `sample_ids`.
pub(crate) fn read_truth(path: &Path, sample_ids: &[String]) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    let mut values = HashMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        if rec.len() != 2 {
            return Err(Error::Parse { line, message: format!("expected 2 fields, found {}", rec.len()) });
        }
        let v: f64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::Parse { line, message: format!("bad number `{}`", &rec[1]) })?;
        if values.insert(rec[0].to_string(), v).is_some() {
            return Err(Error::Parse { line, message: format!("duplicate sample id `{}`", &rec[0]) });
        }
    }
    if values.len() != sample_ids.len() {
        return Err(Error::IdMismatch(format!("{} truth values for {} samples", values.len(), sample_ids.len())));
    }
    sample_ids
        .iter()
        .map(|id| values.get(id).copied().ok_or_else(|| Error::IdMismatch(format!("no truth value for sample `{id}`"))))
        .collect()
}

/// Writes `comparison.csv` and `reports.json` (one evaluation per method).
pub fn run(args: BenchArgs) -> Result<()> {
    let y = read_matrix(&args.input, args.orientation)?;
    let truth_path = args.truth.as_ref().ok_or_else(|| Error::InvalidConfig("--truth is required".into()))?;
    let v = read_truth(truth_path, y.sample_ids())?;
    let cv = CvConfig { folds: args.folds, grid: default_grid(), seed: args.seed, amp: AmpConfig::default(), center: false };
    cv.validate()?;
    let outputs = run_methods(&y, args.omega, Some(cv))?;
    let reports: Vec<(EvalReport, Option<f64>)> = outputs
        .iter()
        .map(|m| Ok((evaluate(m.method, &y, &v, None, &m.v_hat, m.u_hat.as_deref())?, m.omega_hat)))
        .collect::<Result<_>>()?;

    ensure_dir(&args.out_dir)?;
    let mut wtr = csv::Writer::from_writer(create_file(&args.out_dir, "comparison.csv")?);
    wtr.write_record(["method", "cor_v", "cos_v", "weight_concordance", "omega_hat", "best_model_id", "best_model_cor"])?;
    let opt = |x: Option<f64>| x.map(format_f64).unwrap_or_default();
    for (r, omega_hat) in &reports {
        wtr.write_record([
            r.method.clone(),
            format_f64(r.cor_v),
            format_f64(r.cos_v),
            opt(r.weight_concordance),
            opt(*omega_hat),
            r.best_model_id.clone(),
            format_f64(r.best_model_cor),
        ])?;
    }
    wtr.flush()?;
    let only: Vec<&EvalReport> = reports.iter().map(|(r, _)| r).collect();
    write_json(&args.out_dir, "reports.json", &only)?;
    for (r, _) in &reports {
        println!("{:<14} cor_v = {:.4}", r.method, r.cor_v);
    }
    Ok(())
}
