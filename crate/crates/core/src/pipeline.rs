//! End-to-end aggregation: normalize, stabilize, select omega, run AMP, renormalize.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::amp::{renormalize, run_amp, AggregationResult, AmpConfig};
use crate::cv::{cv_omega, CvConfig, CvReport};
use crate::error::{Error, Result};
use crate::matrix::PredictionMatrix;
use crate::stabilize::{normalize_values, stabilize_values, StabilizedMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OmegaChoice {
    Fixed(f64),
    CrossValidated(CvConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub center: bool,
    pub amp: AmpConfig,
    pub omega: OmegaChoice,
}

impl PipelineConfig {
    pub fn fixed(omega: f64) -> Self {
        Self { center: false, amp: AmpConfig::with_omega(omega), omega: OmegaChoice::Fixed(omega) }
    }

    pub fn cross_validated(cv: CvConfig) -> Self {
        Self { center: cv.center, amp: cv.amp, omega: OmegaChoice::CrossValidated(cv) }
    }
}

#[derive(Debug, Clone)]
pub struct Aggregation {
    pub result: AggregationResult,
    pub stabilized: StabilizedMatrix,
    pub cv: Option<CvReport>,
    pub row_norms: Vec<f64>,
}

/// Stabilizes, falling back to the identity whitening when the spectrum is
/// degenerate (median singular value zero, e.g. noiseless low-rank input).
pub fn stabilize_tolerant(ybar: &DMatrix<f64>) -> Result<(StabilizedMatrix, Vec<String>)> {
    match stabilize_values(ybar) {
        Ok(stab) => {
            let warnings = if stab.floored > 0 {
                vec![format!("{} Dyson factor entries raised to the positivity floor", stab.floored)]
            } else {
                Vec::new()
            };
            Ok((stab, warnings))
        }
        Err(Error::DegenerateSpectrum) => {
            log::warn!("degenerate spectrum; skipping variance stabilization");
            Ok((StabilizedMatrix::identity(ybar), vec!["degenerate spectrum; variance stabilization skipped".into()]))
        }
        Err(e) => Err(e),
    }
}

pub fn u_aggregate(y: &PredictionMatrix, config: &PipelineConfig) -> Result<Aggregation> {
    let (omega, cv) = match &config.omega {
        OmegaChoice::Fixed(w) => (*w, None),
        OmegaChoice::CrossValidated(cv) => {
            let cv = CvConfig { center: config.center, amp: config.amp, ..cv.clone() };
            let report = cv_omega(y, &cv)?;
            (report.omega_hat, Some(report))
        }
    };
    let amp = AmpConfig { omega, ..config.amp };
    amp.validate()?;

    let mut warnings = Vec::new();
    let (ybar, row_norms) = normalize_values(y.values(), config.center);
    for (i, r) in row_norms.iter().enumerate() {
        if *r == 0.0 {
            warnings.push(format!("model `{}` has constant predictions; weight fixed at 0", y.model_ids()[i]));
        }
    }
    if row_norms.iter().all(|r| *r == 0.0) {
        return Err(Error::ZeroNormRow { model_id: y.model_ids()[0].clone() });
    }
    let (stab, w) = stabilize_tolerant(&ybar)?;
    warnings.extend(w);
    let run = run_amp(&stab.values, &amp, None)?;
    let mut result = renormalize(run, &stab, omega)?;
    warnings.append(&mut result.warnings);
    if let Some(report) = &cv {
        warnings.extend(report.warnings.iter().cloned());
    }
    result.warnings = warnings;
    Ok(Aggregation { result, stabilized: stab, cv, row_norms })
}
