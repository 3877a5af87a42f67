//! K-fold selection of the sparsity ratio.
//!
//! For each fold `k` the pipeline is fitted on the remaining samples to get
//! model weights `u(omega)`; the held-out block is row-normalized on its own
//! and scored by the rank-one reconstruction loss
//! `||Ybar_k - u v^T||_F^2` with `v = Ybar_k^T u` and `u` scaled to unit norm
//! (equivalently `||Ybar_k||_F^2 - ||Ybar_k^T u||^2`).

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amp::{run_amp, AmpConfig};
use crate::error::{Error, Result};
use crate::matrix::{format_f64, PredictionMatrix};
use crate::pipeline::stabilize_tolerant;
use crate::stabilize::normalize_values;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub folds: usize,
    pub grid: Vec<f64>,
    pub seed: u64,
    pub amp: AmpConfig,
    pub center: bool,
}

pub fn default_grid() -> Vec<f64> {
    (1..=9).map(|k| k as f64 / 10.0).collect()
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { folds: 5, grid: default_grid(), seed: 0, amp: AmpConfig::default(), center: false }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 folds, got {}", self.folds)));
        }
        if self.grid.is_empty() {
            return Err(Error::InvalidConfig("empty omega grid".into()));
        }
        if self.grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidConfig("omega grid must be strictly ascending".into()));
        }
        if let Some(bad) = self.grid.iter().find(|w| !(**w > 0.0 && **w < 1.0)) {
            return Err(Error::InvalidConfig(format!("omega grid value {bad} outside (0,1)")));
        }
        AmpConfig { omega: self.grid[0], ..self.amp }.validate()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CvReport {
    pub omega_hat: f64,
    pub grid: Vec<f64>,
    /// `losses[g][k]`: loss of grid value `g` on fold `k`.
    pub losses: Vec<Vec<f64>>,
    pub totals: Vec<f64>,
    pub fold_assignment: Vec<usize>,
    pub warnings: Vec<String>,
}

impl CvReport {
    pub fn write_loss_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let folds = self.losses.first().map_or(0, Vec::len);
        let mut header = vec!["omega".to_string()];
        header.extend((0..folds).map(|k| format!("fold{k}")));
        header.push("total".into());
        wtr.write_record(&header)?;
        for (g, row) in self.losses.iter().enumerate() {
            let mut rec = vec![format_f64(self.grid[g])];
            rec.extend(row.iter().map(|x| format_f64(*x)));
            rec.push(format_f64(self.totals[g]));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Random partition of `0..n` into `k` folds whose sizes differ by at most one.
pub fn split_folds(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || n < k {
        return Err(Error::InvalidConfig(format!("cannot split {n} samples into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n];
    for (pos, &j) in order.iter().enumerate() {
        assignment[j] = pos % k;
    }
    Ok(assignment)
}

fn columns(assignment: &[usize], fold: usize, inside: bool) -> Vec<usize> {
    (0..assignment.len()).filter(|&j| (assignment[j] == fold) == inside).collect()
}

/// Model weights `u(omega)` for every grid value, fitted on the samples outside `fold`.
pub fn fit_fold_weights(
    values: &DMatrix<f64>,
    assignment: &[usize],
    fold: usize,
    config: &CvConfig,
) -> Result<(Vec<DVector<f64>>, Vec<String>)> {
    let train = values.select_columns(&columns(assignment, fold, false));
    let (ybar, norms) = normalize_values(&train, config.center);
    let mut warnings = Vec::new();
    let dropped = norms.iter().filter(|r| **r == 0.0).count();
    if dropped > 0 {
        warnings.push(format!("fold {fold}: {dropped} constant model rows in the training block"));
    }
    let (stab, warn) = stabilize_tolerant(&ybar)?;
    warnings.extend(warn.into_iter().map(|w| format!("fold {fold}: {w}")));
    let scale = stab.row_scale();
    let mut weights = Vec::with_capacity(config.grid.len());
    for &omega in &config.grid {
        let amp = AmpConfig { omega, ..config.amp };
        let run = run_amp(&stab.values, &amp, None)?;
        weights.push(run.u.component_mul(&scale));
    }
    Ok((weights, warnings))
}

fn fold_loss(held: &DMatrix<f64>, keep: &[bool], u: &DVector<f64>) -> f64 {
    let total: f64 = held.row_iter().zip(keep).filter(|(_, k)| **k).map(|(r, _)| r.norm_squared()).sum();
    let mut u = u.clone();
    for (i, k) in keep.iter().enumerate() {
        if !k {
            u[i] = 0.0;
        }
    }
    let norm = u.norm();
    if norm == 0.0 {
        return total;
    }
    u /= norm;
    let fit = held.tr_mul(&u).norm_squared();
    (total - fit).max(0.0)
}

pub fn cv_omega(y: &PredictionMatrix, config: &CvConfig) -> Result<CvReport> {
    config.validate()?;
    let values = y.values();
    let assignment = split_folds(y.n_samples(), config.folds, config.seed)?;

    let per_fold: Vec<Result<(Vec<f64>, Vec<String>)>> = (0..config.folds)
        .into_par_iter()
        .map(|k| {
            let (weights, mut warnings) = fit_fold_weights(values, &assignment, k, config)?;
            let held = values.select_columns(&columns(&assignment, k, true));
            let (held_bar, norms) = normalize_values(&held, config.center);
            let keep: Vec<bool> = norms.iter().map(|r| *r > 0.0).collect();
            for (i, on) in keep.iter().enumerate() {
                if !on {
                    warnings.push(format!("fold {k}: model `{}` has a zero-norm held-out row; excluded from the loss", y.model_ids()[i]));
                }
            }
            let losses = weights.iter().map(|u| fold_loss(&held_bar, &keep, u)).collect();
            Ok((losses, warnings))
        })
        .collect();

    let mut losses = vec![vec![0.0; config.folds]; config.grid.len()];
    let mut warnings = Vec::new();
    for (k, res) in per_fold.into_iter().enumerate() {
        let (fold_losses, w) = res?;
        for (g, l) in fold_losses.into_iter().enumerate() {
            losses[g][k] = l;
        }
        warnings.extend(w);
    }
    let totals: Vec<f64> = losses.iter().map(|row| row.iter().sum()).collect();
    if totals.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidConfig("non-finite cross-validation loss".into()));
    }
    let best = totals.iter().copied().fold(f64::INFINITY, f64::min);
    let tie = 1e-12 * best.abs().max(f64::MIN_POSITIVE);
    let pick = totals.iter().position(|t| *t <= best + tie).expect("nonempty grid");
    Ok(CvReport { omega_hat: config.grid[pick], grid: config.grid.clone(), losses, totals, fold_assignment: assignment, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate, Law, NoiseRegime, SynthConfig};

    fn fold_sizes(a: &[usize], k: usize) -> Vec<usize> {
        let mut s = vec![0; k];
        for &f in a {
            s[f] += 1;
        }
        s
    }

    #[test]
    fn fold_split_examples() {
        assert_eq!(fold_sizes(&split_folds(10, 5, 1).unwrap(), 5), vec![2; 5]);
        let mut s = fold_sizes(&split_folds(11, 5, 1).unwrap(), 5);
        s.sort();
        assert_eq!(s, vec![2, 2, 2, 2, 3]);
        assert_eq!(split_folds(50, 5, 9).unwrap(), split_folds(50, 5, 9).unwrap());
        assert_ne!(split_folds(50, 5, 9).unwrap(), split_folds(50, 5, 10).unwrap());
        assert!(split_folds(3, 5, 0).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = CvConfig::default();
        c.grid = vec![0.3, 0.2];
        assert!(c.validate().is_err());
        c.grid = vec![];
        assert!(c.validate().is_err());
        c.grid = vec![0.5];
        c.folds = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn replicated_noiseless_model_ties_to_smallest() {
        let v: Vec<f64> = (0..60).map(|j| ((j * 13 % 17) as f64 - 8.0) / 5.0).collect();
        let values = DMatrix::from_fn(20, 60, |_, j| v[j]);
        let y = PredictionMatrix::from_values(values).unwrap();
        let rep = cv_omega(&y, &CvConfig::default()).unwrap();
        assert_eq!(rep.omega_hat, 0.1);
        assert_eq!(rep.losses.len(), 9);
    }

    #[test]
    fn singleton_grid() {
        let cfg = SynthConfig::new(200, 30, 0.3, NoiseRegime::Heteroskedastic, 4);
        let (y, _) = generate(&cfg).unwrap();
        let cv = CvConfig { grid: vec![0.4], ..CvConfig::default() };
        let rep = cv_omega(&y, &cv).unwrap();
        assert_eq!(rep.omega_hat, 0.4);
        assert_eq!(rep.losses[0].len(), 5);
        assert!(rep.losses[0].iter().all(|l| l.is_finite()));
    }

    #[test]
    fn true_sparsity_beats_dense_at_zero_noise() {
        let mut cfg = SynthConfig::new(300, 40, 0.3, NoiseRegime::Homoskedastic, 8);
        cfg.sigma_law = Some(Law::Constant(0.0));
        let (y, _) = generate(&cfg).unwrap();
        let rep = cv_omega(&y, &CvConfig { grid: vec![0.3, 0.9], ..CvConfig::default() }).unwrap();
        assert!(rep.totals[0] <= rep.totals[1]);
    }

    #[test]
    fn held_out_columns_do_not_leak() {
        let cfg = SynthConfig::new(200, 30, 0.3, NoiseRegime::Heteroskedastic, 5);
        let (y, _) = generate(&cfg).unwrap();
        let cv = CvConfig::default();
        let assignment = split_folds(200, 5, cv.seed).unwrap();
        let (before, _) = fit_fold_weights(y.values(), &assignment, 2, &cv).unwrap();
        let mut mutated = y.values().clone();
        for j in columns(&assignment, 2, true) {
            for i in 0..30 {
                mutated[(i, j)] = mutated[(i, j)] * -3.0 + 7.0;
            }
        }
        let (after, _) = fit_fold_weights(&mutated, &assignment, 2, &cv).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert_eq!(a.as_slice(), b.as_slice());
        }
    }
}
