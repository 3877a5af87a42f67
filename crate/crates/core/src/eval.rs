//! Accuracy metrics against a known truth.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::PredictionMatrix;

fn check_lengths(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!("lengths {} and {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::DimensionMismatch("need at least two entries".into()));
    }
    Ok(())
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn cosine(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!("lengths {} and {}", x.len(), y.len())));
    }
    let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ny = y.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    Ok((dot / (nx * ny)).clamp(-1.0, 1.0))
}

/// `rho_i = cor(Y_i, v)^2` per model. Constant rows score 0.
pub fn model_performance(y: &PredictionMatrix, v: &[f64]) -> Result<(Vec<f64>, Vec<String>)> {
    if v.len() != y.n_samples() {
        return Err(Error::DimensionMismatch(format!("truth has {} entries, matrix has {} samples", v.len(), y.n_samples())));
    }
    let mut warnings = Vec::new();
    let mut rho = Vec::with_capacity(y.n_models());
    for (i, row) in y.values().row_iter().enumerate() {
        let row: Vec<f64> = row.iter().copied().collect();
        match pearson(&row, v) {
            Ok(r) => rho.push(r * r),
            Err(Error::ZeroVariance) if row.iter().all(|x| *x == row[0]) => {
                warnings.push(format!("model `{}` is constant; rho set to 0", y.model_ids()[i]));
                rho.push(0.0);
            }
            Err(e) => return Err(e),
        }
    }
    Ok((rho, warnings))
}

/// Pearson correlation between model weights and per-model performance.
pub fn weight_concordance(u_hat: &[f64], rho: &[f64]) -> Result<f64> {
    pearson(u_hat, rho)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub method: String,
    pub cor_v: f64,
    pub cos_v: f64,
    pub cos_u: Option<f64>,
    pub rho: Vec<f64>,
    pub weight_concordance: Option<f64>,
    pub best_model_id: String,
    /// `sqrt(max_i rho_i)`.
    pub best_model_cor: f64,
    pub warnings: Vec<String>,
}

/// Scores one method. `u_truth` enables the weight cosine.
pub fn evaluate(
    method: &str,
    y: &PredictionMatrix,
    v_truth: &[f64],
    u_truth: Option<&[f64]>,
    v_hat: &[f64],
    u_hat: Option<&[f64]>,
) -> Result<EvalReport> {
    let (rho, mut warnings) = model_performance(y, v_truth)?;
    let cor_v = pearson(v_hat, v_truth).or_else(|e| match e {
        Error::ZeroVariance => {
            warnings.push("constant consensus score; correlation set to 0".into());
            Ok(0.0)
        }
        e => Err(e),
    })?;
    let cos_v = cosine(v_hat, v_truth).unwrap_or(0.0);
    let cos_u = match (u_hat, u_truth) {
        (Some(a), Some(b)) => Some(cosine(a, b).unwrap_or(0.0)),
        _ => None,
    };
    let weight_concordance = match u_hat {
        Some(u) => match weight_concordance(u, &rho) {
            Ok(c) => Some(c),
            Err(Error::ZeroVariance) => {
                warnings.push("constant weights or performance; concordance undefined".into());
                None
            }
            Err(e) => return Err(e),
        },
        None => None,
    };
    let (best, best_rho) = rho
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, r)| if r > acc.1 { (i, r) } else { acc });
    Ok(EvalReport {
        method: method.to_string(),
        cor_v,
        cos_v,
        cos_u,
        best_model_id: y.model_ids()[best].clone(),
        best_model_cor: best_rho.max(0.0).sqrt(),
        rho,
        weight_concordance,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 4.0, 7.0];
        let y: Vec<f64> = x.iter().map(|a| 2.0 * a + 1.0).collect();
        assert_relative_eq!(pearson(&x, &y).unwrap(), 1.0, epsilon = 1e-15);
        let neg: Vec<f64> = x.iter().map(|a| -a).collect();
        assert_relative_eq!(pearson(&x, &neg).unwrap(), -1.0, epsilon = 1e-15);
        assert!(matches!(pearson(&[3.0; 4], &x), Err(Error::ZeroVariance)));
    }

    #[test]
    fn cosine_examples() {
        assert_relative_eq!(cosine(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert_relative_eq!(cosine(&[1.0, -2.0], &[-1.0, 2.0]).unwrap(), -1.0, epsilon = 1e-15);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 2.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn performance_examples() {
        let v = [1.0, -1.0, 1.0, -1.0];
        let rows = [1.0, -1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0, -1.0, 1.0, -1.0, 1.0, 2.0, 2.0, 2.0, 2.0];
        let y = PredictionMatrix::from_values(DMatrix::from_row_slice(4, 4, &rows)).unwrap();
        let (rho, warnings) = model_performance(&y, &v).unwrap();
        assert_relative_eq!(rho[0], 1.0, epsilon = 1e-15);
        assert_eq!(rho[1], 0.0);
        assert_relative_eq!(rho[2], 1.0, epsilon = 1e-15);
        assert_eq!(rho[3], 0.0);
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn concordance_affine_and_permutation_null() {
        let rho: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64 / 100.0).collect();
        let u: Vec<f64> = rho.iter().map(|r| 3.0 * r + 0.5).collect();
        assert_relative_eq!(weight_concordance(&u, &rho).unwrap(), 1.0, epsilon = 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut hits = 0;
        for _ in 0..200 {
            let mut p = rho.clone();
            p.shuffle(&mut rng);
            if weight_concordance(&p, &rho).unwrap().abs() < 0.25 {
                hits += 1;
            }
        }
        // |r| < 0.25 has probability about 0.988 under the permutation null at d = 100
        assert!(hits >= 190, "{hits}");
    }

    #[test]
    fn best_model_dominates() {
        let v = [0.1, 0.5, -0.3, 0.9, -1.0];
        let rows = [0.2, 0.4, -0.1, 1.0, -0.8, 1.0, 0.0, 0.0, 0.0, 1.0, 0.1, 0.5, -0.3, 0.9, -1.0];
        let y = PredictionMatrix::from_values(DMatrix::from_row_slice(3, 5, &rows)).unwrap();
        let rep = evaluate("x", &y, &v, None, &v, None).unwrap();
        assert_eq!(rep.best_model_id, "m2");
        assert!(rep.rho.iter().all(|r| rep.best_model_cor >= r.sqrt()));
    }
}
