//! Variance stabilization (bi-whitening) of a row-normalized prediction matrix.
//!
//! The noise of the normalized matrix `Ybar` has an approximately rank-one
//! variance profile `S = h f^T / n`. The imaginary diagonal of the resolvent
//! of the symmetrized matrix `[[0, Ybar], [Ybar^T, 0]]` at `z = i * theta_bar`
//! estimates the Dyson vectors `(g1, g2)`, and the rank-one Dyson equation
//! turns them into row and column factors `(h_hat, f_hat)` whose product
//! recovers `S`. Dividing `Ybar` by `sqrt(n h_hat_i f_hat_j)` then gives a
//! matrix with approximately homoskedastic noise of variance `1/n`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, Svd};
use crate::matrix::PredictionMatrix;

/// Relative floor applied to `1/g - theta_bar` before normalization.
pub const FLOOR_RATIO: f64 = 1e-8;

/// Row-normalized predictions: every row has unit Euclidean norm.
#[derive(Debug, Clone)]
pub struct NormalizedMatrix {
    pub values: DMatrix<f64>,
    /// Norm of each row before normalization (after centering, if applied).
    pub row_norms: Vec<f64>,
    pub centered: bool,
    pub model_ids: Vec<String>,
    pub sample_ids: Vec<String>,
}

impl NormalizedMatrix {
    pub fn n_models(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.values.ncols()
    }
}

/// Centers (optionally) and scales each row to unit norm. Rows whose norm
/// vanishes are left at zero and reported with a norm of exactly 0.
pub fn normalize_values(values: &DMatrix<f64>, center: bool) -> (DMatrix<f64>, Vec<f64>) {
    let mut out = values.clone();
    let mut norms = Vec::with_capacity(values.nrows());
    for mut row in out.row_iter_mut() {
        let raw_scale = row.amax();
        if center {
            let mean = row.mean();
            row.add_scalar_mut(-mean);
        }
        let norm = row.norm();
        if norm == 0.0 || norm <= 1e-12 * raw_scale * (row.len() as f64).sqrt() {
            row.fill(0.0);
            norms.push(0.0);
        } else {
            row.scale_mut(1.0 / norm);
            norms.push(norm);
        }
    }
    (out, norms)
}

pub fn normalize_rows(y: &PredictionMatrix, center: bool) -> Result<NormalizedMatrix> {
    let (values, row_norms) = normalize_values(y.values(), center);
    if let Some(i) = row_norms.iter().position(|&r| r == 0.0) {
        return Err(Error::ZeroNormRow { model_id: y.model_ids()[i].clone() });
    }
    Ok(NormalizedMatrix {
        values,
        row_norms,
        centered: center,
        model_ids: y.model_ids().to_vec(),
        sample_ids: y.sample_ids().to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolventDiagonals {
    pub g1: DVector<f64>,
    pub g2: DVector<f64>,
    pub theta_bar: f64,
}

/// Estimates the Dyson vectors from the full SVD of a d x n matrix, d <= n,
/// using the median singular value as the spectral parameter.
pub fn resolvent_diagonals(svd: &Svd) -> Result<ResolventDiagonals> {
    let theta = &svd.singular_values;
    let d = theta.len();
    if svd.u.shape() != (d, d) || svd.v.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "svd factors {:?} / {:?} do not match {d} singular values",
            svd.u.shape(),
            svd.v.shape()
        )));
    }
    let theta_bar = linalg::median(theta.as_slice());
    if !(theta_bar > 0.0) {
        return Err(Error::DegenerateSpectrum);
    }
    let tb2 = theta_bar * theta_bar;
    // theta_bar / (theta_k^2 + theta_bar^2)
    let weights: Vec<f64> = theta.iter().map(|t| theta_bar / (t * t + tb2)).collect();
    // theta_bar / (theta_k^2 + theta_bar^2) - 1 / theta_bar, in a cancellation-free form
    let v_weights: Vec<f64> = theta.iter().map(|t| -(t * t) / (theta_bar * (t * t + tb2))).collect();

    let g1 = DVector::from_fn(d, |i, _| (0..d).map(|k| weights[k] * svd.u[(i, k)].powi(2)).sum());
    let n = svd.v.nrows();
    let g2 = DVector::from_fn(n, |j, _| {
        1.0 / theta_bar + (0..d).map(|k| v_weights[k] * svd.v[(j, k)].powi(2)).sum::<f64>()
    });
    Ok(ResolventDiagonals { g1, g2, theta_bar })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DysonFactors {
    pub h_hat: DVector<f64>,
    pub f_hat: DVector<f64>,
    /// Entries of `1/g - theta_bar` raised to the positivity floor.
    pub floored: usize,
}

pub fn dyson_factors(g1: &DVector<f64>, g2: &DVector<f64>, theta_bar: f64) -> Result<DysonFactors> {
    let (h_hat, floored_h) = dyson_side(g1, theta_bar, "row")?;
    let (f_hat, floored_f) = dyson_side(g2, theta_bar, "column")?;
    Ok(DysonFactors { h_hat, f_hat, floored: floored_h + floored_f })
}

fn dyson_side(g: &DVector<f64>, theta_bar: f64, side: &'static str) -> Result<(DVector<f64>, usize)> {
    let len = g.len() as f64;
    let normalizer = len - theta_bar * g.iter().map(|x| x.abs()).sum::<f64>();
    if !(normalizer > 0.0) {
        return Err(Error::DysonNormalizer { side, value: normalizer });
    }
    let mut raw: Vec<f64> = g.iter().map(|x| 1.0 / x - theta_bar).collect();
    let positive: Vec<f64> = raw.iter().copied().filter(|x| *x > 0.0 && x.is_finite()).collect();
    if positive.is_empty() {
        return Err(Error::DysonNormalizer { side, value: 0.0 });
    }
    let floor = FLOOR_RATIO * linalg::median(&positive);
    let mut floored = 0;
    for x in raw.iter_mut() {
        if !(*x >= floor) {
            *x = floor;
            floored += 1;
        }
    }
    let scale = normalizer.sqrt();
    Ok((DVector::from_iterator(raw.len(), raw.into_iter().map(|x| x / scale)), floored))
}

/// Bi-whitened matrix `Ytilde = diag(n^{1/4} h_hat^{1/2})^{-1} Ybar diag(n^{1/4} f_hat^{1/2})^{-1}`
/// together with the factors that produced it. Vectors are always in the
/// caller's orientation: `h_hat`, `g1` per model and `f_hat`, `g2` per sample.
#[derive(Debug, Clone, Serialize)]
pub struct StabilizedMatrix {
    #[serde(skip)]
    pub values: DMatrix<f64>,
    pub h_hat: Vec<f64>,
    pub f_hat: Vec<f64>,
    pub theta_bar: f64,
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
    /// Set when d > n and the estimator ran on the transpose.
    pub transposed: bool,
    pub singular_values: Vec<f64>,
    pub floored: usize,
}

impl StabilizedMatrix {
    pub fn n_models(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.values.ncols()
    }

    /// Diagonal of the row whitening matrix, `n^{1/4} h_hat^{1/2}`.
    pub fn row_scale(&self) -> DVector<f64> {
        let q = (self.n_samples() as f64).powf(0.25);
        DVector::from_iterator(self.h_hat.len(), self.h_hat.iter().map(|h| q * h.sqrt()))
    }

    /// Diagonal of the column whitening matrix, `n^{1/4} f_hat^{1/2}`.
    pub fn col_scale(&self) -> DVector<f64> {
        let q = (self.n_samples() as f64).powf(0.25);
        DVector::from_iterator(self.f_hat.len(), self.f_hat.iter().map(|f| q * f.sqrt()))
    }

    /// Undoes the whitening: `diag(row_scale) Ytilde diag(col_scale)`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let r = self.row_scale();
        let c = self.col_scale();
        DMatrix::from_fn(self.n_models(), self.n_samples(), |i, j| r[i] * self.values[(i, j)] * c[j])
    }
}

impl StabilizedMatrix {
    /// Trivial whitening `h_hat = f_hat = n^{-1/2}`, leaving `Ybar` unchanged.
    pub fn identity(ybar: &DMatrix<f64>) -> Self {
        let (d, n) = ybar.shape();
        let unit = 1.0 / (n as f64).sqrt();
        Self {
            values: ybar.clone(),
            h_hat: vec![unit; d],
            f_hat: vec![unit; n],
            theta_bar: 0.0,
            g1: Vec::new(),
            g2: Vec::new(),
            transposed: false,
            singular_values: Vec::new(),
            floored: 0,
        }
    }
}

pub fn stabilize(ynorm: &NormalizedMatrix) -> Result<StabilizedMatrix> {
    stabilize_values(&ynorm.values)
}

pub fn stabilize_values(ybar: &DMatrix<f64>) -> Result<StabilizedMatrix> {
    let (d, n) = ybar.shape();
    let transposed = d > n;
    let svd = if transposed { linalg::svd_wide(&ybar.transpose())? } else { linalg::svd_wide(ybar)? };
    let rd = resolvent_diagonals(&svd)?;
    let df = dyson_factors(&rd.g1, &rd.g2, rd.theta_bar)?;
    if df.floored > 0 {
        log::warn!("{} Dyson factor entries raised to the positivity floor", df.floored);
    }
    let (h_hat, f_hat, g1, g2) = if transposed {
        (df.f_hat, df.h_hat, rd.g2, rd.g1)
    } else {
        (df.h_hat, df.f_hat, rd.g1, rd.g2)
    };

    let q = (n as f64).powf(0.25);
    let row: Vec<f64> = h_hat.iter().map(|h| q * h.sqrt()).collect();
    let col: Vec<f64> = f_hat.iter().map(|f| q * f.sqrt()).collect();
    let values = DMatrix::from_fn(d, n, |i, j| ybar[(i, j)] / row[i] / col[j]);

    Ok(StabilizedMatrix {
        values,
        h_hat: h_hat.iter().copied().collect(),
        f_hat: f_hat.iter().copied().collect(),
        theta_bar: rd.theta_bar,
        g1: g1.iter().copied().collect(),
        g2: g2.iter().copied().collect(),
        transposed,
        singular_values: svd.singular_values.iter().copied().collect(),
        floored: df.floored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pm(rows: usize, cols: usize, data: &[f64]) -> PredictionMatrix {
        PredictionMatrix::from_values(DMatrix::from_row_slice(rows, cols, data)).unwrap()
    }

    #[test]
    fn normalize_scaling_example() {
        let y = pm(2, 2, &[3.0, 4.0, 1.0, 0.0]);
        let nm = normalize_rows(&y, false).unwrap();
        assert_relative_eq!(nm.values[(0, 0)], 0.6, epsilon = 1e-15);
        assert_relative_eq!(nm.values[(0, 1)], 0.8, epsilon = 1e-15);
        assert_eq!(nm.row_norms[0], 5.0);
    }

    #[test]
    fn normalize_centering_example() {
        let y = pm(2, 3, &[1.0, 2.0, 3.0, 0.0, 1.0, 5.0]);
        let nm = normalize_rows(&y, true).unwrap();
        let r = 1.0 / 2f64.sqrt();
        assert_relative_eq!(nm.values[(0, 0)], -r, epsilon = 1e-15);
        assert_relative_eq!(nm.values[(0, 1)], 0.0, epsilon = 1e-15);
        assert_relative_eq!(nm.values[(0, 2)], r, epsilon = 1e-15);
        for i in 0..2 {
            assert_relative_eq!(nm.values.row(i).norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_row_is_rejected_by_id() {
        let y = pm(2, 3, &[5.0, 5.0, 5.0, 1.0, 2.0, 0.0]);
        match normalize_rows(&y, true) {
            Err(Error::ZeroNormRow { model_id }) => assert_eq!(model_id, "m0"),
            other => panic!("unexpected {other:?}"),
        }
        // uncentered, the same row is fine
        assert!(normalize_rows(&y, false).is_ok());
    }

    #[test]
    fn resolvent_identity_vectors() {
        let svd = Svd {
            u: DMatrix::identity(2, 2),
            singular_values: DVector::from_vec(vec![2.0, 1.0]),
            v: DMatrix::identity(2, 2),
        };
        let rd = resolvent_diagonals(&svd).unwrap();
        assert_eq!(rd.theta_bar, 1.5);
        assert_relative_eq!(rd.g1[0], 1.5 / 6.25, epsilon = 1e-15);
        assert_relative_eq!(rd.g1[1], 1.5 / 3.25, epsilon = 1e-15);
        assert_relative_eq!(rd.g1[0], 0.24, epsilon = 1e-15);
        assert_relative_eq!(rd.g1[1], 0.46154, epsilon = 1e-5);
        assert_relative_eq!(rd.g2[0], rd.g1[0], epsilon = 1e-15);
        assert_relative_eq!(rd.g2[1], rd.g1[1], epsilon = 1e-15);
    }

    #[test]
    fn resolvent_flat_spectrum() {
        // any orthogonal U with equal singular values gives g1 = 1 / (2 theta)
        let c = (0.3f64).cos();
        let s = (0.3f64).sin();
        let u = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let v = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, c, 0.0, s]);
        let svd = Svd { u, singular_values: DVector::from_vec(vec![0.7, 0.7]), v };
        let rd = resolvent_diagonals(&svd).unwrap();
        for i in 0..2 {
            assert_relative_eq!(rd.g1[i], 1.0 / 1.4, epsilon = 1e-14);
        }
    }

    #[test]
    fn resolvent_rejects_zero_spectrum() {
        let svd = Svd {
            u: DMatrix::identity(2, 2),
            singular_values: DVector::zeros(2),
            v: DMatrix::zeros(3, 2),
        };
        assert!(matches!(resolvent_diagonals(&svd), Err(Error::DegenerateSpectrum)));
    }

    #[test]
    fn dyson_constant_input() {
        let g = DVector::from_element(4, 0.5);
        let df = dyson_factors(&g, &g, 1.0).unwrap();
        for h in df.h_hat.iter() {
            assert_relative_eq!(*h, 1.0 / 2f64.sqrt(), epsilon = 1e-15);
        }
        assert_eq!(df.floored, 0);
    }

    #[test]
    fn dyson_nonpositive_normalizer() {
        let g = DVector::from_element(4, 2.0);
        assert!(matches!(dyson_factors(&g, &g, 1.0), Err(Error::DysonNormalizer { .. })));
    }

    #[test]
    fn dyson_floors_nonpositive_entries() {
        let g = DVector::from_vec(vec![0.5, 0.5, 0.5, 1.5]);
        let df = dyson_factors(&g, &DVector::from_element(3, 0.5), 1.0).unwrap();
        assert_eq!(df.floored, 1);
        assert!(df.h_hat.iter().all(|h| *h > 0.0));
    }

    #[test]
    fn orthogonal_input_is_diagonally_rescaled() {
        let c = (0.4f64).cos();
        let s = (0.4f64).sin();
        let q = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let st = stabilize_values(&q).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let ratio = st.values[(i, j)] / q[(i, j)];
                assert!(ratio > 0.0);
            }
        }
        // rank-one ratio structure: Ytilde_ij / Ybar_ij = a_i b_j
        let r = |i, j| st.values[(i, j)] / q[(i, j)];
        assert_relative_eq!(r(0, 0) * r(1, 1), r(0, 1) * r(1, 0), epsilon = 1e-12);
    }

    #[test]
    fn reconstruction_and_transposition() {
        let m = DMatrix::from_fn(9, 5, |i, j| ((i * 13 + j * 7) % 11) as f64 / 5.0 - 1.0 + 0.3 * (i == j) as u8 as f64);
        let (ybar, _) = normalize_values(&m, false);
        let st = stabilize_values(&ybar).unwrap();
        assert!(st.transposed);
        assert_eq!(st.h_hat.len(), 9);
        assert_eq!(st.f_hat.len(), 5);
        assert_eq!(st.g1.len(), 9);
        let err = (st.reconstruct() - &ybar).norm() / ybar.norm();
        assert!(err < 1e-10, "{err}");
        assert!(st.h_hat.iter().chain(&st.f_hat).all(|x| *x > 0.0));
    }

    fn cv_of(x: &[f64]) -> f64 {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
        var.sqrt() / m
    }

    fn homoskedastic(n: usize, d: usize, lambda: Option<f64>, seed: u64) -> (PredictionMatrix, crate::synthgen::GroundTruth) {
        use crate::synthgen::{generate, Law, NoiseRegime, SynthConfig};
        let mut cfg = SynthConfig::new(n, d, 0.3, NoiseRegime::Homoskedastic, seed);
        cfg.sigma_law = Some(Law::Constant(1.0));
        cfg.f_law = Some(Law::Constant(1.0));
        cfg.lambda = lambda;
        generate(&cfg).unwrap()
    }

    #[test]
    fn pure_noise_resolvent_is_flat() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let (d, n) = (100, 1000);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let normal = Normal::new(0.0, (1.0 / n as f64).sqrt()).unwrap();
        let m = DMatrix::from_fn(d, n, |_, _| normal.sample(&mut rng));
        let rd = resolvent_diagonals(&linalg::svd_wide(&m).unwrap()).unwrap();
        let cv = cv_of(rd.g1.as_slice());
        assert!(cv < 0.15, "{cv}");
    }

    #[test]
    fn homoskedastic_row_factors_track_their_target() {
        // At lambda = 1 the signal barely moves h0, so the variance profile is
        // nearly constant; at the default strength the informative rows have
        // smaller h0 and h_hat follows that spread.
        for seed in 0..20 {
            let (y, _) = homoskedastic(1000, 100, Some(1.0), seed);
            let st = stabilize(&normalize_rows(&y, false).unwrap()).unwrap();
            let max = st.h_hat.iter().cloned().fold(f64::MIN, f64::max);
            let min = st.h_hat.iter().cloned().fold(f64::MAX, f64::min);
            assert!(max / min < 1.3, "seed {seed}: {}", max / min);
        }
        let (y, truth) = homoskedastic(1000, 100, None, 0);
        let st = stabilize(&normalize_rows(&y, false).unwrap()).unwrap();
        let h0 = truth.h0();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (on, off): (Vec<usize>, Vec<usize>) = (0..100).partition(|&i| truth.support[i]);
        let pick = |v: &[f64], idx: &[usize]| mean(&idx.iter().map(|&i| v[i]).collect::<Vec<_>>());
        let est = pick(&st.h_hat, &off) / pick(&st.h_hat, &on);
        let target = pick(h0.as_slice(), &off) / pick(h0.as_slice(), &on);
        assert!((est / target - 1.0).abs() < 0.1, "{est} vs {target}");
    }

    #[test]
    fn heteroskedastic_row_factors_match_target() {
        use crate::synthgen::{generate, NoiseRegime, SynthConfig};
        let (y, truth) = generate(&SynthConfig::new(2000, 200, 0.3, NoiseRegime::Heteroskedastic, 5)).unwrap();
        let st = stabilize(&normalize_rows(&y, false).unwrap()).unwrap();
        let h0 = truth.h0();
        let mh = st.h_hat.iter().sum::<f64>() / 200.0;
        let mt = h0.sum() / 200.0;
        let rel: Vec<f64> = (0..200).map(|i| ((st.h_hat[i] / mh) - (h0[i] / mt)).abs() / (h0[i] / mt)).collect();
        let err = rel.iter().sum::<f64>() / 200.0;
        let worst = (0..200).max_by(|&a, &b| rel[a].total_cmp(&rel[b])).unwrap();
        assert!(
            err <= 0.2,
            "mean relative error {err}, median {}, worst row sigma {} with error {}",
            crate::linalg::median(&rel),
            truth.sigma[worst],
            rel[worst]
        );
    }

    #[test]
    fn whitened_noise_rows_have_equal_variance() {
        let (y, truth) = homoskedastic(1000, 100, None, 3);
        let st = stabilize(&normalize_rows(&y, false).unwrap()).unwrap();
        let vars: Vec<f64> = (0..100)
            .filter(|&i| !truth.support[i])
            .map(|i| {
                let row = st.values.row(i);
                let m = row.mean();
                row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (row.len() - 1) as f64
            })
            .collect();
        let cv = cv_of(&vars);
        assert!(cv < 0.2, "{cv}");
    }

    #[test]
    fn second_pass_is_flat() {
        let (y, _) = homoskedastic(1000, 100, Some(1.0), 4);
        let first = stabilize(&normalize_rows(&y, false).unwrap()).unwrap();
        let second = stabilize_values(&first.values).unwrap();
        for v in [&second.h_hat, &second.f_hat] {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let dev = v.iter().map(|x| (x / m - 1.0).abs()).fold(0.0, f64::max);
            assert!(dev <= 0.05, "{dev}");
        }
    }
}
