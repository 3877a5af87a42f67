//! Dense decompositions used by the pipeline.
//!
//! All decompositions go through the symmetric eigendecomposition of the
//! smaller Gram matrix, which is an order of magnitude faster than a
//! Golub-Kahan SVD at the matrix shapes we care about (d in the hundreds,
//! n in the thousands).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Full singular value decomposition `M = U diag(s) V^T` of a d x n matrix with d <= n.
///
/// `u` is d x d, `v` is n x d, singular values are nonnegative and descending.
/// Singular values below `ZERO_RATIO * s_max` are indistinguishable from zero
/// through the Gram route; they are reported as exactly 0 and their `v`
/// columns are left at zero.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
}

fn finite_eigen(m: &DMatrix<f64>) -> nalgebra::SymmetricEigen<f64, nalgebra::Dyn> {
    let ok = |e: &nalgebra::SymmetricEigen<f64, nalgebra::Dyn>| {
        e.eigenvalues.iter().chain(e.eigenvectors.iter()).all(|x| x.is_finite())
    };
    let eig = m.clone().symmetric_eigen();
    if ok(&eig) {
        return eig;
    }
    // the implicit QR sweep can blow up on exactly low-rank input at machine epsilon
    for eps in [1e-15, 1e-13, 1e-11] {
        if let Some(e) = m.clone().try_symmetric_eigen(eps, 100_000) {
            if ok(&e) {
                return e;
            }
        }
    }
    let shift = m.diagonal().iter().map(|x| x.abs()).sum::<f64>() / m.nrows().max(1) as f64 + 1.0;
    let shifted = m + DMatrix::identity(m.nrows(), m.ncols()) * shift;
    let mut e = shifted.symmetric_eigen();
    e.eigenvalues.add_scalar_mut(-shift);
    e
}

/// Eigenpairs of a symmetric matrix sorted by eigenvalue, largest first.
/// Ties keep the solver's index order.
pub fn sym_eigen_desc(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = finite_eigen(&m);
    let k = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(k, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = eig.eigenvectors.select_columns(&order);
    (values, vectors)
}

pub const ZERO_RATIO: f64 = 1e-7;

pub fn svd_wide(m: &DMatrix<f64>) -> Result<Svd> {
    let (d, n) = m.shape();
    if d > n {
        return Err(Error::DimensionMismatch(format!("svd_wide expects rows <= cols, got {d}x{n}")));
    }
    let gram = m * m.transpose();
    let (values, u) = sym_eigen_desc(gram);
    let mut singular_values = values.map(|x| x.max(0.0).sqrt());
    let smax = singular_values.iter().copied().fold(0.0, f64::max);
    let mut v = m.transpose() * &u;
    for k in 0..d {
        let s = singular_values[k];
        if s > ZERO_RATIO * smax && s > 0.0 {
            v.column_mut(k).scale_mut(1.0 / s);
        } else {
            singular_values[k] = 0.0;
            v.column_mut(k).fill(0.0);
        }
    }
    Ok(Svd { u, singular_values, v })
}

/// Leading singular triplet `(s1, u1, v1)` and the gap `s1 - s2`.
pub fn top_singular(m: &DMatrix<f64>) -> (f64, DVector<f64>, DVector<f64>, f64) {
    let (d, n) = m.shape();
    let second = |vals: &DVector<f64>| if vals.len() > 1 { vals[1].max(0.0).sqrt() } else { 0.0 };
    if d <= n {
        let (vals, vecs) = sym_eigen_desc(m * m.transpose());
        let s1 = vals[0].max(0.0).sqrt();
        let u = vecs.column(0).into_owned();
        let mut v = m.transpose() * &u;
        let norm = v.norm();
        if norm > 0.0 {
            v /= norm;
        }
        (s1, u, v, s1 - second(&vals))
    } else {
        let (vals, vecs) = sym_eigen_desc(m.transpose() * m);
        let s1 = vals[0].max(0.0).sqrt();
        let v = vecs.column(0).into_owned();
        let mut u = m * &v;
        let norm = u.norm();
        if norm > 0.0 {
            u /= norm;
        }
        (s1, u, v, s1 - second(&vals))
    }
}

/// Median with the usual convention: mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    }
}

/// Flips `x` so that its entries sum to a nonnegative value. An exactly zero
/// sum is resolved by making the first nonzero entry positive. Returns whether
/// a flip happened.
pub fn align_sign(x: &mut DVector<f64>) -> bool {
    let sum: f64 = x.iter().sum();
    let flip = if sum != 0.0 {
        sum < 0.0
    } else {
        x.iter().find(|v| **v != 0.0).is_some_and(|v| *v < 0.0)
    };
    if flip {
        x.neg_mut();
    }
    flip
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn test_matrix(d: usize, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(d, n, |i, j| ((i * 31 + j * 17) % 13) as f64 / 7.0 - 0.9 + (i == j) as u8 as f64)
    }

    #[test]
    fn exact_rank_one_gram_with_zero_rows() {
        let mut a = DVector::zeros(100);
        for i in (0..100).step_by(3).take(30) {
            a[i] = 1.0;
        }
        let (vals, vecs) = sym_eigen_desc(&a * a.transpose());
        assert!(vals.iter().chain(vecs.iter()).all(|x| x.is_finite()));
        assert_relative_eq!(vals[0], 30.0, epsilon = 1e-10);
        assert_relative_eq!(vecs.column(0).dot(&a).abs(), 30f64.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn gram_svd_matches_bidiagonal_svd() {
        let m = test_matrix(6, 11);
        let ours = svd_wide(&m).unwrap();
        let reference = m.clone().svd(true, true);
        let mut ref_s: Vec<f64> = reference.singular_values.iter().copied().collect();
        ref_s.sort_by(|a, b| b.total_cmp(a));
        for k in 0..6 {
            assert_relative_eq!(ours.singular_values[k], ref_s[k], epsilon = 1e-10);
        }
        let recon = &ours.u * DMatrix::from_diagonal(&ours.singular_values) * ours.v.transpose();
        assert_relative_eq!((recon - &m).norm() / m.norm(), 0.0, epsilon = 1e-12);
        let vtv = ours.v.transpose() * &ours.v;
        assert_relative_eq!((vtv - DMatrix::identity(6, 6)).norm(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn rank_deficient_columns_are_zeroed() {
        let a = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let b = DVector::from_vec(vec![0.5, 0.0, 1.0, 3.0]);
        let m = &a * b.transpose();
        let svd = svd_wide(&m).unwrap();
        assert_relative_eq!(svd.singular_values[0], a.norm() * b.norm(), epsilon = 1e-12);
        assert_eq!(svd.singular_values[1], 0.0);
        assert_eq!(svd.v.column(2).norm(), 0.0);
    }

    #[test]
    fn top_singular_both_orientations() {
        let m = test_matrix(5, 9);
        let (s1, u, v, gap) = top_singular(&m);
        let (s1t, ut, vt, _) = top_singular(&m.transpose());
        assert_relative_eq!(s1, s1t, epsilon = 1e-10);
        assert!(gap > 0.0);
        assert_relative_eq!(u.dot(&vt).abs(), 1.0, epsilon = 1e-10);
        assert_relative_eq!(v.dot(&ut).abs(), 1.0, epsilon = 1e-10);
        assert_relative_eq!((&m * &v).norm(), s1, epsilon = 1e-10);
    }

    #[test]
    fn median_conventions() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[2.0, 1.0]), 1.5);
        assert_eq!(median(&[4.0]), 4.0);
    }

    #[test]
    fn sign_alignment() {
        let mut x = DVector::from_vec(vec![-1.0, 0.5]);
        assert!(align_sign(&mut x));
        assert_eq!(x[0], 1.0);
        let mut z = DVector::from_vec(vec![0.0, -1.0, 1.0]);
        assert!(align_sign(&mut z));
        assert_eq!(z[1], 1.0);
    }
}
