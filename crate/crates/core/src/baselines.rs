//! Reference aggregators: simple average, PCA on the Gram matrix, and rank-one HeteroPCA.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{align_sign, sym_eigen_desc};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Average,
    Pca,
    HeteroPca,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Average => "average",
            Method::Pca => "pca",
            Method::HeteroPca => "hetero_pca",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BaselineResult {
    pub v_hat: Vec<f64>,
    /// Unit-norm model weights; absent for the simple average.
    pub u_hat: Option<Vec<f64>>,
    pub method: Method,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

/// Mean of the normalized rows.
pub fn simple_average(ybar: &DMatrix<f64>) -> BaselineResult {
    let d = ybar.nrows() as f64;
    let v_hat = ybar.row_sum().transpose() / d;
    BaselineResult {
        v_hat: v_hat.iter().copied().collect(),
        u_hat: None,
        method: Method::Average,
        iterations: 0,
        converged: true,
        warnings: Vec::new(),
    }
}

fn top_eigvec(m: DMatrix<f64>, warnings: &mut Vec<String>) -> (f64, DVector<f64>) {
    let (vals, vecs) = sym_eigen_desc(m);
    if vals.len() > 1 && vals[0] - vals[1] < 1e-8 {
        warnings.push(format!("leading eigengap {:e} below 1e-8", vals[0] - vals[1]));
    }
    let mut u = vecs.column(0).into_owned();
    align_sign(&mut u);
    (vals[0], u)
}

fn from_weights(ybar: &DMatrix<f64>, u: DVector<f64>, method: Method, iterations: usize, converged: bool, warnings: Vec<String>) -> BaselineResult {
    let v_hat = ybar.tr_mul(&u);
    BaselineResult {
        v_hat: v_hat.iter().copied().collect(),
        u_hat: Some(u.iter().copied().collect()),
        method,
        iterations,
        converged,
        warnings,
    }
}

/// Top eigenvector of `G = Ybar Ybar^T`, `v_hat = Ybar^T u_hat`.
pub fn pca_aggregate(ybar: &DMatrix<f64>) -> BaselineResult {
    let mut warnings = Vec::new();
    let (_, u) = top_eigvec(ybar * ybar.transpose(), &mut warnings);
    from_weights(ybar, u, Method::Pca, 0, true, warnings)
}

#[derive(Debug, Clone)]
pub struct HeteroPcaFit {
    pub u: DVector<f64>,
    pub completed: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Rank-one HeteroPCA on a symmetric matrix: start from `G` with its diagonal
/// deleted and repeatedly replace the diagonal with that of the leading
/// rank-one approximation. The returned vector is the top eigenvector of the
/// last matrix formed.
pub fn hetero_pca_gram(g: &DMatrix<f64>, max_iters: usize, tol: f64) -> HeteroPcaFit {
    let d = g.nrows();
    let mut m = g.clone();
    m.fill_diagonal(0.0);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        let (vals, vecs) = sym_eigen_desc(m.clone());
        let top = vecs.column(0);
        let mut change: f64 = 0.0;
        for i in 0..d {
            let new = vals[0] * top[i] * top[i];
            change = change.max((new - m[(i, i)]).abs());
            m[(i, i)] = new;
        }
        iterations += 1;
        if change < tol {
            converged = true;
            break;
        }
    }
    let (_, vecs) = sym_eigen_desc(m.clone());
    let mut u = vecs.column(0).into_owned();
    align_sign(&mut u);
    HeteroPcaFit { u, completed: m, iterations, converged }
}

/// Number of diagonal imputations for [`hetero_pca_aggregate`].
pub const HETERO_MAX_ITERS: usize = 100;
pub const HETERO_TOL: f64 = 1e-8;

pub fn hetero_pca_aggregate(ybar: &DMatrix<f64>, max_iters: usize, tol: f64) -> BaselineResult {
    let mut warnings = Vec::new();
    if max_iters < 1 {
        warnings.push("max_iters < 1 treated as 1".to_string());
    }
    let g = ybar * ybar.transpose();
    let fit = if max_iters <= 1 {
        // one pass: top eigenvector of the diagonal-deleted Gram matrix
        let mut m = g;
        m.fill_diagonal(0.0);
        let (_, u) = top_eigvec(m.clone(), &mut warnings);
        HeteroPcaFit { u, completed: m, iterations: 1, converged: false }
    } else {
        hetero_pca_gram(&g, max_iters, tol)
    };
    if !fit.converged && max_iters > 1 {
        warnings.push(format!("HeteroPCA did not converge in {} iterations", fit.iterations));
    }
    from_weights(ybar, fit.u, Method::HeteroPca, fit.iterations, fit.converged, warnings)
}
