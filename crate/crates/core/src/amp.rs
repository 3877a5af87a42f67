//! Sparse rank-one recovery by approximate message passing.
//!
//! ```text
//! w^t     = Y v^t - (n/d) u^{t-1}
//! u^t     = soft_threshold(w^t, tau_t)
//! v^{t+1} = Y^T u^t - c_t v^t
//! ```
//!
//! The Onsager coefficients `n/d` and `c_t` are calibrated for noise entries
//! of variance `1/d`. A bi-whitened matrix has noise variance `1/n`, so
//! [`run_amp`] rescales it by `sqrt(n/d)` first (see [`AmpConfig::rescale`]).
//! With a quantile threshold the iteration is positively homogeneous, and
//! [`run_amp`] keeps `||v^t|| = sqrt(n)` by rescaling the carried pair
//! `(v^t, u^{t-1})` after every step; this does not change any direction.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, align_sign};
use crate::stabilize::StabilizedMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OnsagerMode {
    /// `c_t = ||u^t||_0 / d`, the mean derivative of the soft threshold.
    #[default]
    Derivative,
    /// `c_t = ||w^t||_0 / d`.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    /// `tau` is the `ceil((1 - omega) d)`-th smallest `|w_i|`, so at most
    /// `ceil(omega d)` entries survive.
    #[default]
    Quantile,
    /// Smallest `x` with `#{|w_i| <= x} / d >= omega`.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AmpConfig {
    pub omega: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub onsager_mode: OnsagerMode,
    pub threshold_mode: ThresholdMode,
    /// Multiply the input by `sqrt(n/d)` so that whitened noise (variance
    /// `1/n`) matches the variance `1/d` the Onsager terms assume.
    pub rescale: bool,
}

impl Default for AmpConfig {
    fn default() -> Self {
        Self {
            omega: 0.3,
            max_iters: 100,
            tol: 1e-6,
            onsager_mode: OnsagerMode::Derivative,
            threshold_mode: ThresholdMode::Quantile,
            rescale: true,
        }
    }
}

impl AmpConfig {
    pub fn with_omega(omega: f64) -> Self {
        Self { omega, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega < 1.0) {
            return Err(Error::InvalidConfig(format!("omega must lie in (0,1), got {}", self.omega)));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Snapshot after `t` steps: `v` is `v^t`, `u` is `u^{t-1}`, and `w`, `tau`,
/// `c` are the quantities of the step that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct AmpState {
    pub t: usize,
    pub v: DVector<f64>,
    pub u: DVector<f64>,
    pub w: DVector<f64>,
    pub tau: f64,
    pub c: f64,
    pub rel_change: f64,
}

pub fn soft_threshold(w: &DVector<f64>, tau: f64) -> DVector<f64> {
    w.map(|x| x.signum() * (x.abs() - tau).max(0.0))
}

pub fn select_threshold(w: &DVector<f64>, omega: f64, mode: ThresholdMode) -> f64 {
    let d = w.len();
    if d == 0 {
        return 0.0;
    }
    let mut mags: Vec<f64> = w.iter().map(|x| x.abs()).collect();
    let k = match mode {
        ThresholdMode::Quantile => crate::ceil_fraction(1.0 - omega, d),
        ThresholdMode::Literal => crate::ceil_fraction(omega, d),
    }
    .clamp(1, d);
    *mags.select_nth_unstable_by(k - 1, f64::total_cmp).1
}

fn nnz(x: &DVector<f64>) -> usize {
    x.iter().filter(|v| **v != 0.0).count()
}

/// Spectral start `v^0 = sqrt(n) v1` with `u^{-1} = 0`, signed so that the
/// top left singular vector sums to a nonnegative value. Also returns the
/// gap between the two leading singular values.
pub fn init(y: &DMatrix<f64>) -> (AmpState, f64) {
    let (d, n) = y.shape();
    let (_, mut left, mut right, gap) = linalg::top_singular(y);
    if align_sign(&mut left) {
        right.neg_mut();
    }
    if gap < 1e-8 {
        log::warn!("top singular value is not separated (gap {gap:e}); AMP start is not unique");
    }
    let state = AmpState {
        t: 0,
        v: right * (n as f64).sqrt(),
        u: DVector::zeros(d),
        w: DVector::zeros(d),
        tau: 0.0,
        c: 0.0,
        rel_change: f64::INFINITY,
    };
    (state, gap)
}

/// One iteration exactly as written, without rescaling or normalization.
pub fn amp_step(state: &AmpState, y: &DMatrix<f64>, config: &AmpConfig) -> Result<AmpState> {
    let (d, n) = y.shape();
    let w = y * &state.v - &state.u * (n as f64 / d as f64);
    let tau = select_threshold(&w, config.omega, config.threshold_mode);
    let u = soft_threshold(&w, tau);
    let c = match config.onsager_mode {
        OnsagerMode::Derivative => nnz(&u) as f64 / d as f64,
        OnsagerMode::Literal => nnz(&w) as f64 / d as f64,
    };
    let v = y.tr_mul(&u) - &state.v * c;
    let prev = state.v.norm();
    let rel_change = if prev > 0.0 { (&v - &state.v).norm() / prev } else { f64::INFINITY };
    let finite = v.iter().chain(u.iter()).all(|x| x.is_finite()) && tau.is_finite();
    if !finite {
        return Err(Error::AmpDivergence { iteration: state.t });
    }
    Ok(AmpState { t: state.t + 1, v, u, w, tau, c, rel_change })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: usize,
    pub tau: f64,
    pub c_t: f64,
    pub nnz: usize,
    pub rel_change: f64,
    pub cos_v_truth: Option<f64>,
    pub cos_u_truth: Option<f64>,
}

pub fn write_trace_csv<W: Write>(trace: &[TraceRow], out: W) -> Result<()> {
    let with_truth = trace.first().is_some_and(|r| r.cos_v_truth.is_some());
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["t", "tau", "c_t", "nnz", "rel_change"];
    if with_truth {
        header.extend(["cos_v_truth", "cos_u_truth"]);
    }
    wtr.write_record(&header)?;
    for r in trace {
        let mut rec = vec![
            r.t.to_string(),
            crate::matrix::format_f64(r.tau),
            crate::matrix::format_f64(r.c_t),
            r.nnz.to_string(),
            crate::matrix::format_f64(r.rel_change),
        ];
        if with_truth {
            rec.push(crate::matrix::format_f64(r.cos_v_truth.unwrap_or(f64::NAN)));
            rec.push(crate::matrix::format_f64(r.cos_u_truth.unwrap_or(f64::NAN)));
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Directions to compare iterates against: `u` per row, `v` per column of the AMP input.
#[derive(Debug, Clone, Copy)]
pub struct Truth<'a> {
    pub u: &'a DVector<f64>,
    pub v: &'a DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct AmpRun {
    /// Final `u^L` on the scale of the input matrix.
    pub u: DVector<f64>,
    /// Final `v^L`, with `||v^L|| = sqrt(n)`.
    pub v: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceRow>,
    pub warnings: Vec<String>,
}

fn cosine_or_zero(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let den = a.norm() * b.norm();
    if den > 0.0 {
        a.dot(b) / den
    } else {
        0.0
    }
}

pub fn run_amp(y: &DMatrix<f64>, config: &AmpConfig, truth: Option<Truth<'_>>) -> Result<AmpRun> {
    config.validate()?;
    let (d, n) = y.shape();
    if let Some(t) = truth {
        if t.u.len() != d || t.v.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "truth lengths ({}, {}) vs matrix {d}x{n}",
                t.u.len(),
                t.v.len()
            )));
        }
    }
    let scaled;
    let y = if config.rescale {
        scaled = y * (n as f64 / d as f64).sqrt();
        &scaled
    } else {
        y
    };
    let target = (n as f64).sqrt();

    let mut warnings = Vec::new();
    let (mut state, gap) = init(y);
    if gap < 1e-8 {
        warnings.push(format!("top singular value gap {gap:e} below 1e-8"));
    }
    let mut trace = Vec::with_capacity(config.max_iters);
    let mut converged = false;
    for _ in 0..config.max_iters {
        let mut next = amp_step(&state, y, config)?;
        let norm = next.v.norm();
        if norm > 0.0 {
            let k = target / norm;
            next.v *= k;
            next.u *= k;
            next.w *= k;
            next.tau *= k;
            next.rel_change = (&next.v - &state.v).norm() / state.v.norm().max(f64::MIN_POSITIVE);
        }
        trace.push(TraceRow {
            t: state.t,
            tau: next.tau,
            c_t: next.c,
            nnz: nnz(&next.u),
            rel_change: next.rel_change,
            cos_v_truth: truth.map(|t| cosine_or_zero(&next.v, t.v)),
            cos_u_truth: truth.map(|t| cosine_or_zero(&next.u, t.u)),
        });
        state = next;
        if norm == 0.0 {
            warnings.push(format!("AMP iterate vanished at iteration {}", state.t));
            break;
        }
        if state.rel_change < config.tol {
            converged = true;
            break;
        }
    }

    let mut u = state.u;
    let mut v = state.v;
    if u.iter().sum::<f64>() < 0.0 {
        u.neg_mut();
        v.neg_mut();
    }
    if config.rescale {
        // back on the scale of the caller's matrix
        u *= (d as f64 / n as f64).sqrt();
    }
    Ok(AmpRun { u, v, iterations: state.t, converged, trace, warnings })
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregationResult {
    pub v_hat: Vec<f64>,
    pub u_hat: Vec<f64>,
    pub omega_used: f64,
    pub iterations_run: usize,
    pub converged: bool,
    pub trace: Vec<TraceRow>,
    pub warnings: Vec<String>,
}

/// Maps AMP output back through the whitening: `v_hat = F v^L`, `u_hat = H u^L`.
pub fn renormalize(run: AmpRun, stab: &StabilizedMatrix, omega: f64) -> Result<AggregationResult> {
    if run.u.len() != stab.n_models() || run.v.len() != stab.n_samples() {
        return Err(Error::DimensionMismatch(format!(
            "AMP output ({}, {}) vs stabilized {}x{}",
            run.u.len(),
            run.v.len(),
            stab.n_models(),
            stab.n_samples()
        )));
    }
    let u_hat = run.u.component_mul(&stab.row_scale());
    let v_hat = run.v.component_mul(&stab.col_scale());
    Ok(AggregationResult {
        v_hat: v_hat.iter().copied().collect(),
        u_hat: u_hat.iter().copied().collect(),
        omega_used: omega,
        iterations_run: run.iterations,
        converged: run.converged,
        trace: run.trace,
        warnings: run.warnings,
    })
}

pub fn aggregate_stabilized(stab: &StabilizedMatrix, config: &AmpConfig) -> Result<AggregationResult> {
    let run = run_amp(&stab.values, config, None)?;
    renormalize(run, stab, config.omega)
}
