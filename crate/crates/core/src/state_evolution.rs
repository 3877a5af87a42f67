//! Scalar state evolution for the sparse rank-one AMP iteration.
//!
//! With `U ~ nu_u` (point mass at 0 w.p. `1 - omega`, `Unif(0, c)` w.p.
//! `omega`, unit second moment) and `G ~ N(0, 1)` independent:
//!
//! ```text
//! mu_bar_t      = lambda * alpha * E[U g_t(mu_t U + sigma_t G)]
//! sigma_bar_t^2 = alpha * E[g_t(mu_t U + sigma_t G)^2]
//! mu_{t+1}      = lambda * mu_bar_t
//! sigma_{t+1}^2 = mu_bar_t^2 + sigma_bar_t^2
//! ```
//!
//! started from the spectral initialization. The predicted cosines of the
//! AMP iterates with the truth are `mu_{t+1} / (lambda sigma_{t+1})` for the
//! sample side and `mu_bar_t / (sqrt(alpha) lambda sigma_bar_t)` for the
//! model side.
//!
//! With a quantile-matched threshold the soft-threshold map is positively
//! homogeneous, so the recursion is too: `(mu, sigma)` can grow or shrink
//! geometrically while the cosines settle. In that mode each step is
//! renormalized to `mu^2 + sigma^2 = 1` and the per-step growth factor is
//! recorded; fixed-point residuals are evaluated on the normalized system.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Successive `(mu, sigma)` change below which a fixed point is declared.
pub const FIXED_POINT_TOL: f64 = 1e-8;

const QUAD_NODES: usize = 64;

/// Sparse nonnegative weight law: 0 w.p. `1 - omega`, `Unif(0, c)` w.p. `omega`,
/// with `c = sqrt(3 / omega)` so that `E[U^2] = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UMixture {
    pub omega: f64,
    pub c: f64,
}

impl UMixture {
    pub fn new(omega: f64) -> Result<Self> {
        if !(omega > 0.0 && omega < 1.0) {
            return Err(Error::InvalidConfig(format!("omega must lie in (0,1), got {omega}")));
        }
        Ok(Self { omega, c: (3.0 / omega).sqrt() })
    }

    pub fn second_moment(&self) -> f64 {
        self.omega * self.c * self.c / 3.0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if rng.random::<f64>() < self.omega {
            rng.random::<f64>() * self.c
        } else {
            0.0
        }
    }
}

pub fn nu_u_mixture(omega: f64) -> Result<UMixture> {
    UMixture::new(omega)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TauPolicy {
    /// Same threshold at every step.
    Fixed(f64),
    /// Threshold at the `(1 - omega)` quantile of `|mu U + sigma G|`, so that a
    /// fraction `omega` survives, mirroring the AMP quantile threshold.
    QuantileMatched,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Expectation {
    /// Closed-form Gaussian moments of the soft threshold, integrated over the
    /// uniform component with Gauss-Legendre quadrature.
    Quadrature,
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub omega: f64,
    pub tau_policy: TauPolicy,
    pub iters: usize,
    pub expectation: Expectation,
    /// Allows `lambda^2 sqrt(alpha) <= 1`; the recursion then starts from `mu_0 = 0`.
    pub allow_below_threshold: bool,
}

impl SeConfig {
    pub fn new(lambda: f64, alpha: f64, omega: f64) -> Self {
        Self {
            lambda,
            alpha,
            omega,
            tau_policy: TauPolicy::QuantileMatched,
            iters: 100,
            expectation: Expectation::Quadrature,
            allow_below_threshold: false,
        }
    }

    fn validate(&self) -> Result<UMixture> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("alpha must be positive, got {}", self.alpha)));
        }
        if let TauPolicy::Fixed(tau) = self.tau_policy {
            if !(tau >= 0.0) {
                return Err(Error::InvalidConfig(format!("fixed threshold must be >= 0, got {tau}")));
            }
        }
        if let Expectation::MonteCarlo { samples, .. } = self.expectation {
            if samples < 2 {
                return Err(Error::InvalidConfig("Monte Carlo needs at least 2 samples".into()));
            }
        }
        UMixture::new(self.omega)
    }

    fn homogeneous(&self) -> bool {
        matches!(self.tau_policy, TauPolicy::QuantileMatched)
    }
}

/// Spectral initial condition `(mu_0, sigma_0)`; `mu_0^2 + sigma_0^2 = 1`.
pub fn se_init(lambda: f64, alpha: f64, allow_below_threshold: bool) -> Result<(f64, f64)> {
    let snr = lambda * lambda * alpha.sqrt();
    if snr <= 1.0 && !allow_below_threshold {
        return Err(Error::BelowThreshold(snr));
    }
    let l2 = lambda.powi(-2);
    let l4a = lambda.powi(-4) / alpha;
    if 1.0 - l4a <= 0.0 {
        return Ok((0.0, 1.0));
    }
    let mu0 = ((1.0 - l4a) / (1.0 + l2)).sqrt();
    let sigma0 = ((l2 + l4a) / (1.0 + l2)).sqrt();
    Ok((mu0, sigma0))
}

fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `(E[g(X)], E[g(X)^2])` for `X ~ N(m, s^2)` and soft threshold `g` at `tau`.
pub fn soft_threshold_gaussian_moments(m: f64, s: f64, tau: f64) -> (f64, f64) {
    if s == 0.0 {
        let g = m.signum() * (m.abs() - tau).max(0.0);
        return (g, g * g);
    }
    let a = (m - tau) / s;
    let b = (-m - tau) / s;
    let (pa, fa) = (norm_cdf(a), norm_pdf(a));
    let (pb, fb) = (norm_cdf(b), norm_pdf(b));
    let pos1 = s * (a * pa + fa);
    let neg1 = s * (b * pb + fb);
    let pos2 = s * s * ((a * a + 1.0) * pa + a * fa);
    let neg2 = s * s * ((b * b + 1.0) * pb + b * fb);
    (pos1 - neg1, pos2 + neg2)
}

/// `P(|X| > tau)` for `X ~ N(m, s^2)`.
fn gaussian_exceedance(m: f64, s: f64, tau: f64) -> f64 {
    if s == 0.0 {
        return if m.abs() > tau { 1.0 } else { 0.0 };
    }
    norm_cdf((m - tau) / s) + norm_cdf((-m - tau) / s)
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pm = if m == 0 { 1.0 } else if m == 1 { x } else { p1 };
            let pm1 = if m == 1 { 1.0 } else { p0 };
            dp = m as f64 * (x * pm - pm1) / (x * x - 1.0);
            let dx = pm / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[m - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    (nodes, weights)
}

/// Integrates `f` over `[lo, hi]` with a Gauss-Legendre rule, splitting at `breaks`.
fn integrate<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, breaks: &[f64], rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let mut points = vec![lo];
    points.extend(breaks.iter().copied().filter(|b| *b > lo && *b < hi));
    points.push(hi);
    points.sort_by(f64::total_cmp);
    let (nodes, weights) = rule;
    points
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            nodes.iter().zip(weights).map(|(x, wt)| wt * f(mid + half * x)).sum::<f64>() * half
        })
        .sum()
}

/// Expectations needed by one recursion step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    /// `E[U g(mu U + sigma G)]`
    pub u_g: f64,
    /// `E[g(mu U + sigma G)^2]`
    pub g2: f64,
    /// Monte Carlo standard errors (zero for quadrature).
    pub se_u_g: f64,
    pub se_g2: f64,
}

pub fn quadrature_moments(mix: &UMixture, mu: f64, sigma: f64, tau: f64) -> Moments {
    let rule = gauss_legendre(QUAD_NODES);
    let breaks: Vec<f64> = if mu > 0.0 { vec![tau / mu] } else { vec![] };
    let c = mix.c;
    let u_g = mix.omega / c
        * integrate(|u| u * soft_threshold_gaussian_moments(mu * u, sigma, tau).0, 0.0, c, &breaks, &rule);
    let g2_uniform = integrate(|u| soft_threshold_gaussian_moments(mu * u, sigma, tau).1, 0.0, c, &breaks, &rule) / c;
    let g2_zero = soft_threshold_gaussian_moments(0.0, sigma, tau).1;
    Moments {
        u_g,
        g2: (1.0 - mix.omega) * g2_zero + mix.omega * g2_uniform,
        se_u_g: 0.0,
        se_g2: 0.0,
    }
}

fn draw_pairs(mix: &UMixture, samples: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unif = Uniform::new(0.0, 1.0).expect("unit interval");
    let mut us = Vec::with_capacity(samples);
    let mut gs = Vec::with_capacity(samples);
    for _ in 0..samples {
        let u = if unif.sample(&mut rng) < mix.omega { unif.sample(&mut rng) * mix.c } else { 0.0 };
        us.push(u);
        gs.push(rng.sample::<f64, _>(StandardNormal));
    }
    (us, gs)
}

fn mc_from_pairs(us: &[f64], gs: &[f64], mu: f64, sigma: f64, tau: f64) -> Moments {
    let n = us.len() as f64;
    let (mut s1, mut s1sq, mut s2, mut s2sq) = (0.0, 0.0, 0.0, 0.0);
    for (u, g) in us.iter().zip(gs) {
        let x = mu * u + sigma * g;
        let y = x.signum() * (x.abs() - tau).max(0.0);
        let a = u * y;
        let b = y * y;
        s1 += a;
        s1sq += a * a;
        s2 += b;
        s2sq += b * b;
    }
    let m1 = s1 / n;
    let m2 = s2 / n;
    let var1 = (s1sq / n - m1 * m1).max(0.0) * n / (n - 1.0);
    let var2 = (s2sq / n - m2 * m2).max(0.0) * n / (n - 1.0);
    Moments { u_g: m1, g2: m2, se_u_g: (var1 / n).sqrt(), se_g2: (var2 / n).sqrt() }
}

/// Monte Carlo estimate of the step expectations with standard errors.
pub fn monte_carlo_moments(mix: &UMixture, mu: f64, sigma: f64, tau: f64, samples: usize, seed: u64) -> Moments {
    let (us, gs) = draw_pairs(mix, samples, seed);
    mc_from_pairs(&us, &gs, mu, sigma, tau)
}

/// `P(|mu U + sigma G| > tau)` under the mixture law.
pub fn exceedance(mix: &UMixture, mu: f64, sigma: f64, tau: f64) -> f64 {
    let rule = gauss_legendre(QUAD_NODES);
    let breaks: Vec<f64> = if mu > 0.0 { vec![tau / mu] } else { vec![] };
    let uniform_part = integrate(|u| gaussian_exceedance(mu * u, sigma, tau), 0.0, mix.c, &breaks, &rule) / mix.c;
    (1.0 - mix.omega) * gaussian_exceedance(0.0, sigma, tau) + mix.omega * uniform_part
}

/// Threshold at which a fraction `omega` of `|mu U + sigma G|` survives, by bisection.
pub fn quantile_threshold(mix: &UMixture, mu: f64, sigma: f64) -> f64 {
    let target = mix.omega;
    let mut lo = 0.0;
    let mut hi = mu.abs() * mix.c + 40.0 * sigma + 1e-300;
    if exceedance(mix, mu, sigma, lo) <= target {
        return 0.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if exceedance(mix, mu, sigma, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.max(1e-300) {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeStep {
    pub tau: f64,
    pub mu_bar: f64,
    pub sigma_bar: f64,
    pub mu_next: f64,
    pub sigma_next: f64,
}

/// One step of the recursion from `(mu, sigma)`. `step` only seeds Monte Carlo draws.
pub fn se_step(mu: f64, sigma: f64, config: &SeConfig, step: usize) -> Result<SeStep> {
    let mix = config.validate()?;
    if !(sigma > 0.0) {
        return Err(Error::InvalidConfig(format!("sigma_t must be positive, got {sigma}")));
    }
    let (tau, m) = match config.expectation {
        Expectation::Quadrature => {
            let tau = match config.tau_policy {
                TauPolicy::Fixed(t) => t,
                TauPolicy::QuantileMatched => quantile_threshold(&mix, mu, sigma),
            };
            (tau, quadrature_moments(&mix, mu, sigma, tau))
        }
        Expectation::MonteCarlo { samples, seed } => {
            let (us, gs) = draw_pairs(&mix, samples, seed.wrapping_add(step as u64));
            let tau = match config.tau_policy {
                TauPolicy::Fixed(t) => t,
                TauPolicy::QuantileMatched => {
                    let mut mags: Vec<f64> = us.iter().zip(&gs).map(|(u, g)| (mu * u + sigma * g).abs()).collect();
                    let k = ((1.0 - mix.omega) * samples as f64).ceil() as usize;
                    let k = k.clamp(1, samples) - 1;
                    *mags.select_nth_unstable_by(k, f64::total_cmp).1
                }
            };
            (tau, mc_from_pairs(&us, &gs, mu, sigma, tau))
        }
    };
    let mu_bar = config.lambda * config.alpha * m.u_g;
    let sigma_bar = (config.alpha * m.g2).sqrt();
    if !(mu_bar.is_finite() && sigma_bar.is_finite()) {
        return Err(Error::NonFiniteExpectation(step));
    }
    let mu_next = config.lambda * mu_bar;
    let sigma_next = (mu_bar * mu_bar + sigma_bar * sigma_bar).sqrt();
    Ok(SeStep { tau, mu_bar, sigma_bar, mu_next, sigma_next })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeRow {
    pub t: usize,
    pub mu: f64,
    pub sigma: f64,
    pub tau: f64,
    pub mu_bar: f64,
    pub sigma_bar: f64,
    /// Predicted `cos(v^{t+1}, v)`: `mu_{t+1} / (lambda sigma_{t+1})`.
    pub cos_v: f64,
    /// Predicted `cos(u^t, u)`: `mu_bar_t / (sqrt(alpha) lambda sigma_bar_t)`.
    pub cos_u: f64,
    /// Growth of `(mu, sigma)` over this step (always 1 for a fixed threshold).
    pub growth: f64,
    /// Max violation of the fixed-point system at this step's quantities.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedPoint {
    pub mu: f64,
    pub sigma: f64,
    pub mu_bar: f64,
    pub sigma_bar: f64,
    pub tau: f64,
    pub growth: f64,
    pub cos_v: f64,
    pub cos_u: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeTrace {
    pub config: SeConfig,
    pub mu0: f64,
    pub sigma0: f64,
    pub rows: Vec<SeRow>,
    pub converged: bool,
    /// Last iterate; a true fixed point when `converged`.
    pub fixed_point: FixedPoint,
}

fn clamp_cos(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(-1.0, 1.0)
    }
}

/// Max absolute violation of
/// `mu = lambda mu_bar / r`, `sigma^2 = (mu_bar^2 + sigma_bar^2) / r^2`,
/// `mu_bar = lambda alpha E[U g]`, `sigma_bar^2 = alpha E[g^2]`,
/// with the expectations re-evaluated at `(mu, sigma, tau)`.
pub fn system_residual(
    config: &SeConfig,
    mu: f64,
    sigma: f64,
    mu_bar: f64,
    sigma_bar: f64,
    tau: f64,
    growth: f64,
) -> Result<f64> {
    let mix = config.validate()?;
    let m = match config.expectation {
        Expectation::Quadrature => quadrature_moments(&mix, mu, sigma, tau),
        Expectation::MonteCarlo { samples, seed } => monte_carlo_moments(&mix, mu, sigma, tau, samples, seed),
    };
    let r1 = mu - config.lambda * mu_bar / growth;
    let r2 = sigma * sigma - (mu_bar * mu_bar + sigma_bar * sigma_bar) / (growth * growth);
    let r3 = mu_bar - config.lambda * config.alpha * m.u_g;
    let r4 = sigma_bar * sigma_bar - config.alpha * m.g2;
    Ok([r1, r2, r3, r4].iter().fold(0.0f64, |acc, r| acc.max(r.abs())))
}

pub fn se_run(config: &SeConfig) -> Result<SeTrace> {
    config.validate()?;
    let (mu0, sigma0) = se_init(config.lambda, config.alpha, config.allow_below_threshold)?;
    let homogeneous = config.homogeneous();
    let scale_lambda = config.lambda;
    let sqrt_alpha = config.alpha.sqrt();

    let (mut mu, mut sigma) = (mu0, sigma0);
    let mut rows = Vec::with_capacity(config.iters);
    let mut converged = false;
    for t in 0..config.iters.max(1) {
        let step = se_step(mu, sigma, config, t)?;
        if step.sigma_next == 0.0 {
            // total shrinkage: the recursion sits at the trivial fixed point
            rows.push(SeRow {
                t,
                mu,
                sigma,
                tau: step.tau,
                mu_bar: 0.0,
                sigma_bar: 0.0,
                cos_v: 0.0,
                cos_u: 0.0,
                growth: 0.0,
                residual: 0.0,
            });
            let fixed_point = FixedPoint {
                mu: 0.0,
                sigma: 0.0,
                mu_bar: 0.0,
                sigma_bar: 0.0,
                tau: step.tau,
                growth: 1.0,
                cos_v: 0.0,
                cos_u: 0.0,
                residual: 0.0,
            };
            return Ok(SeTrace { config: *config, mu0, sigma0, rows, converged: true, fixed_point });
        }
        if !(step.sigma_next.is_finite() && step.mu_next.is_finite()) {
            return Err(Error::NonFiniteExpectation(t));
        }
        let growth = if homogeneous { step.mu_next.hypot(step.sigma_next) } else { 1.0 };
        let (next_mu, next_sigma) = (step.mu_next / growth, step.sigma_next / growth);
        let residual = (mu - next_mu).abs().max((sigma * sigma - next_sigma * next_sigma).abs());
        rows.push(SeRow {
            t,
            mu,
            sigma,
            tau: step.tau,
            mu_bar: step.mu_bar,
            sigma_bar: step.sigma_bar,
            cos_v: clamp_cos(step.mu_next / (scale_lambda * step.sigma_next)),
            cos_u: clamp_cos(step.mu_bar / (sqrt_alpha * scale_lambda * step.sigma_bar)),
            growth,
            residual,
        });
        let delta = (next_mu - mu).abs().max((next_sigma - sigma).abs());
        mu = next_mu;
        sigma = next_sigma;
        if delta < FIXED_POINT_TOL {
            converged = true;
            break;
        }
    }

    // evaluate the fixed point at the final (mu, sigma)
    let last = se_step(mu, sigma, config, rows.len())?;
    let growth = if homogeneous { last.mu_next.hypot(last.sigma_next) } else { 1.0 };
    let residual = system_residual(config, mu, sigma, last.mu_bar, last.sigma_bar, last.tau, growth)?;
    let fixed_point = FixedPoint {
        mu,
        sigma,
        mu_bar: last.mu_bar,
        sigma_bar: last.sigma_bar,
        tau: last.tau,
        growth,
        cos_v: clamp_cos(last.mu_next / (scale_lambda * last.sigma_next)),
        cos_u: clamp_cos(last.mu_bar / (sqrt_alpha * scale_lambda * last.sigma_bar)),
        residual,
    };
    Ok(SeTrace { config: *config, mu0, sigma0, rows, converged, fixed_point })
}
