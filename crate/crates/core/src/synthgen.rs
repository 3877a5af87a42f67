//! Synthetic prediction matrices with known ground truth.
//!
//! Each model row is `Y_i = c_i (v u_i + sigma_i F w_i)` with
//! `F = diag(f^{1/2})` and `w_i ~ N(0, I/n)`. Informative models share the
//! weight `sqrt(alpha / s)` with `alpha = d / n`; the remaining `d - s`
//! models carry pure noise.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::PredictionMatrix;
use crate::state_evolution::UMixture;

/// A named one-dimensional distribution, written as e.g. `uniform(0,2)`,
/// `const(1)`, `lognormal(0,0.5)` or `normal(0,1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Law {
    Constant(f64),
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
    LogNormal { mu: f64, sigma: f64 },
}

impl Law {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Law::Constant(x) => x.is_finite(),
            Law::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
            Law::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
            Law::LogNormal { mu, sigma } => mu.is_finite() && sigma.is_finite() && sigma > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidLaw(self.to_string()))
        }
    }

    /// Laws for noise levels and scales must put all their mass on (0, inf).
    /// `allow_zero` admits the degenerate `const(0)` (noise-free models).
    fn validate_positive(&self, allow_zero: bool) -> Result<()> {
        self.validate()?;
        let ok = match *self {
            Law::Constant(x) => x > 0.0 || (allow_zero && x == 0.0),
            Law::Uniform { lo, .. } => lo >= 0.0,
            Law::Normal { .. } => false,
            Law::LogNormal { .. } => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidLaw(format!("{self} (must be strictly positive)")))
        }
    }

    fn sample_n<R: Rng>(&self, rng: &mut R, count: usize, positive: bool) -> Vec<f64> {
        match *self {
            Law::Constant(x) => vec![x; count],
            Law::Uniform { lo, hi } => {
                let dist = Uniform::new(lo, hi).expect("validated uniform law");
                (0..count)
                    .map(|_| loop {
                        let x = dist.sample(rng);
                        if !positive || x > 0.0 {
                            break x;
                        }
                    })
                    .collect()
            }
            Law::Normal { mean, sd } => {
                let dist = Normal::new(mean, sd).expect("validated normal law");
                (0..count).map(|_| dist.sample(rng)).collect()
            }
            Law::LogNormal { mu, sigma } => {
                let dist = LogNormal::new(mu, sigma).expect("validated lognormal law");
                (0..count).map(|_| dist.sample(rng)).collect()
            }
        }
    }
}

impl fmt::Display for Law {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Law::Constant(x) => write!(f, "const({x})"),
            Law::Uniform { lo, hi } => write!(f, "uniform({lo},{hi})"),
            Law::Normal { mean, sd } => write!(f, "normal({mean},{sd})"),
            Law::LogNormal { mu, sigma } => write!(f, "lognormal({mu},{sigma})"),
        }
    }
}

impl FromStr for Law {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidLaw(s.to_owned());
        let s_trim = s.trim();
        let open = s_trim.find('(').ok_or_else(bad)?;
        if !s_trim.ends_with(')') {
            return Err(bad());
        }
        let name = s_trim[..open].trim().to_ascii_lowercase();
        let args: Vec<f64> = s_trim[open + 1..s_trim.len() - 1]
            .split(',')
            .map(|a| a.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        let law = match (name.as_str(), args.as_slice()) {
            ("const" | "constant", [x]) => Law::Constant(*x),
            ("uniform" | "unif", [lo, hi]) => Law::Uniform { lo: *lo, hi: *hi },
            ("normal" | "gaussian", [m, sd]) => Law::Normal { mean: *m, sd: *sd },
            ("lognormal", [mu, sigma]) => Law::LogNormal { mu: *mu, sigma: *sigma },
            _ => return Err(bad()),
        };
        law.validate()?;
        Ok(law)
    }
}

impl TryFrom<String> for Law {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Law> for String {
    fn from(law: Law) -> String {
        law.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseRegime {
    Homoskedastic,
    Heteroskedastic,
}

impl NoiseRegime {
    pub fn as_str(&self) -> &'static str {
        match self {
            NoiseRegime::Homoskedastic => "homoskedastic",
            NoiseRegime::Heteroskedastic => "heteroskedastic",
        }
    }
}

/// Law of the entries of `w_i`. Both choices have variance `1/n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    #[default]
    Gaussian,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub d: usize,
    /// Target fraction of informative models; `s = ceil(omega * d)`.
    pub omega: f64,
    pub regime: NoiseRegime,
    pub v_law: Law,
    /// Overrides the regime default for `sigma_i`.
    pub sigma_law: Option<Law>,
    /// Overrides the regime default for `f_j`.
    pub f_law: Option<Law>,
    pub c_law: Law,
    /// When set, `v` is rescaled to have Euclidean norm `lambda`.
    pub lambda: Option<f64>,
    pub noise: NoiseKind,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(n: usize, d: usize, omega: f64, regime: NoiseRegime, seed: u64) -> Self {
        Self {
            n,
            d,
            omega,
            regime,
            v_law: Law::Uniform { lo: -1.0, hi: 1.0 },
            sigma_law: None,
            f_law: None,
            c_law: Law::Constant(1.0),
            lambda: None,
            noise: NoiseKind::Gaussian,
            seed,
        }
    }

    pub fn sparsity(&self) -> usize {
        crate::ceil_fraction(self.omega, self.d)
    }

    fn regime_default(&self) -> Law {
        match self.regime {
            NoiseRegime::Homoskedastic => Law::Constant(1.0),
            NoiseRegime::Heteroskedastic => Law::Uniform { lo: 0.0, hi: 2.0 },
        }
    }

    pub fn effective_sigma_law(&self) -> Law {
        self.sigma_law.unwrap_or_else(|| self.regime_default())
    }

    pub fn effective_f_law(&self) -> Law {
        self.f_law.unwrap_or_else(|| self.regime_default())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.d < 2 {
            return Err(Error::InvalidConfig(format!("need n, d >= 2, got n={}, d={}", self.n, self.d)));
        }
        if !(self.omega > 0.0 && self.omega < 1.0) {
            return Err(Error::InvalidConfig(format!("omega must lie in (0,1), got {}", self.omega)));
        }
        if self.sparsity() == 0 {
            return Err(Error::InvalidConfig("omega * d rounds to zero informative models".into()));
        }
        if let Some(l) = self.lambda {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidConfig(format!("lambda must be positive, got {l}")));
            }
        }
        self.v_law.validate()?;
        self.effective_sigma_law().validate_positive(true)?;
        self.effective_f_law().validate_positive(false)?;
        self.c_law.validate_positive(false)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub v: Vec<f64>,
    /// `true` for informative models.
    pub support: Vec<bool>,
    /// Common value of the nonzero entries of `u`.
    pub magnitude: f64,
    pub sigma: Vec<f64>,
    pub f: Vec<f64>,
    pub c: Vec<f64>,
    pub s: usize,
}

impl GroundTruth {
    pub fn u(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.support.len(),
            self.support.iter().map(|&on| if on { self.magnitude } else { 0.0 }),
        )
    }

    pub fn v(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.v)
    }

    /// `||v||_2`, the signal strength.
    pub fn lambda(&self) -> f64 {
        self.v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Model-level variance component `h0_i = sigma_i^2 / (lambda^2 u_i^2 + sigma_i^2)`.
    pub fn h0(&self) -> DVector<f64> {
        let l2 = self.lambda().powi(2);
        let u = self.u();
        DVector::from_iterator(
            self.sigma.len(),
            self.sigma.iter().zip(u.iter()).map(|(s, ui)| s * s / (l2 * ui * ui + s * s)),
        )
    }

    /// Noise-free normalized weights `u_i / sqrt(lambda^2 u_i^2 + sigma_i^2)`.
    pub fn u_bar(&self) -> DVector<f64> {
        let l2 = self.lambda().powi(2);
        let u = self.u();
        DVector::from_iterator(
            self.sigma.len(),
            self.sigma.iter().zip(u.iter()).map(|(s, ui)| ui / (l2 * ui * ui + s * s).sqrt()),
        )
    }
}

pub fn generate(config: &SynthConfig) -> Result<(PredictionMatrix, GroundTruth)> {
    config.validate()?;
    let SynthConfig { n, d, .. } = *config;
    let s = config.sparsity();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut v = config.v_law.sample_n(&mut rng, n, false);
    if let Some(lambda) = config.lambda {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidConfig("signal vector drawn as all zeros".into()));
        }
        v.iter_mut().for_each(|x| *x *= lambda / norm);
    }

    let mut support = vec![false; d];
    for i in index::sample(&mut rng, d, s) {
        support[i] = true;
    }
    let magnitude = ((d as f64 / n as f64) / s as f64).sqrt();

    let sigma = config.effective_sigma_law().sample_n(&mut rng, d, true);
    let f = config.effective_f_law().sample_n(&mut rng, n, true);
    let c = config.c_law.sample_n(&mut rng, d, true);

    let noise_sd = (1.0 / n as f64).sqrt();
    let sqrt_f: Vec<f64> = f.iter().map(|x| x.sqrt()).collect();
    let uniform_half_width = (3.0 / n as f64).sqrt();
    let uniform_noise = Uniform::new(-uniform_half_width, uniform_half_width).expect("valid width");

    let mut values = DMatrix::zeros(d, n);
    for i in 0..d {
        let ui = if support[i] { magnitude } else { 0.0 };
        for j in 0..n {
            let w = match config.noise {
                NoiseKind::Gaussian => noise_sd * rng.sample::<f64, _>(StandardNormal),
                NoiseKind::Uniform => uniform_noise.sample(&mut rng),
            };
            values[(i, j)] = c[i] * (v[j] * ui + sigma[i] * sqrt_f[j] * w);
        }
    }

    let y = PredictionMatrix::from_values(values)?;
    Ok((y, GroundTruth { v, support, magnitude, sigma, f, c, s }))
}

/// Configuration for an already whitened spiked matrix `Y = u v^T + Z`
/// with `Z_ij ~ N(0, 1/n)`, `sqrt(n) u_i` drawn from the sparse uniform
/// mixture of weight `omega` and `||v||_2 = lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikedConfig {
    pub n: usize,
    pub d: usize,
    pub lambda: f64,
    pub omega: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SpikedInstance {
    pub y: DMatrix<f64>,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
}

/// Draws a spiked instance matching the state-evolution setting: exactly
/// `ceil(omega d)` nonzero weights, each `U / sqrt(n)` with `U ~ Unif(0, c)`
/// and `c = sqrt(3 / omega)`.
pub fn generate_spiked(config: &SpikedConfig) -> Result<SpikedInstance> {
    let SpikedConfig { n, d, lambda, omega, seed } = *config;
    if n < 2 || d < 2 {
        return Err(Error::InvalidConfig(format!("need n, d >= 2, got n={n}, d={d}")));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidConfig(format!("lambda must be positive, got {lambda}")));
    }
    let mixture = UMixture::new(omega)?;
    let s = crate::ceil_fraction(omega, d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sqrt_n = (n as f64).sqrt();

    let mut u = DVector::zeros(d);
    let unif = Uniform::new(0.0, mixture.c).expect("positive width");
    for i in index::sample(&mut rng, d, s) {
        u[i] = unif.sample(&mut rng) / sqrt_n;
    }
    let half = 3f64.sqrt();
    let vlaw = Uniform::new(-half, half).expect("positive width");
    let mut v = DVector::from_iterator(n, (0..n).map(|_| vlaw.sample(&mut rng)));
    v *= lambda / v.norm();

    let mut y = &u * v.transpose();
    for j in 0..n {
        for i in 0..d {
            y[(i, j)] += rng.sample::<f64, _>(StandardNormal) / sqrt_n;
        }
    }
    Ok(SpikedInstance { y, u, v })
}
