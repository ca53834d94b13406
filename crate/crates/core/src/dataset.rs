//! Cumulative-release curves: validation, synthesis, noise and splitting.

use alloc::string::ToString;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{fick, rng};

/// Film morphology a curve was measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilmType {
    Flat,
    Wrinkled1D,
    Crumpled2D,
}

impl FilmType {
    pub const ALL: [FilmType; 3] = [FilmType::Flat, FilmType::Wrinkled1D, FilmType::Crumpled2D];

    pub fn label(self) -> &'static str {
        match self {
            FilmType::Flat => "flat",
            FilmType::Wrinkled1D => "wrinkled",
            FilmType::Crumpled2D => "crumpled",
        }
    }
}

impl fmt::Display for FilmType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for FilmType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "flat" | "planar" => Ok(FilmType::Flat),
            "wrinkled" | "wrinkled1d" | "1d" => Ok(FilmType::Wrinkled1D),
            "crumpled" | "crumpled2d" | "2d" => Ok(FilmType::Crumpled2D),
            _ => Err(Error::UnknownFilm(s.to_string())),
        }
    }
}

/// Lowest and highest fraction ever accepted, noisy or not.
pub const HARD_FRACTION_RANGE: (f64, f64) = (-0.5, 1.5);

/// Soft validation findings on noisy curves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CurveWarning {
    FractionOutsideUnit { index: usize, value: f64 },
    Decreasing { index: usize },
}

/// Time series of cumulative release for one film.
///
/// Times are normalized so that 1.0 is the end of the experiment (48 h).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseCurve {
    film: FilmType,
    times: Vec<f64>,
    fractions: Vec<f64>,
    noise_sigma: Option<f64>,
}

impl ReleaseCurve {
    pub fn new(
        film: FilmType,
        times: Vec<f64>,
        fractions: Vec<f64>,
        noise_sigma: Option<f64>,
    ) -> Result<Self> {
        Self::with_min_len(film, times, fractions, noise_sigma, 2)
    }

    /// Held-out tails of a split may be a single point.
    fn with_min_len(
        film: FilmType,
        times: Vec<f64>,
        fractions: Vec<f64>,
        noise_sigma: Option<f64>,
        min_len: usize,
    ) -> Result<Self> {
        if times.len() != fractions.len() {
            return Err(Error::LengthMismatch { times: times.len(), fractions: fractions.len() });
        }
        if times.len() < min_len {
            return Err(Error::TooFewPoints { min: min_len, got: times.len() });
        }
        if let Some(s) = noise_sigma {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::InvalidArgument("noise_sigma must be finite and >= 0".into()));
            }
        }
        for (i, (&t, &y)) in times.iter().zip(&fractions).enumerate() {
            if !t.is_finite() || !y.is_finite() {
                return Err(Error::NonFinite { index: i });
            }
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::TimeOutOfRange { index: i, value: t });
            }
            let (lo, hi) = HARD_FRACTION_RANGE;
            if y < lo || y > hi {
                return Err(Error::FractionOutOfRange { index: i, value: y, lo, hi });
            }
            if i > 0 && t <= times[i - 1] {
                return Err(Error::NonMonotoneTime { index: i });
            }
        }
        let curve = ReleaseCurve { film, times, fractions, noise_sigma };
        if noise_sigma.is_none() {
            if let Some(w) = curve.soft_checks().into_iter().next() {
                return Err(match w {
                    CurveWarning::FractionOutsideUnit { index, value } => {
                        Error::FractionOutOfRange { index, value, lo: 0.0, hi: 1.0 }
                    }
                    CurveWarning::Decreasing { index } => Error::NonMonotoneFraction { index },
                });
            }
        }
        Ok(curve)
    }

    fn soft_checks(&self) -> Vec<CurveWarning> {
        let mut out = Vec::new();
        for (i, &y) in self.fractions.iter().enumerate() {
            if !(0.0..=1.0).contains(&y) {
                out.push(CurveWarning::FractionOutsideUnit { index: i, value: y });
            }
            if i > 0 && y < self.fractions[i - 1] {
                out.push(CurveWarning::Decreasing { index: i });
            }
        }
        out
    }

    /// Range and monotonicity findings that are tolerated on noisy curves.
    /// Always empty for noiseless curves, which reject them at construction.
    pub fn warnings(&self) -> Vec<CurveWarning> {
        self.soft_checks()
    }

    pub fn film(&self) -> FilmType {
        self.film
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    pub fn noise_sigma(&self) -> Option<f64> {
        self.noise_sigma
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().copied().zip(self.fractions.iter().copied())
    }

    pub fn with_film(mut self, film: FilmType) -> Self {
        self.film = film;
        self
    }
}

/// A curve cut into an early training window and the held-out remainder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCurve {
    pub train: ReleaseCurve,
    pub test: ReleaseCurve,
    pub n: usize,
}

/// Sampling instants of the canonical 15-point protocol, in minutes.
pub const CANONICAL_MINUTES: [f64; 15] = [
    0.0, 5.0, 10.0, 20.0, 30.0, 60.0, 120.0, 240.0, 360.0, 480.0, 720.0, 1080.0, 1440.0, 2160.0,
    2880.0,
];

/// Minutes in one normalized time unit.
pub const MINUTES_PER_UNIT: f64 = 2880.0;

/// The canonical grid in normalized time.
pub fn canonical_times() -> Vec<f64> {
    CANONICAL_MINUTES.iter().map(|m| m / MINUTES_PER_UNIT).collect()
}

/// Uniform grid of `n` points on `[0, t_max]`.
pub fn uniform_times(n: usize, t_max: f64) -> Vec<f64> {
    (0..n).map(|i| t_max * i as f64 / (n - 1) as f64).collect()
}

/// Noiseless Fickian curve on a uniform grid from 0 to `t_max`.
pub fn synthesize_fickian(d_hat: f64, n_points: usize, t_max: f64) -> Result<ReleaseCurve> {
    if !(d_hat > 0.0 && d_hat.is_finite()) {
        return Err(Error::InvalidArgument("d_hat must be positive".into()));
    }
    if n_points < 2 {
        return Err(Error::TooFewPoints { min: 2, got: n_points });
    }
    if !(t_max > 0.0 && t_max <= 1.0) {
        return Err(Error::InvalidArgument("t_max must lie in (0, 1]".into()));
    }
    fickian_on(FilmType::Flat, d_hat, uniform_times(n_points, t_max))
}

/// Noiseless Fickian curve on arbitrary times.
pub fn fickian_on(film: FilmType, d_hat: f64, times: Vec<f64>) -> Result<ReleaseCurve> {
    let fractions = times.iter().map(|&t| fick::release(d_hat, t)).collect();
    ReleaseCurve::new(film, times, fractions, None)
}

/// Power-law release with an initial burst: `min(burst + k t^n, 1)` for
/// `t > 0`, zero at `t = 0`.
pub fn peppas_burst_on(
    film: FilmType,
    k: f64,
    n: f64,
    burst: f64,
    times: Vec<f64>,
) -> Result<ReleaseCurve> {
    let fractions = times
        .iter()
        .map(|&t| if t <= 0.0 { 0.0 } else { (burst + k * libm::pow(t, n)).min(1.0) })
        .collect();
    ReleaseCurve::new(film, times, fractions, None)
}

/// Two-timescale first-order release:
/// `1 - w exp(-t / tau_fast) - (1 - w) exp(-t / tau_slow)`.
pub fn biexponential_on(
    film: FilmType,
    fast_weight: f64,
    tau_fast: f64,
    tau_slow: f64,
    times: Vec<f64>,
) -> Result<ReleaseCurve> {
    let fractions = times
        .iter()
        .map(|&t| {
            1.0 - fast_weight * libm::exp(-t / tau_fast)
                - (1.0 - fast_weight) * libm::exp(-t / tau_slow)
        })
        .collect();
    ReleaseCurve::new(film, times, fractions, None)
}

/// Parameters of the shipped synthetic reference curves.
pub mod reference {
    pub const FLAT_D_HAT: f64 = 0.01;
    pub const WRINKLED_K: f64 = 0.9;
    pub const WRINKLED_N: f64 = 0.35;
    pub const WRINKLED_BURST: f64 = 0.05;
    pub const CRUMPLED_FAST_WEIGHT: f64 = 0.35;
    pub const CRUMPLED_TAU_FAST: f64 = 0.03;
    pub const CRUMPLED_TAU_SLOW: f64 = 0.6;
}

/// Reference curve for one film on the canonical grid.
pub fn synthetic_curve(film: FilmType) -> ReleaseCurve {
    use reference::*;
    let times = canonical_times();
    let curve = match film {
        FilmType::Flat => fickian_on(film, FLAT_D_HAT, times),
        FilmType::Wrinkled1D => {
            peppas_burst_on(film, WRINKLED_K, WRINKLED_N, WRINKLED_BURST, times)
        }
        FilmType::Crumpled2D => {
            biexponential_on(film, CRUMPLED_FAST_WEIGHT, CRUMPLED_TAU_FAST, CRUMPLED_TAU_SLOW, times)
        }
    };
    curve.expect("reference parameters produce valid curves")
}

/// Flat, wrinkled and crumpled reference curves, in that order.
pub fn synthetic_suite() -> [ReleaseCurve; 3] {
    FilmType::ALL.map(synthetic_curve)
}

/// Adds i.i.d. `Normal(0, sigma^2)` noise to every fraction.
pub fn add_gaussian_noise(curve: &ReleaseCurve, sigma: f64, seed: u64) -> Result<ReleaseCurve> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument("sigma must be finite and >= 0".into()));
    }
    let mut rng = rng::stream(seed, rng::STREAM_NOISE);
    let fractions = curve
        .fractions
        .iter()
        .map(|&y| {
            let z: f64 = StandardNormal.sample(&mut rng);
            y + sigma * z
        })
        .collect();
    ReleaseCurve::new(curve.film, curve.times.clone(), fractions, Some(sigma))
}

/// Sigma for "5% noise": five percent of the curve's fraction range.
pub fn five_percent_sigma(curve: &ReleaseCurve) -> f64 {
    let (lo, hi) = curve
        .fractions
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| (lo.min(y), hi.max(y)));
    0.05 * (hi - lo)
}

/// First `n` points for training, the rest held out.
pub fn split_first_n(curve: &ReleaseCurve, n: usize) -> Result<SplitCurve> {
    let len = curve.len();
    if n < 2 || n >= len {
        return Err(Error::SplitOutOfRange { n, len });
    }
    let part = |range: core::ops::Range<usize>, min_len| {
        ReleaseCurve::with_min_len(
            curve.film,
            curve.times[range.clone()].to_vec(),
            curve.fractions[range].to_vec(),
            curve.noise_sigma,
            min_len,
        )
    };
    Ok(SplitCurve { train: part(0..n, 2)?, test: part(n..len, 1)?, n })
}

impl SplitCurve {
    /// Concatenation of both halves.
    pub fn rejoin(&self) -> Result<ReleaseCurve> {
        let mut times = self.train.times.clone();
        times.extend_from_slice(&self.test.times);
        let mut fractions = self.train.fractions.clone();
        fractions.extend_from_slice(&self.test.fractions);
        ReleaseCurve::new(self.train.film, times, fractions, self.train.noise_sigma)
    }
}
