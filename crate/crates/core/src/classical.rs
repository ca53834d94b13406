//! Classical release kinetics fitted by nonlinear least squares.
//!
//! * `FickSeries`: plane-sheet diffusion, one parameter `d_hat`.
//! * `Higuchi`: `k_h * sqrt(t)`, where `k_h` lumps the area, diffusivity and
//!   solubility constants (only their product is observable from fractions).
//! * `Peppas`: `k * t^n`.
//!
//! Fitting works in unconstrained coordinates: logs of the positive
//! parameters and a scaled logit for the Peppas exponent on `(0, 1.5)`.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::f64::consts::PI;
use core::str::FromStr;

use libm::{exp, log, pow, sqrt};
use serde::{Deserialize, Serialize};

use crate::dataset::ReleaseCurve;
use crate::error::{Error, Result};
use crate::fick;
use crate::lm::{self, LmSettings};
use crate::metrics::{metrics, ErrorMetrics};

/// Upper bound of the Peppas exponent.
pub const PEPPAS_N_MAX: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "fick")]
    FickSeries,
    #[serde(rename = "higuchi")]
    Higuchi,
    #[serde(rename = "peppas")]
    Peppas,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::FickSeries, ModelKind::Higuchi, ModelKind::Peppas];

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::FickSeries => "fick",
            ModelKind::Higuchi => "higuchi",
            ModelKind::Peppas => "peppas",
        }
    }

    pub fn n_params(self) -> usize {
        match self {
            ModelKind::Peppas => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fick" | "fickseries" | "fick_series" => Ok(ModelKind::FickSeries),
            "higuchi" => Ok(ModelKind::Higuchi),
            "peppas" | "korsmeyer-peppas" => Ok(ModelKind::Peppas),
            _ => Err(Error::UnknownModel(s.to_string())),
        }
    }
}

/// A classical model with concrete parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalModel {
    kind: ModelKind,
    params: Vec<f64>,
}

impl ClassicalModel {
    pub fn new(kind: ModelKind, params: Vec<f64>) -> Result<Self> {
        if params.len() != kind.n_params() {
            return Err(Error::InvalidArgument(alloc::format!(
                "{kind} takes {} parameter(s)",
                kind.n_params()
            )));
        }
        let ok = match kind {
            ModelKind::FickSeries | ModelKind::Higuchi => params[0] > 0.0 && params[0].is_finite(),
            ModelKind::Peppas => {
                params[0] > 0.0
                    && params[0].is_finite()
                    && params[1] > 0.0
                    && params[1] < PEPPAS_N_MAX
            }
        };
        if !ok {
            return Err(Error::InvalidArgument(alloc::format!(
                "parameters {params:?} outside the admissible range of {kind}"
            )));
        }
        Ok(ClassicalModel { kind, params })
    }

    pub fn fick(d_hat: f64) -> Result<Self> {
        Self::new(ModelKind::FickSeries, vec![d_hat])
    }

    pub fn higuchi(k_h: f64) -> Result<Self> {
        Self::new(ModelKind::Higuchi, vec![k_h])
    }

    pub fn peppas(k: f64, n: f64) -> Result<Self> {
        Self::new(ModelKind::Peppas, vec![k, n])
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Model value without the physical clamp; used as the fitting residual.
    pub fn predict_raw(&self, t: f64) -> f64 {
        raw(self.kind, &self.params, t)
    }

    /// Release fraction at time `t`, clamped to `[0, 1]`.
    pub fn predict(&self, t: f64) -> f64 {
        self.predict_raw(t).clamp(0.0, 1.0)
    }
}

fn raw(kind: ModelKind, p: &[f64], t: f64) -> f64 {
    let t = t.max(0.0);
    match kind {
        ModelKind::FickSeries => fick::release(p[0], t),
        ModelKind::Higuchi => p[0] * sqrt(t),
        ModelKind::Peppas => {
            if t == 0.0 {
                0.0
            } else {
                p[0] * pow(t, p[1])
            }
        }
    }
}

/// Outcome of a least-squares fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    #[serde(flatten)]
    pub model: ClassicalModel,
    pub mae: f64,
    pub rmse: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// MAE and RMSE of the clamped predictions against a curve.
pub fn evaluate(model: &ClassicalModel, curve: &ReleaseCurve) -> ErrorMetrics {
    let pred: Vec<f64> = curve.times().iter().map(|&t| model.predict(t)).collect();
    metrics(curve.fractions(), &pred).expect("curves are never empty")
}

fn to_unconstrained(kind: ModelKind, p: &[f64]) -> Vec<f64> {
    match kind {
        ModelKind::FickSeries | ModelKind::Higuchi => vec![log(p[0])],
        ModelKind::Peppas => {
            let s = p[1] / PEPPAS_N_MAX;
            vec![log(p[0]), log(s / (1.0 - s))]
        }
    }
}

fn from_unconstrained(kind: ModelKind, z: &[f64]) -> Vec<f64> {
    match kind {
        ModelKind::FickSeries | ModelKind::Higuchi => vec![exp(z[0])],
        ModelKind::Peppas => vec![exp(z[0]), PEPPAS_N_MAX / (1.0 + exp(-z[1]))],
    }
}

/// Least-squares slope through the origin of `y` on `x`.
fn slope_through_origin(xs: impl Iterator<Item = (f64, f64)>) -> Option<f64> {
    let (sxy, sxx) = xs.fold((0.0, 0.0), |(a, b), (x, y)| (a + x * y, b + x * x));
    (sxx > 0.0).then(|| sxy / sxx)
}

fn initial_guess(kind: ModelKind, curve: &ReleaseCurve) -> Vec<f64> {
    let pts: Vec<(f64, f64)> = curve.points().filter(|&(t, _)| t > 0.0).collect();
    match kind {
        ModelKind::FickSeries => {
            // first crossing of half release, matched to the one-term series
            let crossing = curve.points().zip(curve.points().skip(1)).find_map(|((t0, y0), (t1, y1))| {
                (y0 < 0.5 && y1 >= 0.5).then(|| t0 + (0.5 - y0) * (t1 - t0) / (y1 - y0))
            });
            let d = match crossing {
                Some(t_half) if t_half > 0.0 => log(16.0 / (PI * PI)) / (PI * PI * t_half),
                _ => {
                    // early-time law: release = 4 sqrt(d t / pi)
                    let s = slope_through_origin(pts.iter().map(|&(t, y)| (sqrt(t), y)))
                        .unwrap_or(0.0);
                    PI * s * s / 16.0
                }
            };
            vec![if d > 0.0 && d.is_finite() { d } else { 0.01 }]
        }
        ModelKind::Higuchi => {
            let k = slope_through_origin(pts.iter().map(|&(t, y)| (sqrt(t), y))).unwrap_or(0.5);
            vec![if k > 0.0 { k } else { 0.5 }]
        }
        ModelKind::Peppas => {
            let logs: Vec<(f64, f64)> = pts
                .iter()
                .filter(|&&(_, y)| y > 0.0 && y < 0.6)
                .map(|&(t, y)| (log(t), log(y)))
                .collect();
            let (k, n) = if logs.len() >= 2 {
                let m = logs.len() as f64;
                let mx = logs.iter().map(|p| p.0).sum::<f64>() / m;
                let my = logs.iter().map(|p| p.1).sum::<f64>() / m;
                let sxx: f64 = logs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
                let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
                let n = if sxx > 0.0 { sxy / sxx } else { 0.5 };
                (exp(my - n * mx), n)
            } else {
                let n = 0.5;
                let k = pts
                    .iter()
                    .find(|&&(_, y)| y > 0.0)
                    .map(|&(t, y)| y / pow(t, n))
                    .unwrap_or(0.5);
                (k, n)
            };
            let n = if n.is_finite() { n.clamp(0.05, PEPPAS_N_MAX - 0.05) } else { 0.5 };
            let k = if k > 0.0 && k.is_finite() { k } else { 0.5 };
            vec![k, n]
        }
    }
}

/// Fits `kind` to every point of `curve`.
pub fn fit(kind: ModelKind, curve: &ReleaseCurve) -> Result<FitResult> {
    fit_with(kind, curve, &LmSettings::default())
}

pub fn fit_with(kind: ModelKind, curve: &ReleaseCurve, settings: &LmSettings) -> Result<FitResult> {
    if !curve.points().any(|(t, y)| t > 0.0 && y > 0.0) {
        return Err(Error::DegenerateCurve);
    }
    let start = to_unconstrained(kind, &initial_guess(kind, curve));
    let times = curve.times();
    let ys = curve.fractions();
    let report = lm::minimize(
        |z, r| {
            let p = from_unconstrained(kind, z);
            for (i, (&t, &y)) in times.iter().zip(ys).enumerate() {
                r[i] = raw(kind, &p, t) - y;
            }
        },
        &start,
        curve.len(),
        settings,
    );
    let params = from_unconstrained(kind, &report.params);
    let model = ClassicalModel::new(kind, params)?;
    let m = evaluate(&model, curve);
    Ok(FitResult {
        model,
        mae: m.mae,
        rmse: m.rmse,
        converged: report.converged,
        iterations: report.iterations,
    })
}
