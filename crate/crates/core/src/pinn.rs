//! Physics-informed training of `u(x, t)` on the unit slab.
//!
//! The loss combines four mean-square terms:
//!
//! - data: release `R(t_i) = 1 - int_0^1 u(x, t_i) dx` against the measured curve
//! - pde: residual `u_t - D u_xx` at Latin-hypercube collocation points
//! - ic: `u(x, 0) - 1` on interior points
//! - bc: `u(0, t)` and `u(1, t)`
//!
//! Gradients come from the network's second-order reverse pass; with a
//! learnable diffusivity `D = exp(rho)`, `rho` is optimized alongside the
//! weights by the same Adam instance.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::ReleaseCurve;
use crate::error::{Error, Result};
use crate::nn::{
    init_params, AdamState, BatchEngine, Derivatives, DropoutMask, MlpArchitecture, MlpParams,
    Order, Seeds,
};
use crate::rng;

/// Whether the diffusivity is given or inferred.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DMode {
    Fixed(f64),
    /// Starting value; optimized as `exp(rho)`.
    Learnable(f64),
}

impl DMode {
    pub fn initial(self) -> f64 {
        match self {
            DMode::Fixed(d) | DMode::Learnable(d) => d,
        }
    }

    pub fn is_learnable(self) -> bool {
        matches!(self, DMode::Learnable(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub data: f64,
    pub pde: f64,
    pub ic: f64,
    pub bc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { data: 1.0, pde: 1.0, ic: 1.0, bc: 1.0 }
    }
}

impl LossWeights {
    pub fn new(data: f64, pde: f64, ic: f64, bc: f64) -> Self {
        LossWeights { data, pde, ic, bc }
    }

    pub fn scaled(self, c: f64) -> Self {
        LossWeights { data: c * self.data, pde: c * self.pde, ic: c * self.ic, bc: c * self.bc }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinnConfig {
    pub arch: MlpArchitecture,
    pub learning_rate: f64,
    pub epochs: usize,
    pub n_collocation: usize,
    pub d_mode: DMode,
    pub loss_weights: LossWeights,
    /// Simpson nodes for the release integral; odd.
    pub quadrature_points: usize,
    /// Grid size for the initial- and boundary-condition penalties.
    pub condition_points: usize,
    /// Keep probability of hidden units during training; 1 disables dropout.
    pub p_keep: f64,
    pub seed: u64,
}

/// Default keep probability when dropout is switched on.
pub const DEFAULT_P_KEEP: f64 = 0.9;

impl Default for PinnConfig {
    fn default() -> Self {
        PinnConfig::comparison()
    }
}

impl PinnConfig {
    /// Forward training as used for the model comparison: 2500 epochs,
    /// 10,000 collocation points, `D = 0.01` fixed.
    pub fn comparison() -> Self {
        PinnConfig {
            arch: MlpArchitecture::PINN,
            learning_rate: 1e-3,
            epochs: 2500,
            n_collocation: 10_000,
            d_mode: DMode::Fixed(0.01),
            loss_weights: LossWeights::default(),
            quadrature_points: 101,
            condition_points: 101,
            p_keep: 1.0,
            seed: 0,
        }
    }

    /// Ensemble member: 5000 epochs.
    pub fn ensemble() -> Self {
        PinnConfig { epochs: 5000, ..PinnConfig::comparison() }
    }

    /// Dropout-trained Bayesian variant: 10,000 epochs with dropout on.
    pub fn bpinn() -> Self {
        PinnConfig { epochs: 10_000, p_keep: DEFAULT_P_KEEP, ..PinnConfig::comparison() }
    }

    /// Limited-data sweep: 2000 epochs, 1000 collocation points.
    pub fn limited() -> Self {
        PinnConfig { epochs: 2000, n_collocation: 1000, ..PinnConfig::comparison() }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let w = &self.loss_weights;
        if [w.data, w.pde, w.ic, w.bc].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("loss weights must be finite and >= 0".into()));
        }
        if self.n_collocation == 0 {
            return Err(Error::InvalidArgument("n_collocation must be at least 1".into()));
        }
        if self.quadrature_points < 3 || self.quadrature_points.is_multiple_of(2) {
            return Err(Error::InvalidArgument("quadrature_points must be odd and >= 3".into()));
        }
        if self.condition_points < 2 {
            return Err(Error::InvalidArgument("condition_points must be at least 2".into()));
        }
        let d = self.d_mode.initial();
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::InvalidArgument(alloc::format!("diffusivity must be > 0, got {d}")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be > 0".into()));
        }
        if !(self.p_keep > 0.0 && self.p_keep <= 1.0) {
            return Err(Error::InvalidArgument("p_keep must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Collocation points in `[0, 1]^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollocationSet {
    pub points: Vec<[f64; 2]>,
}

impl CollocationSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Latin hypercube: on each axis, every one of the `n` equal bins holds
/// exactly one point.
pub fn sample_lhs(n: usize, seed: u64) -> CollocationSet {
    let mut rng = rng::stream(seed, rng::STREAM_LHS);
    let mut axes = [vec![0.0; n], vec![0.0; n]];
    for axis in &mut axes {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        for (v, p) in axis.iter_mut().zip(perm) {
            let u: f64 = rng.random::<f64>().clamp(1e-9, 1.0 - 1e-9);
            *v = (p as f64 + u) / n as f64;
        }
    }
    CollocationSet { points: axes[0].iter().zip(&axes[1]).map(|(&x, &t)| [x, t]).collect() }
}

/// `u_t - d u_xx` at each point.
pub fn pde_residual(params: &MlpParams, d: f64, pts: &CollocationSet) -> Vec<f64> {
    let mut out = vec![Derivatives::default(); pts.len()];
    BatchEngine::new(params.arch()).eval(params, None, &pts.points, Order::Second, &mut out);
    out.iter().map(|r| r.u_t - d * r.u_xx).collect()
}

/// Composite Simpson nodes and weights on `[0, 1]`.
pub fn simpson_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 3 && n % 2 == 1, "Simpson needs an odd node count >= 3");
    let h = 1.0 / (n - 1) as f64;
    let nodes = (0..n).map(|i| i as f64 * h).collect();
    let weights = (0..n)
        .map(|i| {
            let c = if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect();
    (nodes, weights)
}

/// `R(t) = 1 - int_0^1 u(x, t) dx`.
pub fn release_fraction(params: &MlpParams, t: f64, quadrature_points: usize) -> f64 {
    release_curve(params, None, &[t], quadrature_points)[0]
}

/// Release at several times, optionally under a dropout mask.
pub fn release_curve(
    params: &MlpParams,
    mask: Option<&DropoutMask>,
    times: &[f64],
    quadrature_points: usize,
) -> Vec<f64> {
    let (nodes, weights) = simpson_rule(quadrature_points);
    let pts: Vec<[f64; 2]> =
        times.iter().flat_map(|&t| nodes.iter().map(move |&x| [x, t])).collect();
    let mut out = vec![Derivatives::default(); pts.len()];
    BatchEngine::new(params.arch()).eval(params, mask, &pts, Order::Value, &mut out);
    out.chunks(quadrature_points)
        .map(|c| 1.0 - c.iter().zip(&weights).map(|(d, w)| w * d.u).sum::<f64>())
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub total: f64,
    pub data: f64,
    pub pde: f64,
    pub ic: f64,
    pub bc: f64,
}

impl LossComponents {
    pub fn is_finite(&self) -> bool {
        [self.total, self.data, self.pde, self.ic, self.bc].iter().all(|v| v.is_finite())
    }
}

/// Everything fixed across epochs: evaluation points and quadrature.
pub struct PinnProblem {
    targets: Vec<f64>,
    data_points: Vec<[f64; 2]>,
    quad_weights: Vec<f64>,
    colloc: Vec<[f64; 2]>,
    ic_points: Vec<[f64; 2]>,
    bc_points: Vec<[f64; 2]>,
    weights: LossWeights,
    engine: BatchEngine,
    scratch: Vec<Derivatives>,
}

impl PinnProblem {
    pub fn new(
        arch: MlpArchitecture,
        curve: &ReleaseCurve,
        colloc: &CollocationSet,
        weights: LossWeights,
        quadrature_points: usize,
        condition_points: usize,
    ) -> Self {
        Self::from_parts(arch, curve.times(), curve.fractions(), colloc, weights, quadrature_points, condition_points)
    }

    /// As `new`, from raw times and targets (which may be empty).
    pub fn from_parts(
        arch: MlpArchitecture,
        times: &[f64],
        targets: &[f64],
        colloc: &CollocationSet,
        weights: LossWeights,
        quadrature_points: usize,
        condition_points: usize,
    ) -> Self {
        let (nodes, quad_weights) = simpson_rule(quadrature_points);
        let data_points = times.iter().flat_map(|&t| nodes.iter().map(move |&x| [x, t])).collect();
        let ic_points = if condition_points == 0 {
            Vec::new()
        } else {
            (1..=condition_points).map(|k| [k as f64 / (condition_points + 1) as f64, 0.0]).collect()
        };
        let bc_points = if condition_points < 2 {
            Vec::new()
        } else {
            let n = condition_points;
            (0..n)
                .flat_map(|k| {
                    let t = k as f64 / (n - 1) as f64;
                    [[0.0, t], [1.0, t]]
                })
                .collect()
        };
        PinnProblem {
            targets: targets.to_vec(),
            data_points,
            quad_weights,
            colloc: colloc.points.clone(),
            ic_points,
            bc_points,
            weights,
            engine: BatchEngine::new(arch),
            scratch: Vec::new(),
        }
    }

    pub fn weights(&self) -> LossWeights {
        self.weights
    }

    pub fn set_weights(&mut self, weights: LossWeights) {
        self.weights = weights;
    }

    fn release_values(&mut self, params: &MlpParams, mask: Option<&DropoutMask>) -> Vec<f64> {
        let q = self.quad_weights.len();
        self.scratch.resize(self.data_points.len(), Derivatives::default());
        self.engine.eval(params, mask, &self.data_points, Order::Value, &mut self.scratch);
        self.scratch
            .chunks(q)
            .map(|c| 1.0 - c.iter().zip(&self.quad_weights).map(|(d, w)| w * d.u).sum::<f64>())
            .collect()
    }

    /// Loss components only.
    pub fn loss(&mut self, params: &MlpParams, d: f64, mask: Option<&DropoutMask>) -> LossComponents {
        let mut c = LossComponents::default();
        if !self.targets.is_empty() {
            let r = self.release_values(params, mask);
            c.data = mean_sq(r.iter().zip(&self.targets).map(|(a, b)| a - b));
        }
        if !self.colloc.is_empty() {
            self.scratch.resize(self.colloc.len(), Derivatives::default());
            self.engine.eval(params, mask, &self.colloc, Order::Second, &mut self.scratch);
            c.pde = mean_sq(self.scratch.iter().map(|s| s.u_t - d * s.u_xx));
        }
        if !self.ic_points.is_empty() {
            self.scratch.resize(self.ic_points.len(), Derivatives::default());
            self.engine.eval(params, mask, &self.ic_points, Order::Value, &mut self.scratch);
            c.ic = mean_sq(self.scratch.iter().map(|s| s.u - 1.0));
        }
        if !self.bc_points.is_empty() {
            self.scratch.resize(self.bc_points.len(), Derivatives::default());
            self.engine.eval(params, mask, &self.bc_points, Order::Value, &mut self.scratch);
            // mean over t of u(0,t)^2 + u(1,t)^2
            c.bc = 2.0 * mean_sq(self.scratch.iter().map(|s| s.u));
        }
        c.total = self.weighted(&c);
        c
    }

    fn weighted(&self, c: &LossComponents) -> f64 {
        let w = &self.weights;
        w.data * c.data + w.pde * c.pde + w.ic * c.ic + w.bc * c.bc
    }

    /// Loss, its gradient with respect to the flat parameters (written into
    /// `grad`), and its derivative with respect to `d`.
    pub fn loss_and_grad(
        &mut self,
        params: &MlpParams,
        d: f64,
        mask: Option<&DropoutMask>,
        grad: &mut [f64],
    ) -> (LossComponents, f64) {
        grad.fill(0.0);
        let w = self.weights;
        let mut c = LossComponents::default();
        let mut dl_dd = 0.0;

        if !self.targets.is_empty() {
            let r = self.release_values(params, mask);
            let n = r.len() as f64;
            let resid: Vec<f64> = r.iter().zip(&self.targets).map(|(a, b)| a - b).collect();
            c.data = mean_sq(resid.iter().copied());
            let q = self.quad_weights.len();
            let qw = &self.quad_weights;
            if w.data != 0.0 {
                self.engine.eval_grad(
                    params,
                    mask,
                    &self.data_points,
                    Order::Value,
                    |i, _| Seeds { u: -w.data * 2.0 / n * resid[i / q] * qw[i % q], ..Seeds::default() },
                    grad,
                );
            }
        }

        if !self.colloc.is_empty() {
            let n = self.colloc.len() as f64;
            let mut sum = 0.0;
            let mut sum_dd = 0.0;
            let scale = w.pde * 2.0 / n;
            self.engine.eval_grad(
                params,
                mask,
                &self.colloc,
                Order::Second,
                |_, s| {
                    let r = s.u_t - d * s.u_xx;
                    sum += r * r;
                    sum_dd += -r * s.u_xx;
                    Seeds { u_t: scale * r, u_xx: -scale * d * r, ..Seeds::default() }
                },
                grad,
            );
            c.pde = sum / n;
            dl_dd = scale * sum_dd;
        }

        if !self.ic_points.is_empty() {
            let n = self.ic_points.len() as f64;
            let mut sum = 0.0;
            self.engine.eval_grad(
                params,
                mask,
                &self.ic_points,
                Order::Value,
                |_, s| {
                    let e = s.u - 1.0;
                    sum += e * e;
                    Seeds { u: w.ic * 2.0 / n * e, ..Seeds::default() }
                },
                grad,
            );
            c.ic = sum / n;
        }

        if !self.bc_points.is_empty() {
            let n_t = (self.bc_points.len() / 2) as f64;
            let mut sum = 0.0;
            self.engine.eval_grad(
                params,
                mask,
                &self.bc_points,
                Order::Value,
                |_, s| {
                    sum += s.u * s.u;
                    Seeds { u: w.bc * 2.0 / n_t * s.u, ..Seeds::default() }
                },
                grad,
            );
            c.bc = sum / n_t;
        }

        c.total = self.weighted(&c);
        (c, dl_dd)
    }
}

fn mean_sq(it: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in it {
        s += v * v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Weighted loss of `params` on `curve`, 101-point quadrature and condition grids.
pub fn total_loss(
    params: &MlpParams,
    d: f64,
    curve: &ReleaseCurve,
    colloc: &CollocationSet,
    weights: LossWeights,
) -> LossComponents {
    PinnProblem::new(params.arch(), curve, colloc, weights, 101, 101).loss(params, d, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPinn {
    pub params: MlpParams,
    pub d_value: f64,
    pub loss_history: Vec<LossComponents>,
    pub config: PinnConfig,
}

impl TrainedPinn {
    pub fn release(&self, t: f64) -> f64 {
        release_fraction(&self.params, t, self.config.quadrature_points)
    }

    pub fn release_curve(&self, times: &[f64]) -> Vec<f64> {
        release_curve(&self.params, None, times, self.config.quadrature_points)
    }

    /// Release under dropout mask `mask`, for Monte Carlo passes.
    pub fn release_curve_masked(&self, times: &[f64], mask: &DropoutMask) -> Vec<f64> {
        release_curve(&self.params, Some(mask), times, self.config.quadrature_points)
    }
}

/// Progress passed to a training observer after each epoch's update.
pub struct EpochState<'a> {
    pub epoch: usize,
    pub loss: &'a LossComponents,
    pub params: &'a MlpParams,
    pub d: f64,
}

pub fn train(config: &PinnConfig, curve: &ReleaseCurve) -> Result<TrainedPinn> {
    train_observed(config, curve, |_| {})
}

/// As `train`, calling `observe` after every epoch.
pub fn train_observed<F>(config: &PinnConfig, curve: &ReleaseCurve, mut observe: F) -> Result<TrainedPinn>
where
    F: FnMut(&EpochState<'_>),
{
    config.validate()?;
    if curve.is_empty() {
        return Err(Error::TooFewPoints { min: 1, got: 0 });
    }
    let colloc = sample_lhs(config.n_collocation, config.seed);
    let mut problem = PinnProblem::new(
        config.arch,
        curve,
        &colloc,
        config.loss_weights,
        config.quadrature_points,
        config.condition_points,
    );
    let mut params = init_params(config.arch, config.seed);
    let n_params = params.flat().len();
    let learnable = config.d_mode.is_learnable();
    let mut theta = params.flat().to_vec();
    theta.push(libm::log(config.d_mode.initial()));
    let mut grad = vec![0.0; n_params + 1];
    let mut adam = AdamState::new(if learnable { n_params + 1 } else { n_params }, config.learning_rate);
    let mut dropout_rng = rng::stream(config.seed, rng::STREAM_DROPOUT);
    let mut history = Vec::with_capacity(config.epochs);

    let d_of = |rho: f64| match config.d_mode {
        DMode::Fixed(d) => d,
        DMode::Learnable(_) => libm::exp(rho),
    };

    for epoch in 0..config.epochs {
        let d = d_of(theta[n_params]);
        let mask = (config.p_keep < 1.0)
            .then(|| DropoutMask::from_rng(config.arch, config.p_keep, &mut dropout_rng));
        let (loss, dl_dd) = problem.loss_and_grad(&params, d, mask.as_ref(), &mut grad[..n_params]);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        history.push(loss);
        if learnable {
            grad[n_params] = dl_dd * d;
            adam.update(&mut theta, &grad)?;
        } else {
            adam.update(&mut theta[..n_params], &grad[..n_params])?;
        }
        params.flat_mut().copy_from_slice(&theta[..n_params]);
        observe(&EpochState { epoch, loss: &loss, params: &params, d: d_of(theta[n_params]) });
    }
    Ok(TrainedPinn {
        params,
        d_value: d_of(theta[n_params]),
        loss_history: history,
        config: config.clone(),
    })
}
