//! Uncertainty bands for trained networks: deep ensembles on re-noised data,
//! Monte Carlo dropout, and Hamiltonian Monte Carlo over weights and
//! diffusivity.

use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{add_gaussian_noise, ReleaseCurve};
use crate::error::{Error, Result};
use crate::nn::{DropoutMask, MlpArchitecture, MlpParams};
use crate::pinn::{self, release_curve, CollocationSet, LossWeights, PinnConfig, PinnProblem, TrainedPinn};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UqMethod {
    Ensemble,
    McDropout,
    Hmc,
}

impl UqMethod {
    pub fn label(self) -> &'static str {
        match self {
            UqMethod::Ensemble => "ensemble",
            UqMethod::McDropout => "mc_dropout",
            UqMethod::Hmc => "hmc",
        }
    }
}

/// Pointwise mean and population standard deviation of sampled release curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyBand {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub n_samples: usize,
    pub method: UqMethod,
}

impl UncertaintyBand {
    /// `samples[k][i]` is draw `k` at `times[i]`.
    pub fn from_samples(times: Vec<f64>, samples: &[Vec<f64>], method: UqMethod) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::TooFewSamples(samples.len()));
        }
        let m = times.len();
        if let Some(bad) = samples.iter().find(|s| s.len() != m) {
            return Err(Error::LengthMismatch { times: m, fractions: bad.len() });
        }
        let n = samples.len() as f64;
        let mut mean = vec![0.0; m];
        for s in samples {
            for (a, v) in mean.iter_mut().zip(s) {
                *a += v;
            }
        }
        for (j, a) in mean.iter_mut().enumerate() {
            let first = samples[0][j];
            // identical columns must come out with exactly zero spread
            *a = if samples.iter().all(|s| s[j] == first) { first } else { *a / n };
        }
        let mut std = vec![0.0; m];
        for s in samples {
            for ((a, v), mu) in std.iter_mut().zip(s).zip(&mean) {
                *a += (v - mu) * (v - mu);
            }
        }
        for a in &mut std {
            *a = libm::sqrt(*a / n);
        }
        Ok(UncertaintyBand { times, mean, std, n_samples: samples.len(), method })
    }

    pub fn mean_std(&self) -> f64 {
        self.std.iter().sum::<f64>() / self.std.len().max(1) as f64
    }

    /// Fraction of `(t, y)` reference points inside `mean +- k std`, with the
    /// band linearly interpolated in time.
    pub fn coverage(&self, times: &[f64], truth: &[f64], k: f64) -> f64 {
        let hits = times
            .iter()
            .zip(truth)
            .filter(|&(&t, &y)| {
                let (m, s) = self.interpolate(t);
                (y - m).abs() <= k * s
            })
            .count();
        hits as f64 / times.len().max(1) as f64
    }

    /// Band mean and std at `t`, linear between grid times.
    pub fn interpolate(&self, t: f64) -> (f64, f64) {
        let ts = &self.times;
        if t <= ts[0] {
            return (self.mean[0], self.std[0]);
        }
        let last = ts.len() - 1;
        if t >= ts[last] {
            return (self.mean[last], self.std[last]);
        }
        let j = ts.partition_point(|&v| v <= t) - 1;
        let w = (t - ts[j]) / (ts[j + 1] - ts[j]);
        (
            (1.0 - w) * self.mean[j] + w * self.mean[j + 1],
            (1.0 - w) * self.std[j] + w * self.std[j + 1],
        )
    }
}

/// 101 evenly spaced times on `[0, 1]`.
pub fn band_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

/// Config of ensemble member `k`: seed `base.seed + k`.
pub fn member_config(base: &PinnConfig, k: u64) -> PinnConfig {
    PinnConfig { seed: base.seed.wrapping_add(k), ..base.clone() }
}

/// Trains one member on its own noisy copy of `curve` (noise seed equals the
/// init seed) and returns its release on `times`.
pub fn train_member(
    base: &PinnConfig,
    curve: &ReleaseCurve,
    seed: u64,
    noise_sigma: f64,
    times: &[f64],
) -> Result<Vec<f64>> {
    let cfg = PinnConfig { seed, ..base.clone() };
    let noisy = if noise_sigma > 0.0 { add_gaussian_noise(curve, noise_sigma, seed)? } else { curve.clone() };
    match pinn::train(&cfg, &noisy) {
        Ok(t) => Ok(t.release_curve(times)),
        Err(Error::NonFiniteLoss { epoch }) => Err(Error::EnsembleMemberFailed { seed, epoch }),
        Err(e) => Err(e),
    }
}

/// Sequential ensemble of `n_members` networks with seeds `base.seed + k`.
pub fn train_ensemble(
    base: &PinnConfig,
    curve: &ReleaseCurve,
    n_members: usize,
    noise_sigma: f64,
) -> Result<UncertaintyBand> {
    let seeds: Vec<u64> = (0..n_members as u64).map(|k| base.seed.wrapping_add(k)).collect();
    train_ensemble_seeds(base, curve, &seeds, noise_sigma)
}

pub fn train_ensemble_seeds(
    base: &PinnConfig,
    curve: &ReleaseCurve,
    seeds: &[u64],
    noise_sigma: f64,
) -> Result<UncertaintyBand> {
    if seeds.len() < 2 {
        return Err(Error::TooFewSamples(seeds.len()));
    }
    let times = band_grid();
    let members = seeds
        .iter()
        .map(|&s| train_member(base, curve, s, noise_sigma, &times))
        .collect::<Result<Vec<_>>>()?;
    UncertaintyBand::from_samples(times, &members, UqMethod::Ensemble)
}

/// `n_passes` stochastic forward passes with fresh dropout masks.
pub fn mc_dropout_band(trained: &TrainedPinn, n_passes: usize, seed: u64) -> Result<UncertaintyBand> {
    if trained.config.p_keep >= 1.0 {
        return Err(Error::DropoutDisabled);
    }
    mc_dropout_band_with(trained, &band_grid(), n_passes, seed, trained.config.p_keep)
}

/// As `mc_dropout_band` without the dropout guard and with explicit times
/// and keep probability.
pub fn mc_dropout_band_with(
    trained: &TrainedPinn,
    times: &[f64],
    n_passes: usize,
    seed: u64,
    p_keep: f64,
) -> Result<UncertaintyBand> {
    if n_passes < 2 {
        return Err(Error::TooFewSamples(n_passes));
    }
    let mut r = rng::stream(seed, rng::STREAM_MC_PASSES);
    let samples: Vec<Vec<f64>> = (0..n_passes)
        .map(|_| {
            let mask = DropoutMask::from_rng(trained.config.arch, p_keep, &mut r);
            trained.release_curve_masked(times, &mask)
        })
        .collect();
    UncertaintyBand::from_samples(times.to_vec(), &samples, UqMethod::McDropout)
}

/// Unnormalized log density with gradient, as sampled by `hmc`.
pub trait LogDensity {
    fn dim(&self) -> usize;
    /// Returns `log p(q)` and writes its gradient into `grad`.
    fn log_density_grad(&mut self, q: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmcConfig {
    pub n_samples: usize,
    pub burn_in: usize,
    pub leapfrog_steps: usize,
    pub step_size: f64,
    pub prior_std_weights: f64,
    pub noise_std_data: f64,
    pub noise_std_pde: f64,
    /// Initial and boundary condition residuals.
    pub noise_std_conditions: f64,
    /// Median of the log-normal diffusivity prior.
    pub d_prior_median: f64,
    /// Log-std of the log-normal prior on the diffusivity.
    pub prior_log_std_d: f64,
    pub n_collocation: usize,
    pub quadrature_points: usize,
    pub condition_points: usize,
    pub seed: u64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        HmcConfig {
            n_samples: 2000,
            burn_in: 1000,
            leapfrog_steps: 50,
            step_size: 1e-3,
            prior_std_weights: 1.0,
            noise_std_data: 0.05,
            noise_std_pde: 0.05,
            noise_std_conditions: 0.05,
            d_prior_median: 0.01,
            prior_log_std_d: 1.0,
            n_collocation: 200,
            quadrature_points: 101,
            condition_points: 101,
            seed: 0,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.step_size) || self.leapfrog_steps == 0 {
            return Err(Error::InvalidArgument("HMC needs step_size > 0 and leapfrog_steps >= 1".into()));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidArgument("HMC needs at least one retained sample".into()));
        }
        if ![
            self.prior_std_weights,
            self.noise_std_data,
            self.noise_std_pde,
            self.noise_std_conditions,
            self.d_prior_median,
            self.prior_log_std_d,
        ]
            .into_iter()
            .all(pos)
        {
            return Err(Error::InvalidArgument("HMC standard deviations must be > 0".into()));
        }
        Ok(())
    }
}

/// Raw chain output in the sampler's coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct HmcRun {
    pub samples: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
    pub divergent: usize,
    pub iterations: usize,
}

/// `n_steps` leapfrog steps from `(q, p)` in place. `grad` must hold the
/// gradient at `q` on entry and holds it at the new `q` on exit. Returns the
/// log density at the new `q`.
pub fn leapfrog<T: LogDensity>(
    target: &mut T,
    q: &mut [f64],
    p: &mut [f64],
    grad: &mut [f64],
    step: f64,
    n_steps: usize,
) -> f64 {
    let mut logp = f64::NAN;
    for _ in 0..n_steps {
        for (pi, g) in p.iter_mut().zip(grad.iter()) {
            *pi += 0.5 * step * g;
        }
        for (qi, pi) in q.iter_mut().zip(p.iter()) {
            *qi += step * pi;
        }
        logp = target.log_density_grad(q, grad);
        for (pi, g) in p.iter_mut().zip(grad.iter()) {
            *pi += 0.5 * step * g;
        }
    }
    logp
}

/// `-log p + |p|^2 / 2` for a unit mass matrix.
pub fn hamiltonian(logp: f64, p: &[f64]) -> f64 {
    -logp + 0.5 * p.iter().map(|v| v * v).sum::<f64>()
}

/// Hamiltonian Monte Carlo with unit mass, fixed step and path length.
pub fn hmc<T: LogDensity>(target: &mut T, init: &[f64], cfg: &HmcConfig) -> Result<HmcRun> {
    hmc_observed(target, init, cfg, |_, _| {})
}

/// As `hmc`, calling `observe(iteration, accepted)` after each transition.
pub fn hmc_observed<T, F>(target: &mut T, init: &[f64], cfg: &HmcConfig, mut observe: F) -> Result<HmcRun>
where
    T: LogDensity,
    F: FnMut(usize, bool),
{
    if cfg.step_size.is_nan() || cfg.step_size <= 0.0 || cfg.leapfrog_steps == 0 || cfg.n_samples == 0 {
        return Err(Error::InvalidArgument("HMC needs step_size > 0, leapfrog_steps >= 1, n_samples >= 1".into()));
    }
    let n = target.dim();
    if init.len() != n {
        return Err(Error::ParamLength { expected: n, got: init.len() });
    }
    let mut r = rng::stream(cfg.seed, rng::STREAM_HMC);
    let mut q = init.to_vec();
    let mut grad = vec![0.0; n];
    let mut logp = target.log_density_grad(&q, &mut grad);
    if !logp.is_finite() {
        return Err(Error::InvalidArgument("log density is not finite at the starting point".into()));
    }
    let total = cfg.burn_in + cfg.n_samples;
    let mut samples = Vec::with_capacity(cfg.n_samples);
    let (mut accepted, mut divergent) = (0usize, 0usize);
    let mut q_new = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut grad_new = vec![0.0; n];

    for it in 0..total {
        for v in &mut p {
            *v = StandardNormal.sample(&mut r);
        }
        let h0 = hamiltonian(logp, &p);
        q_new.copy_from_slice(&q);
        grad_new.copy_from_slice(&grad);
        let logp_new = leapfrog(target, &mut q_new, &mut p, &mut grad_new, cfg.step_size, cfg.leapfrog_steps);
        let h1 = hamiltonian(logp_new, &p);
        let u: f64 = r.random();
        let ok = if !h1.is_finite() {
            divergent += 1;
            false
        } else {
            libm::log(u) < h0 - h1
        };
        if ok {
            core::mem::swap(&mut q, &mut q_new);
            core::mem::swap(&mut grad, &mut grad_new);
            logp = logp_new;
            accepted += 1;
        }
        if it >= cfg.burn_in {
            samples.push(q.clone());
        }
        observe(it, ok);
    }
    if 2 * divergent > total {
        return Err(Error::DivergentTrajectory { divergent, iterations: total });
    }
    if accepted == 0 {
        return Err(Error::NoAcceptedProposals);
    }
    Ok(HmcRun { samples, acceptance_rate: accepted as f64 / total as f64, divergent, iterations: total })
}

/// Log posterior split into its parts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LogPosteriorTerms {
    pub data: f64,
    pub pde: f64,
    pub conditions: f64,
    pub prior_weights: f64,
    pub prior_d: f64,
    pub total: f64,
}

/// Posterior over network weights and `ln d`, coordinates `[params..., ln d]`.
pub struct PinnPosterior {
    arch: MlpArchitecture,
    problem: PinnProblem,
    counts: [usize; 3],
    cfg: HmcConfig,
    ln_d0: f64,
    learn_d: bool,
    params: MlpParams,
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

impl PinnPosterior {
    /// With `learn_d` false the last coordinate is held where it starts.
    pub fn new(
        arch: MlpArchitecture,
        curve_times: &[f64],
        curve_values: &[f64],
        colloc: &CollocationSet,
        cfg: &HmcConfig,
        learn_d: bool,
    ) -> Self {
        let cond = cfg.condition_points;
        let n_ic = cond;
        let n_bc = if cond < 2 { 0 } else { 2 * cond };
        let sd = cfg.noise_std_data;
        let sp = cfg.noise_std_pde;
        let sc = cfg.noise_std_conditions;
        let n_data = curve_times.len();
        let n_col = colloc.len();
        // scale the mean-square terms back up to sums over observations
        let weights = LossWeights::new(
            n_data as f64 / (2.0 * sd * sd),
            n_col as f64 / (2.0 * sp * sp),
            n_ic as f64 / (2.0 * sc * sc),
            (n_bc / 2) as f64 / (2.0 * sc * sc),
        );
        let problem = PinnProblem::from_parts(arch, curve_times, curve_values, colloc, weights, cfg.quadrature_points, cond);
        PinnPosterior {
            arch,
            problem,
            counts: [n_data, n_col, n_ic + n_bc],
            cfg: cfg.clone(),
            ln_d0: libm::log(cfg.d_prior_median),
            learn_d,
            params: MlpParams::zeros(arch),
        }
    }

    pub fn for_curve(arch: MlpArchitecture, curve: &ReleaseCurve, cfg: &HmcConfig, learn_d: bool) -> Self {
        let colloc = pinn::sample_lhs(cfg.n_collocation, cfg.seed);
        Self::new(arch, curve.times(), curve.fractions(), &colloc, cfg, learn_d)
    }

    fn split(&mut self, q: &[f64]) -> (f64, f64) {
        let n = self.params.flat().len();
        self.params.flat_mut().copy_from_slice(&q[..n]);
        let s = q[n];
        (s, libm::exp(s))
    }

    pub fn terms(&mut self, q: &[f64]) -> LogPosteriorTerms {
        let (s, d) = self.split(q);
        let loss = self.problem.loss(&self.params.clone(), d, None);
        self.assemble(&loss, q, s)
    }

    fn assemble(&self, loss: &pinn::LossComponents, q: &[f64], s: f64) -> LogPosteriorTerms {
        let w = self.problem.weights();
        let (sd, sp, sw) = (self.cfg.noise_std_data, self.cfg.noise_std_pde, self.cfg.prior_std_weights);
        let sc = self.cfg.noise_std_conditions;
        let norm = |n: usize, sigma: f64| -(n as f64) * (LN_SQRT_2PI + libm::log(sigma));
        let n_params = q.len() - 1;
        let data = -w.data * loss.data + norm(self.counts[0], sd);
        let pde = -w.pde * loss.pde + norm(self.counts[1], sp);
        let conditions = -w.ic * loss.ic - w.bc * loss.bc + norm(self.counts[2], sc);
        let prior_weights = -q[..n_params].iter().map(|v| v * v).sum::<f64>() / (2.0 * sw * sw) + norm(n_params, sw);
        let prior_d = if self.learn_d {
            let sl = self.cfg.prior_log_std_d;
            -(s - self.ln_d0) * (s - self.ln_d0) / (2.0 * sl * sl) + norm(1, sl)
        } else {
            0.0
        };
        LogPosteriorTerms { data, pde, conditions, prior_weights, prior_d, total: data + pde + conditions + prior_weights + prior_d }
    }

    /// Packs parameters and diffusivity into sampler coordinates.
    pub fn pack(params: &MlpParams, d: f64) -> Vec<f64> {
        let mut q = params.flat().to_vec();
        q.push(libm::log(d));
        q
    }
}

impl LogDensity for PinnPosterior {
    fn dim(&self) -> usize {
        self.arch.param_count() + 1
    }

    fn log_density_grad(&mut self, q: &[f64], grad: &mut [f64]) -> f64 {
        let (s, d) = self.split(q);
        let n = q.len() - 1;
        let params = self.params.clone();
        let (loss, dl_dd) = self.problem.loss_and_grad(&params, d, None, &mut grad[..n]);
        let sw2 = self.cfg.prior_std_weights * self.cfg.prior_std_weights;
        for (g, v) in grad[..n].iter_mut().zip(&q[..n]) {
            *g = -*g - v / sw2;
        }
        grad[n] = if self.learn_d {
            let sl = self.cfg.prior_log_std_d;
            -dl_dd * d - (s - self.ln_d0) / (sl * sl)
        } else {
            0.0
        };
        self.assemble(&loss, q, s).total
    }
}

/// Posterior draws of network weights and diffusivity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub arch: MlpArchitecture,
    pub params: Vec<Vec<f64>>,
    pub d: Vec<f64>,
    pub acceptance_rate: f64,
    pub divergent: usize,
    pub iterations: usize,
}

impl PosteriorSamples {
    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn d_mean(&self) -> f64 {
        self.d.iter().sum::<f64>() / self.d.len().max(1) as f64
    }

    /// Empirical `q`-quantile of the diffusivity draws (linear interpolation).
    pub fn d_quantile(&self, q: f64) -> f64 {
        let mut v = self.d.clone();
        v.sort_by(f64::total_cmp);
        let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
        let lo = libm::floor(pos) as usize;
        let hi = (lo + 1).min(v.len() - 1);
        let w = pos - lo as f64;
        (1.0 - w) * v[lo] + w * v[hi]
    }
}

/// HMC over the PINN posterior starting from `(init_params, init_d)`.
pub fn hmc_sample(
    curve: &ReleaseCurve,
    colloc: &CollocationSet,
    cfg: &HmcConfig,
    init_params: &MlpParams,
    init_d: f64,
    learn_d: bool,
) -> Result<PosteriorSamples> {
    hmc_sample_observed(curve, colloc, cfg, init_params, init_d, learn_d, |_, _| {})
}

pub fn hmc_sample_observed<F: FnMut(usize, bool)>(
    curve: &ReleaseCurve,
    colloc: &CollocationSet,
    cfg: &HmcConfig,
    init_params: &MlpParams,
    init_d: f64,
    learn_d: bool,
    observe: F,
) -> Result<PosteriorSamples> {
    cfg.validate()?;
    let arch = init_params.arch();
    if init_d.is_nan() || init_d <= 0.0 {
        return Err(Error::InvalidArgument("initial diffusivity must be > 0".into()));
    }
    let mut target = PinnPosterior::new(arch, curve.times(), curve.fractions(), colloc, cfg, learn_d);
    let run = hmc_observed(&mut target, &PinnPosterior::pack(init_params, init_d), cfg, observe)?;
    let n = arch.param_count();
    let (params, d) = run
        .samples
        .into_iter()
        .map(|mut q| {
            let s = q[n];
            q.truncate(n);
            (q, libm::exp(s))
        })
        .unzip();
    Ok(PosteriorSamples {
        arch,
        params,
        d,
        acceptance_rate: run.acceptance_rate,
        divergent: run.divergent,
        iterations: run.iterations,
    })
}

/// Release band over posterior draws.
pub fn posterior_band(samples: &PosteriorSamples, times: &[f64], quadrature_points: usize) -> Result<UncertaintyBand> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples(samples.len()));
    }
    let curves = samples
        .params
        .iter()
        .map(|p| {
            let params = MlpParams::from_flat(samples.arch, p.clone())?;
            Ok(release_curve(&params, None, times, quadrature_points))
        })
        .collect::<Result<Vec<_>>>()?;
    UncertaintyBand::from_samples(times.to_vec(), &curves, UqMethod::Hmc)
}
