//! The three benchmark protocols: classical-vs-network comparison, noisy-data
//! uncertainty bands, and the limited-data sweep.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use releaseflow_core::classical::{self, ModelKind};
use releaseflow_core::dataset::{self, FilmType, ReleaseCurve};
use releaseflow_core::metrics::{metrics, ErrorMetrics};
use releaseflow_core::pinn::{self, DMode, PinnConfig};
use releaseflow_core::uq::{self, HmcConfig, UncertaintyBand};
use releaseflow_core::Error as CoreError;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

/// Rows of `bench limited` per film: n in 2..=14.
pub const LIMITED_POINTS: usize = 15;
pub const DEFAULT_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchModel {
    Fick,
    Higuchi,
    Peppas,
    Pinn,
}

impl BenchModel {
    pub const ALL: [BenchModel; 4] = [BenchModel::Fick, BenchModel::Higuchi, BenchModel::Peppas, BenchModel::Pinn];
    pub const CLASSICAL: [BenchModel; 3] = [BenchModel::Fick, BenchModel::Higuchi, BenchModel::Peppas];

    pub fn label(self) -> &'static str {
        match self {
            BenchModel::Fick => "fick",
            BenchModel::Higuchi => "higuchi",
            BenchModel::Peppas => "peppas",
            BenchModel::Pinn => "pinn",
        }
    }

    pub fn classical_kind(self) -> Option<ModelKind> {
        match self {
            BenchModel::Fick => Some(ModelKind::FickSeries),
            BenchModel::Higuchi => Some(ModelKind::Higuchi),
            BenchModel::Peppas => Some(ModelKind::Peppas),
            BenchModel::Pinn => None,
        }
    }
}

/// Which films train with a learnable diffusivity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnD {
    Never,
    NonFickian,
    Always,
}

/// Network settings shared by every film, plus the diffusivity policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinnPlan {
    pub base: PinnConfig,
    pub learn_d: LearnD,
}

impl PinnPlan {
    pub fn fixed(base: PinnConfig) -> Self {
        PinnPlan { base, learn_d: LearnD::Never }
    }

    pub fn config(&self, film: FilmType) -> PinnConfig {
        let learn = match self.learn_d {
            LearnD::Never => false,
            LearnD::NonFickian => film != FilmType::Flat,
            LearnD::Always => true,
        };
        let d0 = self.base.d_mode.initial();
        let d_mode = if learn { DMode::Learnable(d0) } else { DMode::Fixed(d0) };
        PinnConfig { d_mode, ..self.base.clone() }
    }
}

/// Worker pool capped at `jobs` threads (0 means rayon's default).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Parallelism {
    pub jobs: usize,
}

impl Parallelism {
    pub fn run<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))?;
        Ok(pool.install(f))
    }
}

/// One curve per film, in film order.
pub fn by_film(curves: &[ReleaseCurve]) -> Result<BTreeMap<FilmType, &ReleaseCurve>> {
    let map: BTreeMap<FilmType, &ReleaseCurve> = curves.iter().map(|c| (c.film(), c)).collect();
    for film in FilmType::ALL {
        if !map.contains_key(&film) {
            return Err(CoreError::MissingFilm(film).into());
        }
    }
    Ok(map)
}

/// `<dir>/<film>.csv` for every film.
pub fn load_suite(dir: &Path) -> Result<Vec<ReleaseCurve>> {
    FilmType::ALL
        .iter()
        .map(|&film| {
            let path = dir.join(format!("{}.csv", film.label()));
            if !path.exists() {
                return Err(Error::Film {
                    film,
                    source: Box::new(Error::Format { path, msg: format!("missing curve for film {film}") }),
                });
            }
            io::load_curve(&path, Some(film))
        })
        .collect()
}

fn pinn_on(cfg: &PinnConfig, film: FilmType, train: &ReleaseCurve) -> Result<pinn::TrainedPinn> {
    pinn::train(cfg, train).map_err(|e| Error::from(e).in_film(film))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub film: FilmType,
    pub model: BenchModel,
    pub mae: f64,
    pub rmse: f64,
    /// Fitted diffusivity for the Fick fit and the network.
    pub d_hat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilmWinner {
    pub film: FilmType,
    pub model: BenchModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub cells: Vec<ComparisonCell>,
    pub winners: Vec<FilmWinner>,
}

impl ComparisonReport {
    pub fn cell(&self, film: FilmType, model: BenchModel) -> Option<&ComparisonCell> {
        self.cells.iter().find(|c| c.film == film && c.model == model)
    }

    pub fn winner(&self, film: FilmType) -> Option<BenchModel> {
        self.winners.iter().find(|w| w.film == film).map(|w| w.model)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("film,model,mae,rmse,d_hat,winner\n");
        for c in &self.cells {
            let d = c.d_hat.map(|d| d.to_string()).unwrap_or_default();
            let win = self.winner(c.film) == Some(c.model);
            let _ = writeln!(s, "{},{},{},{},{d},{}", c.film, c.model.label(), c.mae, c.rmse, u8::from(win));
        }
        s
    }
}

/// Smallest RMSE wins; the network must be strictly better to beat a
/// classical model, and earlier classical models win ties among themselves.
pub fn pick_winner(cells: &[&ComparisonCell]) -> Option<BenchModel> {
    cells
        .iter()
        .min_by(|a, b| a.rmse.total_cmp(&b.rmse).then((a.model == BenchModel::Pinn).cmp(&(b.model == BenchModel::Pinn))))
        .map(|c| c.model)
}

/// Fits the classical models and trains one network per film on the full
/// curve.
pub fn run_comparison(curves: &[ReleaseCurve], plan: &PinnPlan, par: Parallelism) -> Result<ComparisonReport> {
    let films = by_film(curves)?;
    let jobs: Vec<(FilmType, &ReleaseCurve)> = films.into_iter().collect();
    let per_film = par.run(|| {
        jobs.par_iter()
            .map(|&(film, curve)| -> Result<Vec<ComparisonCell>> {
                let mut cells = Vec::with_capacity(4);
                for m in BenchModel::CLASSICAL {
                    let kind = m.classical_kind().expect("classical");
                    let fit = classical::fit(kind, curve).map_err(|e| Error::from(e).in_film(film))?;
                    let d_hat = (kind == ModelKind::FickSeries).then(|| fit.model.params()[0]);
                    cells.push(ComparisonCell { film, model: m, mae: fit.mae, rmse: fit.rmse, d_hat });
                }
                let trained = pinn_on(&plan.config(film), film, curve)?;
                let m = metrics(curve.fractions(), &trained.release_curve(curve.times()))?;
                cells.push(ComparisonCell { film, model: BenchModel::Pinn, mae: m.mae, rmse: m.rmse, d_hat: Some(trained.d_value) });
                Ok(cells)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let cells: Vec<ComparisonCell> = per_film.into_iter().flatten().collect();
    let winners = FilmType::ALL
        .iter()
        .filter_map(|&film| {
            let film_cells: Vec<&ComparisonCell> = cells.iter().filter(|c| c.film == film).collect();
            pick_winner(&film_cells).map(|model| FilmWinner { film, model })
        })
        .collect();
    Ok(ComparisonReport { cells, winners })
}

/// Second route to a Bayesian band next to the ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BpinnMethod {
    /// Dropout-trained network, `passes` stochastic forwards.
    Dropout { config: PinnConfig, passes: usize },
    /// Learnable-diffusivity warm start followed by HMC.
    Hmc { warm: PinnConfig, hmc: HmcConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSettings {
    pub ensemble: PinnConfig,
    pub members: usize,
    pub sigma: f64,
    pub bpinn: BpinnMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalScore {
    pub model: BenchModel,
    pub mae: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseFilmReport {
    pub film: FilmType,
    pub ensemble: UncertaintyBand,
    pub bpinn: UncertaintyBand,
    /// Band means against the noiseless curve.
    pub ensemble_error: ErrorMetrics,
    pub bpinn_error: ErrorMetrics,
    /// Classical fits to one noisy copy, scored against the noiseless curve.
    pub classical: Vec<ClassicalScore>,
}

impl NoiseFilmReport {
    pub fn worst_classical(&self) -> Option<&ClassicalScore> {
        self.classical.iter().max_by(|a, b| a.rmse.total_cmp(&b.rmse))
    }

    pub fn bands_csv(&self) -> String {
        let mut s = String::from("t,ensemble_mean,ensemble_std,bpinn_mean,bpinn_std\n");
        let (e, b) = (&self.ensemble, &self.bpinn);
        for i in 0..e.times.len() {
            let _ = writeln!(s, "{},{},{},{},{}", e.times[i], e.mean[i], e.std[i], b.mean[i], b.std[i]);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub sigma: f64,
    pub films: Vec<NoiseFilmReport>,
}

impl NoiseReport {
    pub fn film(&self, film: FilmType) -> Option<&NoiseFilmReport> {
        self.films.iter().find(|f| f.film == film)
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("film,method,mae,rmse,mean_std\n");
        for f in &self.films {
            let _ = writeln!(s, "{},ensemble,{},{},{}", f.film, f.ensemble_error.mae, f.ensemble_error.rmse, f.ensemble.mean_std());
            let _ = writeln!(s, "{},{},{},{},{}", f.film, f.bpinn.method.label(), f.bpinn_error.mae, f.bpinn_error.rmse, f.bpinn.mean_std());
            for c in &f.classical {
                let _ = writeln!(s, "{},{},{},{},", f.film, c.model.label(), c.mae, c.rmse);
            }
        }
        s
    }
}

fn band_error(band: &UncertaintyBand, truth: &ReleaseCurve) -> Result<ErrorMetrics> {
    let pred: Vec<f64> = truth.times().iter().map(|&t| band.interpolate(t).0).collect();
    Ok(metrics(truth.fractions(), &pred)?)
}

/// Seed offset separating the Bayesian network's noisy copy from the
/// ensemble members' copies.
const BPINN_SEED_OFFSET: u64 = 1_000_000;

fn bpinn_band(method: &BpinnMethod, film: FilmType, clean: &ReleaseCurve, sigma: f64) -> Result<UncertaintyBand> {
    match method {
        BpinnMethod::Dropout { config, passes } => {
            let seed = config.seed.wrapping_add(BPINN_SEED_OFFSET);
            let noisy = dataset::add_gaussian_noise(clean, sigma, seed)?;
            let trained = pinn_on(config, film, &noisy)?;
            Ok(uq::mc_dropout_band(&trained, *passes, seed).map_err(|e| Error::from(e).in_film(film))?)
        }
        BpinnMethod::Hmc { warm, hmc } => {
            let inv = run_hmc_inverse(clean, sigma, warm, hmc).map_err(|e| e.in_film(film))?;
            Ok(inv.band)
        }
    }
}

/// Ensemble and Bayesian bands per film, scored against the given curves as
/// noiseless truth.
pub fn run_noise_benchmark(curves: &[ReleaseCurve], settings: &NoiseSettings, par: Parallelism) -> Result<NoiseReport> {
    if settings.members < 2 {
        return Err(CoreError::TooFewSamples(settings.members).into());
    }
    let films = by_film(curves)?;
    let grid = uq::band_grid();
    let base = &settings.ensemble;
    // every member of every film plus one Bayesian run per film, all independent
    let member_jobs: Vec<(FilmType, u64)> = films
        .keys()
        .flat_map(|&f| (0..settings.members as u64).map(move |k| (f, base.seed.wrapping_add(k))))
        .collect();
    let film_list: Vec<FilmType> = films.keys().copied().collect();
    let (members, bayes) = par.run(|| {
        rayon::join(
            || {
                member_jobs
                    .par_iter()
                    .map(|&(film, seed)| {
                        uq::train_member(base, films[&film], seed, settings.sigma, &grid).map_err(|e| Error::from(e).in_film(film))
                    })
                    .collect::<Result<Vec<_>>>()
            },
            || {
                film_list
                    .par_iter()
                    .map(|&film| bpinn_band(&settings.bpinn, film, films[&film], settings.sigma))
                    .collect::<Result<Vec<_>>>()
            },
        )
    })?;
    let members = members?;
    let bayes = bayes?;
    let mut out = Vec::with_capacity(3);
    for (i, (&film, &clean)) in films.iter().enumerate() {
        let samples = &members[i * settings.members..(i + 1) * settings.members];
        let ensemble = UncertaintyBand::from_samples(grid.clone(), samples, uq::UqMethod::Ensemble)?;
        let noisy = dataset::add_gaussian_noise(clean, settings.sigma, base.seed)?;
        let classical = BenchModel::CLASSICAL
            .iter()
            .map(|&m| {
                let fit = classical::fit(m.classical_kind().expect("classical"), &noisy).map_err(|e| Error::from(e).in_film(film))?;
                let e = classical::evaluate(&fit.model, clean);
                Ok(ClassicalScore { model: m, mae: e.mae, rmse: e.rmse })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(NoiseFilmReport {
            film,
            ensemble_error: band_error(&ensemble, clean)?,
            bpinn_error: band_error(&bayes[i], clean)?,
            ensemble,
            bpinn: bayes[i].clone(),
            classical,
        });
    }
    Ok(NoiseReport { sigma: settings.sigma, films: out })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseReport {
    pub noise_sigma: f64,
    pub warm_d: f64,
    pub samples: io::PosteriorSummary,
    pub band: UncertaintyBand,
    /// Share of the noiseless points inside the band at two standard deviations.
    pub coverage_2sd: f64,
    #[serde(skip)]
    pub posterior: Option<uq::PosteriorSamples>,
}

/// Noises `clean`, fits a learnable-diffusivity network as the starting
/// point, then samples weights and diffusivity by HMC.
pub fn run_hmc_inverse(clean: &ReleaseCurve, sigma: f64, warm: &PinnConfig, hmc: &HmcConfig) -> Result<InverseReport> {
    let noisy = dataset::add_gaussian_noise(clean, sigma, hmc.seed)?;
    let warm_cfg = PinnConfig { d_mode: DMode::Learnable(warm.d_mode.initial()), ..warm.clone() };
    let trained = pinn::train(&warm_cfg, &noisy)?;
    let colloc = pinn::sample_lhs(hmc.n_collocation, hmc.seed);
    let cfg = HmcConfig { noise_std_data: sigma, d_prior_median: warm.d_mode.initial(), ..hmc.clone() };
    let posterior = uq::hmc_sample(&noisy, &colloc, &cfg, &trained.params, trained.d_value, true)?;
    let band = uq::posterior_band(&posterior, &uq::band_grid(), hmc.quadrature_points)?;
    Ok(InverseReport {
        noise_sigma: sigma,
        warm_d: trained.d_value,
        samples: io::PosteriorSummary::of(&posterior),
        coverage_2sd: band.coverage(clean.times(), clean.fractions(), 2.0),
        band,
        posterior: Some(posterior),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitedRow {
    pub film: FilmType,
    pub model: BenchModel,
    pub n: usize,
    /// Held-out RMSE; absent when the fit failed.
    pub rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimalN {
    pub film: FilmType,
    pub model: BenchModel,
    pub n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitedDataReport {
    pub threshold: f64,
    pub rows: Vec<LimitedRow>,
    pub minimal: Vec<MinimalN>,
}

impl LimitedDataReport {
    pub fn minimal_n(&self, film: FilmType, model: BenchModel) -> Option<usize> {
        self.minimal.iter().find(|m| m.film == film && m.model == model).and_then(|m| m.n)
    }

    pub fn rmse(&self, film: FilmType, model: BenchModel, n: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.film == film && r.model == model && r.n == n).and_then(|r| r.rmse)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("film,model,n,rmse\n");
        for r in &self.rows {
            let v = r.rmse.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{v}", r.film, r.model.label(), r.n);
        }
        s
    }
}

/// Trains on the first `n` points, scores on the rest, for `n` in `ns`
/// (all of 2..=14 when `None`). Films absent from `curves` are skipped.
pub fn run_limited_data(
    curves: &[ReleaseCurve],
    plan: &PinnPlan,
    threshold: f64,
    ns: Option<&[usize]>,
    par: Parallelism,
) -> Result<LimitedDataReport> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::Usage("threshold must be > 0".into()));
    }
    for c in curves {
        if c.len() != LIMITED_POINTS {
            return Err(CoreError::WrongCurveLength { expected: LIMITED_POINTS, got: c.len() }.into());
        }
    }
    let all: Vec<usize> = (2..LIMITED_POINTS).collect();
    let ns = ns.unwrap_or(&all);
    if let Some(&bad) = ns.iter().find(|&&n| !(2..LIMITED_POINTS).contains(&n)) {
        return Err(CoreError::SplitOutOfRange { n: bad, len: LIMITED_POINTS }.into());
    }
    let mut curves: Vec<&ReleaseCurve> = curves.iter().collect();
    curves.sort_by_key(|c| c.film());
    let jobs: Vec<(&ReleaseCurve, usize)> = curves.iter().flat_map(|&c| ns.iter().map(move |&n| (c, n))).collect();
    let per_job = par.run(|| {
        jobs.par_iter()
            .map(|&(curve, n)| -> Result<Vec<LimitedRow>> {
                let film = curve.film();
                let split = dataset::split_first_n(curve, n)?;
                let mut rows = Vec::with_capacity(4);
                for m in BenchModel::CLASSICAL {
                    let rmse = classical::fit(m.classical_kind().expect("classical"), &split.train)
                        .ok()
                        .map(|fit| classical::evaluate(&fit.model, &split.test).rmse)
                        .filter(|v| v.is_finite());
                    rows.push(LimitedRow { film, model: m, n, rmse });
                }
                let trained = pinn_on(&plan.config(film), film, &split.train)?;
                let pred = trained.release_curve(split.test.times());
                let rmse = metrics(split.test.fractions(), &pred)?.rmse;
                rows.push(LimitedRow { film, model: BenchModel::Pinn, n, rmse: Some(rmse) });
                Ok(rows)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let mut rows: Vec<LimitedRow> = per_job.into_iter().flatten().collect();
    rows.sort_by_key(|r| (r.film, r.model, r.n));
    let mut minimal = Vec::new();
    for c in &curves {
        for m in BenchModel::ALL {
            let n = rows
                .iter()
                .filter(|r| r.film == c.film() && r.model == m)
                .find(|r| r.rmse.is_some_and(|v| v < threshold))
                .map(|r| r.n);
            minimal.push(MinimalN { film: c.film(), model: m, n });
        }
    }
    Ok(LimitedDataReport { threshold, rows, minimal })
}

/// Writes `comparison.csv` and `comparison.json`.
pub fn write_comparison(dir: &Path, r: &ComparisonReport) -> Result<Vec<PathBuf>> {
    let csv = dir.join("comparison.csv");
    let json = dir.join("comparison.json");
    io::write_text(&csv, &r.to_csv())?;
    io::write_json(&json, r)?;
    Ok(vec![csv, json])
}

/// Writes `noise_bands_<film>.csv`, per-method band files, a summary CSV
/// and `noise.json`.
pub fn write_noise(dir: &Path, r: &NoiseReport) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for f in &r.films {
        let p = dir.join(format!("noise_bands_{}.csv", f.film));
        io::write_text(&p, &f.bands_csv())?;
        out.push(p);
        for band in [&f.ensemble, &f.bpinn] {
            let p = dir.join(format!("band_{}_{}.csv", band.method.label(), f.film));
            io::write_band(&p, band)?;
            out.push(p);
        }
    }
    let p = dir.join("noise_summary.csv");
    io::write_text(&p, &r.summary_csv())?;
    out.push(p);
    let p = dir.join("noise.json");
    io::write_json(&p, r)?;
    out.push(p);
    Ok(out)
}

/// Writes `limited_rmse.csv` and `limited.json`.
pub fn write_limited(dir: &Path, r: &LimitedDataReport) -> Result<Vec<PathBuf>> {
    let csv = dir.join("limited_rmse.csv");
    let json = dir.join("limited.json");
    io::write_text(&csv, &r.to_csv())?;
    io::write_json(&json, r)?;
    Ok(vec![csv, json])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(model: BenchModel, rmse: f64) -> ComparisonCell {
        ComparisonCell { film: FilmType::Flat, model, mae: rmse, rmse, d_hat: None }
    }

    #[test]
    fn ties_go_to_classical() {
        let cells = [cell(BenchModel::Fick, 0.02), cell(BenchModel::Higuchi, 0.02), cell(BenchModel::Pinn, 0.02)];
        let refs: Vec<&ComparisonCell> = cells.iter().collect();
        assert_eq!(pick_winner(&refs), Some(BenchModel::Fick));
        let cells = [cell(BenchModel::Peppas, 0.03), cell(BenchModel::Pinn, 0.01)];
        let refs: Vec<&ComparisonCell> = cells.iter().collect();
        assert_eq!(pick_winner(&refs), Some(BenchModel::Pinn));
    }

    #[test]
    fn plan_switches_diffusivity_mode() {
        let plan = PinnPlan { base: PinnConfig::comparison(), learn_d: LearnD::NonFickian };
        assert_eq!(plan.config(FilmType::Flat).d_mode, DMode::Fixed(0.01));
        assert_eq!(plan.config(FilmType::Crumpled2D).d_mode, DMode::Learnable(0.01));
        assert_eq!(PinnPlan::fixed(PinnConfig::comparison()).config(FilmType::Wrinkled1D).d_mode, DMode::Fixed(0.01));
    }

    #[test]
    fn single_film_is_missing_others() {
        let curves = [dataset::synthetic_curve(FilmType::Flat)];
        let e = by_film(&curves).unwrap_err();
        assert!(matches!(e.core(), Some(CoreError::MissingFilm(FilmType::Wrinkled1D))), "{e}");
    }

    #[test]
    fn limited_rejects_short_curves() {
        let c = dataset::synthesize_fickian(0.01, 14, 1.0).unwrap();
        let plan = PinnPlan::fixed(PinnConfig::limited());
        let e = run_limited_data(&[c], &plan, 0.05, None, Parallelism::default()).unwrap_err();
        assert!(matches!(e.core(), Some(CoreError::WrongCurveLength { expected: 15, got: 14 })));
    }
}
