//! Command-line front end. Every run writes its outputs and a manifest under
//! one directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use releaseflow_core::classical::{self, ModelKind};
use releaseflow_core::dataset::{self, FilmType, ReleaseCurve};
use releaseflow_core::metrics::metrics;
use releaseflow_core::pinn::{self, DMode, PinnConfig, DEFAULT_P_KEEP};
use releaseflow_core::uq::HmcConfig;
use serde_json::json;

use crate::bench::{self, BpinnMethod, LearnD, NoiseSettings, Parallelism, PinnPlan};
use crate::error::{exit, Error, Result};
use crate::io;
use crate::manifest::{strip_out, RunManifest};

pub const OUT_ENV: &str = "RELEASEFLOW_OUT";
pub const DEFAULT_OUT: &str = "releaseflow-out";

#[derive(Debug, Parser)]
#[command(name = "releaseflow", version, about = "Drug-release fitting, physics-informed networks and benchmarks")]
pub struct Cli {
    /// Run directory for every output file
    #[arg(long, global = true, env = OUT_ENV, default_value = DEFAULT_OUT)]
    pub out: PathBuf,
    /// Worker threads for parallel training (0 = one per core)
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a classical model to a release curve
    Fit(FitArgs),
    /// Train one physics-informed network
    Train(TrainArgs),
    /// Run a benchmark protocol on the synthetic suite or user data
    Bench {
        #[command(subcommand)]
        which: BenchCommand,
    },
    /// Write the synthetic reference curves as CSV
    Synth(SynthArgs),
    /// Re-run the command recorded in a manifest
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FilmArg {
    Flat,
    Wrinkled,
    Crumpled,
}

impl From<FilmArg> for FilmType {
    fn from(f: FilmArg) -> Self {
        match f {
            FilmArg::Flat => FilmType::Flat,
            FilmArg::Wrinkled => FilmType::Wrinkled1D,
            FilmArg::Crumpled => FilmType::Crumpled2D,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LearnArg {
    Never,
    NonFickian,
    Always,
}

impl From<LearnArg> for LearnD {
    fn from(l: LearnArg) -> Self {
        match l {
            LearnArg::Never => LearnD::Never,
            LearnArg::NonFickian => LearnD::NonFickian,
            LearnArg::Always => LearnD::Always,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Curve CSV
    #[arg(long)]
    pub data: PathBuf,
    /// fick, higuchi or peppas
    #[arg(long)]
    pub model: String,
    /// Film tag, overriding the file header
    #[arg(long, value_enum)]
    pub film: Option<FilmArg>,
}

/// Network settings shared by `train` and the benchmarks.
#[derive(Debug, Clone, Args)]
pub struct NetArgs {
    /// Training epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Latin-hypercube collocation points
    #[arg(long)]
    pub colloc: Option<usize>,
    /// Diffusivity (fixed value, or starting value when learned)
    #[arg(long, default_value_t = 0.01)]
    pub d: f64,
    /// Seed for initialization, collocation, dropout and noise
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl NetArgs {
    fn config(&self, preset: PinnConfig, learn: bool) -> PinnConfig {
        PinnConfig {
            epochs: self.epochs.unwrap_or(preset.epochs),
            n_collocation: self.colloc.unwrap_or(preset.n_collocation),
            d_mode: if learn { DMode::Learnable(self.d) } else { DMode::Fixed(self.d) },
            seed: self.seed,
            ..preset
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Curve CSV; the film's synthetic curve when absent
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "flat")]
    pub film: FilmArg,
    #[command(flatten)]
    pub net: NetArgs,
    /// Learn the diffusivity instead of fixing it
    #[arg(long)]
    pub learn_d: bool,
    /// Gaussian noise added to the curve before training
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    /// Keep probability for dropout during training (1 = off)
    #[arg(long, default_value_t = 1.0)]
    pub p_keep: f64,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Classical fits against one network per film
    Comparison(ComparisonArgs),
    /// Ensemble and Bayesian uncertainty bands on noisy copies
    Noise(NoiseArgs),
    /// Train on the first n points, score on the rest
    Limited(LimitedArgs),
}

#[derive(Debug, Args)]
pub struct SuiteArgs {
    /// Directory holding flat.csv, wrinkled.csv and crumpled.csv; the
    /// synthetic suite when absent
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Films with a learned diffusivity
    #[arg(long, value_enum, default_value = "never")]
    pub learn_d: LearnArg,
}

#[derive(Debug, Args)]
pub struct ComparisonArgs {
    #[command(flatten)]
    pub suite: SuiteArgs,
    #[command(flatten)]
    pub net: NetArgs,
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    #[command(flatten)]
    pub suite: SuiteArgs,
    #[command(flatten)]
    pub net: NetArgs,
    /// Ensemble size
    #[arg(long, default_value_t = 50)]
    pub members: usize,
    /// Noise standard deviation for the noisy copies
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    /// Monte Carlo dropout passes
    #[arg(long, default_value_t = 100)]
    pub passes: usize,
    /// Epochs of the dropout-trained network
    #[arg(long, default_value_t = 10_000)]
    pub bpinn_epochs: usize,
    /// Sample the Bayesian network by HMC instead of dropout
    #[arg(long)]
    pub hmc: bool,
    /// Retained HMC draws
    #[arg(long, default_value_t = 2000)]
    pub hmc_samples: usize,
    /// Discarded HMC iterations
    #[arg(long, default_value_t = 1000)]
    pub hmc_burn_in: usize,
    /// HMC leapfrog step
    #[arg(long, default_value_t = 1e-3)]
    pub hmc_step: f64,
}

#[derive(Debug, Args)]
pub struct LimitedArgs {
    #[command(flatten)]
    pub suite: SuiteArgs,
    #[command(flatten)]
    pub net: NetArgs,
    /// Held-out RMSE that counts as a good prediction
    #[arg(long, default_value_t = bench::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Restrict to one film
    #[arg(long, value_enum)]
    pub film: Option<FilmArg>,
    /// Training sizes to run (comma separated); all of 2..=14 when absent
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// One film; all three when absent
    #[arg(long, value_enum)]
    pub film: Option<FilmArg>,
    /// Gaussian noise added to each curve
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run
    pub manifest: PathBuf,
}

/// What a command produced, for the manifest.
struct Outcome {
    exit_code: i32,
    config: serde_json::Value,
    seeds: Vec<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Outcome {
    fn ok(config: serde_json::Value, seeds: Vec<u64>, inputs: Vec<PathBuf>, outputs: Vec<PathBuf>) -> Self {
        Outcome { exit_code: exit::OK, config, seeds, inputs, outputs }
    }
}

/// Parses `argv` (program name first), runs, writes the manifest and
/// returns the exit code.
pub fn main_with_args(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::INPUT } else { exit::OK };
            let _ = e.print();
            return code;
        }
    };
    let args = strip_out(&argv[1..]);
    run_cli(cli, args)
}

fn run_cli(cli: Cli, args: Vec<String>) -> i32 {
    if let Command::Replay(r) = &cli.command {
        return match replay(&r.manifest, &cli.out) {
            Ok(code) => code,
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        };
    }
    let started = Instant::now();
    let name = command_name(&cli.command);
    let par = Parallelism { jobs: cli.jobs };
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a, &cli.out),
        Command::Train(a) => cmd_train(a, &cli.out),
        Command::Bench { which } => cmd_bench(which, &cli.out, par),
        Command::Synth(a) => cmd_synth(a, &cli.out),
        Command::Replay(_) => unreachable!("handled above"),
    };
    let (code, outcome, error) = match result {
        Ok(o) => (o.exit_code, Some(o), None),
        Err(e) => {
            eprintln!("error: {e}");
            (e.exit_code(), None, Some(e.to_string()))
        }
    };
    let o = outcome.unwrap_or(Outcome { exit_code: code, config: serde_json::Value::Null, seeds: vec![], inputs: vec![], outputs: vec![] });
    let manifest = RunManifest {
        command: name,
        args,
        config: o.config,
        seeds: o.seeds,
        inputs: o.inputs,
        outputs: o.outputs,
        out_dir: cli.out.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        duration_secs: started.elapsed().as_secs_f64(),
        exit_code: code,
        error,
    };
    if let Err(e) = manifest.write() {
        eprintln!("error: cannot write manifest: {e}");
        return if code == exit::OK { exit::INPUT } else { code };
    }
    code
}

fn command_name(c: &Command) -> String {
    match c {
        Command::Fit(_) => "fit".into(),
        Command::Train(_) => "train".into(),
        Command::Bench { which } => match which {
            BenchCommand::Comparison(_) => "bench comparison".into(),
            BenchCommand::Noise(_) => "bench noise".into(),
            BenchCommand::Limited(_) => "bench limited".into(),
        },
        Command::Synth(_) => "synth".into(),
        Command::Replay(_) => "replay".into(),
    }
}

/// Re-runs a recorded command into `out` (or beside the original run when
/// `out` is the default).
pub fn replay(manifest: &Path, out: &Path) -> Result<i32> {
    let m = RunManifest::read(manifest)?;
    let target = if out == Path::new(DEFAULT_OUT) {
        let mut name = m.out_dir.as_os_str().to_owned();
        name.push("-replay");
        PathBuf::from(name)
    } else {
        out.to_path_buf()
    };
    let mut argv = vec!["releaseflow".to_string()];
    argv.extend(m.args.iter().cloned());
    argv.push("--out".into());
    argv.push(target.to_string_lossy().into_owned());
    let cli = Cli::try_parse_from(&argv).map_err(|e| Error::Usage(format!("manifest arguments no longer parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(Error::Usage("a replay manifest cannot be replayed".into()));
    }
    Ok(run_cli(cli, m.args))
}

fn cmd_fit(a: &FitArgs, out: &Path) -> Result<Outcome> {
    let kind: ModelKind = a.model.parse()?;
    let curve = io::load_curve(&a.data, a.film.map(Into::into))?;
    let fit = classical::fit(kind, &curve)?;
    let path = out.join(format!("fit_{}.json", kind.label()));
    io::write_json(&path, &fit)?;
    let params: Vec<String> = fit.model.params().iter().map(|p| format!("{p:.6}")).collect();
    println!(
        "{} on {}: params [{}] mae {:.6} rmse {:.6} {}",
        kind.label(),
        curve.film(),
        params.join(", "),
        fit.mae,
        fit.rmse,
        if fit.converged { "converged" } else { "not converged" }
    );
    let mut o = Outcome::ok(json!({ "model": kind, "film": curve.film() }), vec![], vec![a.data.clone()], vec![path]);
    if !fit.converged {
        o.exit_code = exit::NOT_CONVERGED;
    }
    Ok(o)
}

fn cmd_train(a: &TrainArgs, out: &Path) -> Result<Outcome> {
    let film: FilmType = a.film.into();
    let clean = match &a.data {
        Some(p) => io::load_curve(p, Some(film))?,
        None => dataset::synthetic_curve(film),
    };
    let curve = if a.sigma > 0.0 { dataset::add_gaussian_noise(&clean, a.sigma, a.net.seed)? } else { clean.clone() };
    let cfg = PinnConfig { p_keep: a.p_keep, ..a.net.config(PinnConfig::comparison(), a.learn_d) };
    cfg.validate()?;
    let trained = pinn::train(&cfg, &curve)?;
    io::save_trained(out, &trained)?;
    let pred = trained.release_curve(clean.times());
    let m = metrics(clean.fractions(), &pred)?;
    let summary = out.join("train.json");
    io::write_json(&summary, &json!({ "film": film, "d": trained.d_value, "mae": m.mae, "rmse": m.rmse, "epochs": cfg.epochs }))?;
    let curve_path = out.join("release.csv");
    let mut text = String::from("t,observed,predicted\n");
    for ((t, y), p) in clean.points().zip(&pred) {
        text.push_str(&format!("{t},{y},{p}\n"));
    }
    io::write_text(&curve_path, &text)?;
    println!("trained on {film}: d {:.6} rmse {:.6} ({} epochs)", trained.d_value, m.rmse, cfg.epochs);
    let outputs = ["params.bin", "params.json", "config.json", "loss_history.csv"].iter().map(|f| out.join(f)).chain([summary, curve_path]).collect();
    Ok(Outcome::ok(json!({ "film": film, "sigma": a.sigma, "pinn": cfg }), vec![cfg.seed], a.data.iter().cloned().collect(), outputs))
}

fn suite(a: &SuiteArgs) -> Result<(Vec<ReleaseCurve>, Vec<PathBuf>)> {
    match &a.data_dir {
        Some(dir) => {
            let curves = bench::load_suite(dir)?;
            let inputs = FilmType::ALL.iter().map(|f| dir.join(format!("{}.csv", f.label()))).collect();
            Ok((curves, inputs))
        }
        None => Ok((dataset::synthetic_suite().to_vec(), vec![])),
    }
}

fn cmd_bench(which: &BenchCommand, out: &Path, par: Parallelism) -> Result<Outcome> {
    match which {
        BenchCommand::Comparison(a) => {
            let (curves, inputs) = suite(&a.suite)?;
            let plan = PinnPlan { base: a.net.config(PinnConfig::comparison(), false), learn_d: a.suite.learn_d.into() };
            plan.base.validate()?;
            let report = bench::run_comparison(&curves, &plan, par)?;
            let outputs = bench::write_comparison(out, &report)?;
            for w in &report.winners {
                println!("{}: lowest rmse {}", w.film, w.model.label());
            }
            Ok(Outcome::ok(json!({ "plan": plan }), vec![a.net.seed], inputs, outputs))
        }
        BenchCommand::Noise(a) => {
            let (curves, inputs) = suite(&a.suite)?;
            let ensemble = a.net.config(PinnConfig::ensemble(), a.suite.learn_d != LearnArg::Never);
            ensemble.validate()?;
            let bpinn = if a.hmc {
                BpinnMethod::Hmc {
                    warm: PinnConfig { d_mode: DMode::Learnable(a.net.d), ..ensemble.clone() },
                    hmc: HmcConfig {
                        n_samples: a.hmc_samples,
                        burn_in: a.hmc_burn_in,
                        step_size: a.hmc_step,
                        seed: a.net.seed,
                        d_prior_median: a.net.d,
                        ..HmcConfig::default()
                    },
                }
            } else {
                BpinnMethod::Dropout {
                    config: PinnConfig { epochs: a.bpinn_epochs, p_keep: DEFAULT_P_KEEP, ..ensemble.clone() },
                    passes: a.passes,
                }
            };
            let settings = NoiseSettings { ensemble, members: a.members, sigma: a.sigma, bpinn };
            let report = bench::run_noise_benchmark(&curves, &settings, par)?;
            let outputs = bench::write_noise(out, &report)?;
            for f in &report.films {
                println!(
                    "{}: ensemble rmse {:.4} std {:.4} | {} rmse {:.4} std {:.4}",
                    f.film,
                    f.ensemble_error.rmse,
                    f.ensemble.mean_std(),
                    f.bpinn.method.label(),
                    f.bpinn_error.rmse,
                    f.bpinn.mean_std()
                );
            }
            Ok(Outcome::ok(json!({ "noise": settings }), vec![a.net.seed], inputs, outputs))
        }
        BenchCommand::Limited(a) => {
            let (mut curves, inputs) = suite(&a.suite)?;
            if let Some(f) = a.film {
                let f: FilmType = f.into();
                curves.retain(|c| c.film() == f);
            }
            let plan = PinnPlan { base: a.net.config(PinnConfig::limited(), false), learn_d: a.suite.learn_d.into() };
            plan.base.validate()?;
            let report = bench::run_limited_data(&curves, &plan, a.threshold, a.n.as_deref(), par)?;
            let outputs = bench::write_limited(out, &report)?;
            for m in &report.minimal {
                let n = m.n.map_or("none".to_string(), |n| n.to_string());
                println!("{} {}: minimal n {n}", m.film, m.model.label());
            }
            Ok(Outcome::ok(json!({ "plan": plan, "threshold": a.threshold, "n": a.n }), vec![a.net.seed], inputs, outputs))
        }
    }
}

fn cmd_synth(a: &SynthArgs, out: &Path) -> Result<Outcome> {
    let films: Vec<FilmType> = match a.film {
        Some(f) => vec![f.into()],
        None => FilmType::ALL.to_vec(),
    };
    let mut outputs = Vec::new();
    for film in films {
        let clean = dataset::synthetic_curve(film);
        let curve = if a.sigma > 0.0 { dataset::add_gaussian_noise(&clean, a.sigma, a.seed)? } else { clean };
        let p = out.join(format!("{}.csv", film.label()));
        io::save_curve(&p, &curve)?;
        outputs.push(p);
    }
    println!("wrote {} curve(s) to {}", outputs.len(), out.display());
    Ok(Outcome::ok(json!({ "sigma": a.sigma }), vec![a.seed], vec![], outputs))
}
