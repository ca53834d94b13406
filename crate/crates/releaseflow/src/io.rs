//! On-disk formats: release curves, parameter checkpoints, trained networks,
//! uncertainty bands and posterior draws.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use releaseflow_core::dataset::{FilmType, ReleaseCurve};
use releaseflow_core::nn::{MlpArchitecture, MlpParams};
use releaseflow_core::pinn::{LossComponents, PinnConfig, TrainedPinn};
use releaseflow_core::uq::{PosteriorSamples, UncertaintyBand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"RFPARAM1";
pub const POSTERIOR_MAGIC: [u8; 8] = *b"RFPOST01";
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TimeUnit {
    Normalized,
    Minutes,
    Hours,
}

/// Parses the curve CSV format. `film` overrides a `#film=` header; with
/// neither the curve is tagged flat.
pub fn parse_curve(text: &str, film: Option<FilmType>, path: &Path) -> Result<ReleaseCurve> {
    let perr = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    let mut header_film = None;
    let mut unit = TimeUnit::Normalized;
    let mut noise = None;
    let (mut times, mut fractions) = (Vec::new(), Vec::new());
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            let Some((k, v)) = meta.split_once('=') else { continue };
            let v = v.trim();
            match k.trim() {
                "film" => header_film = Some(v.parse::<FilmType>().map_err(|e| perr(line_no, e.to_string()))?),
                "time_unit" => {
                    unit = match v {
                        "normalized" => TimeUnit::Normalized,
                        "minutes" => TimeUnit::Minutes,
                        "hours" => TimeUnit::Hours,
                        other => return Err(perr(line_no, format!("unknown time_unit `{other}`"))),
                    }
                }
                "noise_sigma" => {
                    noise = Some(v.parse::<f64>().map_err(|e| perr(line_no, format!("noise_sigma: {e}")))?)
                }
                _ => {}
            }
            continue;
        }
        let mut cols = line.split(',').map(str::trim);
        let (Some(a), Some(b), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(perr(line_no, format!("expected `time,fraction`, got `{line}`")));
        };
        match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(t), Ok(y)) => {
                times.push(t);
                fractions.push(y);
            }
            // a column-name row before any data
            _ if times.is_empty() && a.parse::<f64>().is_err() && b.parse::<f64>().is_err() => {}
            _ => return Err(perr(line_no, format!("malformed row `{line}`"))),
        }
    }
    if unit != TimeUnit::Normalized {
        let max = times.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            for t in &mut times {
                *t /= max;
            }
        }
    }
    let film = film.or(header_film).unwrap_or(FilmType::Flat);
    ReleaseCurve::new(film, times, fractions, noise).map_err(|e| Error::Format { path: path.to_path_buf(), msg: e.to_string() })
}

pub fn load_curve(path: &Path, film: Option<FilmType>) -> Result<ReleaseCurve> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_curve(&text, film, path)
}

/// Six decimals, or the shortest exact form when six would lose digits.
fn decimal(v: f64) -> String {
    let six = format!("{v:.6}");
    if six.parse::<f64>() == Ok(v) {
        six
    } else {
        format!("{v}")
    }
}

pub fn format_curve(curve: &ReleaseCurve) -> String {
    let mut s = format!("#film={}\n#time_unit=normalized\n", curve.film());
    if let Some(sigma) = curve.noise_sigma() {
        let _ = writeln!(s, "#noise_sigma={sigma}");
    }
    for (t, y) in curve.points() {
        let _ = writeln!(s, "{},{}", decimal(t), decimal(y));
    }
    s
}

pub fn save_curve(path: &Path, curve: &ReleaseCurve) -> Result<()> {
    write_text(path, &format_curve(curve))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })
}

fn header(magic: [u8; 8], arch: MlpArchitecture) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&arch.digest().to_le_bytes());
    out
}

fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect()
}

fn check_header(bytes: &[u8], magic: [u8; 8], arch: MlpArchitecture, path: &Path) -> Result<()> {
    let ferr = |msg: String| Error::Format { path: path.to_path_buf(), msg };
    if bytes.len() < HEADER_LEN || bytes[..8] != magic {
        return Err(ferr("bad magic".into()));
    }
    let digest = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    if digest != arch.digest() {
        return Err(ferr(format!("architecture digest {digest:#x} does not match {:#x}", arch.digest())));
    }
    Ok(())
}

/// 8-byte magic, 8-byte architecture digest, then the parameters as
/// little-endian `f64`.
pub fn checkpoint_bytes(params: &MlpParams) -> Vec<u8> {
    let mut out = header(CHECKPOINT_MAGIC, params.arch());
    push_f64s(&mut out, params.flat());
    out
}

pub fn params_from_checkpoint(bytes: &[u8], arch: MlpArchitecture, path: &Path) -> Result<MlpParams> {
    check_header(bytes, CHECKPOINT_MAGIC, arch, path)?;
    let body = &bytes[HEADER_LEN..];
    if !body.len().is_multiple_of(8) {
        return Err(Error::Format { path: path.to_path_buf(), msg: "truncated parameter block".into() });
    }
    Ok(MlpParams::from_flat(arch, read_f64s(body))?)
}

pub fn write_checkpoint(path: &Path, params: &MlpParams) -> Result<()> {
    write_bytes(path, &checkpoint_bytes(params))
}

pub fn read_checkpoint(path: &Path, arch: MlpArchitecture) -> Result<MlpParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    params_from_checkpoint(&bytes, arch, path)
}

#[derive(Serialize)]
struct ParamsDump<'a> {
    arch: MlpArchitecture,
    values: &'a [f64],
}

#[derive(Serialize, Deserialize)]
struct TrainedMeta {
    config: PinnConfig,
    d_value: f64,
}

pub const LOSS_HISTORY_HEADER: &str = "epoch,total,data,pde,ic,bc";

pub fn loss_history_csv(history: &[LossComponents]) -> String {
    let mut s = String::from(LOSS_HISTORY_HEADER);
    s.push('\n');
    for (i, l) in history.iter().enumerate() {
        let _ = writeln!(s, "{i},{},{},{},{},{}", l.total, l.data, l.pde, l.ic, l.bc);
    }
    s
}

fn parse_loss_history(text: &str, path: &Path) -> Result<Vec<LossComponents>> {
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let v: Vec<f64> = l.split(',').skip(1).map(|c| c.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(
                |e| Error::Parse { path: path.to_path_buf(), line: i + 1, msg: e.to_string() },
            )?;
            match v[..] {
                [total, data, pde, ic, bc] => Ok(LossComponents { total, data, pde, ic, bc }),
                _ => Err(Error::Parse { path: path.to_path_buf(), line: i + 1, msg: "expected 6 columns".into() }),
            }
        })
        .collect()
}

/// Writes `params.bin`, `params.json`, `config.json` and `loss_history.csv`.
pub fn save_trained(dir: &Path, trained: &TrainedPinn) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_checkpoint(&dir.join("params.bin"), &trained.params)?;
    write_json(&dir.join("params.json"), &ParamsDump { arch: trained.params.arch(), values: trained.params.flat() })?;
    write_json(&dir.join("config.json"), &TrainedMeta { config: trained.config.clone(), d_value: trained.d_value })?;
    write_text(&dir.join("loss_history.csv"), &loss_history_csv(&trained.loss_history))
}

pub fn load_trained(dir: &Path) -> Result<TrainedPinn> {
    let meta: TrainedMeta = read_json(&dir.join("config.json"))?;
    let params = read_checkpoint(&dir.join("params.bin"), meta.config.arch)?;
    let hist_path = dir.join("loss_history.csv");
    let text = fs::read_to_string(&hist_path).map_err(|e| Error::io(&hist_path, e))?;
    let loss_history = parse_loss_history(&text, &hist_path)?;
    Ok(TrainedPinn { params, d_value: meta.d_value, loss_history, config: meta.config })
}

pub fn band_csv(band: &UncertaintyBand) -> String {
    let mut s = String::from("t,mean,std\n");
    for ((t, m), sd) in band.times.iter().zip(&band.mean).zip(&band.std) {
        let _ = writeln!(s, "{t},{m},{sd}");
    }
    s
}

pub fn write_band(path: &Path, band: &UncertaintyBand) -> Result<()> {
    write_text(path, &band_csv(band))
}

/// Header, draw count as `u64`, then each draw as its parameters followed
/// by `d`, all little-endian `f64`.
pub fn posterior_bytes(samples: &PosteriorSamples) -> Vec<u8> {
    let mut out = header(POSTERIOR_MAGIC, samples.arch);
    out.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    for (p, d) in samples.params.iter().zip(&samples.d) {
        push_f64s(&mut out, p);
        out.extend_from_slice(&d.to_le_bytes());
    }
    out
}

/// Draws from `posterior_bytes` output as `(params, d)` pairs.
pub fn posterior_draws(bytes: &[u8], arch: MlpArchitecture, path: &Path) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    check_header(bytes, POSTERIOR_MAGIC, arch, path)?;
    let ferr = |msg: &str| Error::Format { path: path.to_path_buf(), msg: msg.into() };
    let n = u64::from_le_bytes(bytes.get(16..24).ok_or_else(|| ferr("missing draw count"))?.try_into().expect("8 bytes")) as usize;
    let stride = arch.param_count() + 1;
    let body = &bytes[24..];
    if body.len() != n * stride * 8 {
        return Err(ferr("draw block length does not match the header"));
    }
    let values = read_f64s(body);
    Ok(values.chunks_exact(stride).map(|c| (c[..stride - 1].to_vec(), c[stride - 1])).unzip())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub n_draws: usize,
    pub acceptance_rate: f64,
    pub divergent: usize,
    pub iterations: usize,
    pub d_mean: f64,
    pub d_q025: f64,
    pub d_q975: f64,
}

impl PosteriorSummary {
    pub fn of(s: &PosteriorSamples) -> Self {
        PosteriorSummary {
            n_draws: s.len(),
            acceptance_rate: s.acceptance_rate,
            divergent: s.divergent,
            iterations: s.iterations,
            d_mean: s.d_mean(),
            d_q025: s.d_quantile(0.025),
            d_q975: s.d_quantile(0.975),
        }
    }
}

/// `posterior.bin` plus `posterior.json` under `dir`.
pub fn save_posterior(dir: &Path, samples: &PosteriorSamples) -> Result<(PathBuf, PathBuf)> {
    let bin = dir.join("posterior.bin");
    let json = dir.join("posterior.json");
    write_bytes(&bin, &posterior_bytes(samples))?;
    write_json(&json, &PosteriorSummary::of(samples))?;
    Ok((bin, json))
}
