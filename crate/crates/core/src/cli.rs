//! The `lnt` command line: `synth`, `train`, `score`, `eval`, `viz-decode`.
//!
//! Settings resolve as built-in defaults, then `--config` (a preset name or
//! a file of `key = value` lines), then explicit flags.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint::{file_sha256, Checkpoint};
use crate::data::{inject_sine_anomalies, load_csv, synth_split, write_csv, Amplitude, InjectionSpec, NormStats};
use crate::error::{LntError, Result};
use crate::eval::evaluate;
use crate::experiment::training_windows;
use crate::model::{ModelConfig, ModelParams};
use crate::scoring::{score, Method, ScoreConfig};
use crate::tensor::{Real, Tensor};
use crate::training::{fit_decoder, fit_from, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "lnt", version, about = "Time-series anomaly detection with local neural transformations")]
pub struct Cli {
    /// Seed for every random choice of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Model preset (`small`, `audio`) or a file of `key = value` settings.
    #[arg(long, global = true)]
    pub config: Option<String>,
    /// Floating point width used for computation.
    #[arg(long, global = true, value_parser = ["32", "64"])]
    pub precision: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a clean train split and a labeled test split with injected sine tones.
    Synth(SynthArgs),
    /// Train a model on a CSV series.
    Train(TrainArgs),
    /// Score every frame of a CSV series.
    Score(ScoreArgs),
    /// ROC-AUC and best-F1 of a score file.
    Eval(EvalArgs),
    /// Decode the original, reconstructed and transformed views of one window.
    VizDecode(VizArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub train_len: Option<usize>,
    #[arg(long)]
    pub test_len: Option<usize>,
    #[arg(long)]
    pub anomaly_fraction: Option<f64>,
    /// Tone amplitude as a multiple of each channel's standard deviation.
    #[arg(long)]
    pub amplitude: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path.
    #[arg(long, default_value = "model.lntc")]
    pub out: PathBuf,
    /// Report CSV (defaults next to the checkpoint).
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub cpc_weight: Option<f64>,
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub sub_sequence_length: Option<usize>,
    #[arg(long)]
    pub window_stride: Option<usize>,
    #[arg(long)]
    pub horizons: Option<usize>,
    #[arg(long)]
    pub transforms: Option<usize>,
    /// Also fit the visualization decoder.
    #[arg(long)]
    pub decoder: bool,
    #[arg(long)]
    pub decoder_epochs: Option<usize>,
    #[arg(long)]
    pub decoder_lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// `ddcl` or `cpc-approx`.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long, default_value = "scores.csv")]
    pub out: PathBuf,
    /// Sum latent terms instead of averaging them.
    #[arg(long)]
    pub no_normalize: bool,
    #[arg(long)]
    pub chunk_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Score CSV (`index,score[,label]`).
    #[arg(long)]
    pub scores: PathBuf,
    /// CSV with a `label` column, when the score file has none.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value = "eval.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// First frame of the window.
    #[arg(long, default_value_t = 0)]
    pub start: usize,
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long, default_value = "views.csv")]
    pub out: PathBuf,
}

/// Record of one command invocation.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub precision: u32,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub checkpoint_sha256: Option<String>,
    pub wall_seconds: f64,
    pub details: serde_json::Value,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| LntError::Data(e.to_string()))?;
        fs::write(path, json + "\n").map_err(|e| LntError::io(path, e))
    }
}

/// `key = value` lines; `#` starts a comment.
pub fn parse_settings(text: &str, origin: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| LntError::Parse {
            path: origin.to_string(),
            row: i + 1,
            msg: format!("expected 'key = value', got '{line}'"),
        })?;
        out.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(out)
}

const KNOWN_KEYS: &[&str] = &[
    "seed", "precision", "model", "channels", "train_len", "test_len", "anomaly_fraction", "amplitude", "epochs",
    "lr", "batch_size", "lambda", "cpc_weight", "negatives", "sub_sequence_length", "window_stride", "horizons",
    "transforms", "decoder_epochs", "decoder_lr", "method", "chunk_len", "normalize", "shared_heads",
];

/// Layered settings of one invocation.
struct Settings {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl Settings {
    fn from_cli(config: Option<&str>) -> Result<Self> {
        let mut file = BTreeMap::new();
        match config {
            None => {}
            Some(name @ ("small" | "audio")) => {
                file.insert("model".to_string(), name.to_string());
            }
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| LntError::io(path, e))?;
                file = parse_settings(&text, path)?;
                if let Some(k) = file.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
                    return Err(LntError::Config(format!("{path}: unknown setting '{k}'")));
                }
            }
        }
        Ok(Settings {
            file,
            resolved: BTreeMap::new(),
        })
    }

    /// Flag, else file, else default; records the resolved value.
    fn pick<T: FromStr + ToString>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        let value = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(s) => s
                    .parse()
                    .map_err(|_| LntError::Config(format!("setting {key}: cannot parse '{s}'")))?,
                None => default,
            },
        };
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

/// Parses `args` and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(LntError::Config(e.to_string())),
    };
    execute(cli)
}

pub fn execute(cli: Cli) -> Result<()> {
    if let Ok(n) = std::env::var("LNT_THREADS") {
        let n: usize = n.parse().map_err(|_| LntError::Config(format!("LNT_THREADS must be a count, got '{n}'")))?;
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut settings = Settings::from_cli(cli.config.as_deref())?;
    let seed = settings.pick("seed", cli.seed, 0u64)?;
    let precision: u32 = settings.pick("precision", cli.precision.map(|p| p.parse().expect("validated by clap")), 32)?;
    if precision != 32 && precision != 64 {
        return Err(LntError::Config(format!("precision must be 32 or 64, got {precision}")));
    }
    let start = Instant::now();
    let (name, mut manifest, mpath) = match &cli.command {
        Command::Synth(a) => ("synth", cmd_synth(a, &mut settings, seed)?, a.out.join("manifest.json")),
        Command::Train(a) => {
            let m = if precision == 64 {
                cmd_train::<f64>(a, &mut settings, seed)?
            } else {
                cmd_train::<f32>(a, &mut settings, seed)?
            };
            ("train", m, manifest_path(&a.out))
        }
        Command::Score(a) => {
            let m = if precision == 64 {
                cmd_score::<f64>(a, &mut settings)?
            } else {
                cmd_score::<f32>(a, &mut settings)?
            };
            ("score", m, manifest_path(&a.out))
        }
        Command::Eval(a) => ("eval", cmd_eval(a)?, manifest_path(&a.out)),
        Command::VizDecode(a) => {
            let m = if precision == 64 {
                cmd_viz::<f64>(a, &mut settings)?
            } else {
                cmd_viz::<f32>(a, &mut settings)?
            };
            ("viz-decode", m, manifest_path(&a.out))
        }
    };
    manifest.command = name.to_string();
    manifest.seed = seed;
    manifest.precision = precision;
    manifest.config = settings.resolved;
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    manifest.write(&mpath)
}

fn blank_manifest(inputs: Vec<String>, outputs: Vec<String>) -> RunManifest {
    RunManifest {
        command: String::new(),
        seed: 0,
        precision: 32,
        config: BTreeMap::new(),
        inputs,
        outputs,
        checkpoint_sha256: None,
        wall_seconds: 0.0,
        details: serde_json::Value::Null,
    }
}

fn cmd_synth(a: &SynthArgs, s: &mut Settings, seed: u64) -> Result<RunManifest> {
    let channels = s.pick("channels", a.channels, 3)?;
    let train_len = s.pick("train_len", a.train_len, 50_000)?;
    let test_len = s.pick("test_len", a.test_len, 20_000)?;
    let fraction = s.pick("anomaly_fraction", a.anomaly_fraction, 0.10)?;
    let amplitude = s.pick("amplitude", a.amplitude, 0.5)?;
    fs::create_dir_all(&a.out).map_err(|e| LntError::io(&a.out, e))?;
    let (train, test) = synth_split(channels, train_len, test_len, seed)?;
    let spec = InjectionSpec {
        fraction,
        amplitude: Amplitude::RelativeStd(amplitude),
        seed: seed.wrapping_add(1),
        ..InjectionSpec::default()
    };
    let injected = inject_sine_anomalies(&test, &spec)?;
    let (train_path, test_path) = (a.out.join("train.csv"), a.out.join("test.csv"));
    write_csv(&train_path, &train)?;
    write_csv(&test_path, &injected.series)?;
    let mut m = blank_manifest(vec![], vec![show(&train_path), show(&test_path)]);
    m.details = serde_json::json!({
        "labeled_fraction": injected.series.labeled_fraction(),
        "anomalies": injected.tones,
    });
    Ok(m)
}

fn model_config(s: &mut Settings, a: &TrainArgs, channels: usize) -> Result<ModelConfig> {
    let preset = s.pick("model", None, "small".to_string())?;
    let mut cfg = ModelConfig::preset(&preset, channels)?;
    cfg.horizons = s.pick("horizons", a.horizons, cfg.horizons)?;
    cfg.transforms = s.pick("transforms", a.transforms, cfg.transforms)?;
    cfg.shared_heads = s.pick("shared_heads", None, cfg.shared_heads)?;
    cfg.validate()?;
    Ok(cfg)
}

fn train_config(s: &mut Settings, a: &TrainArgs, seed: u64) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        learning_rate: s.pick("lr", a.lr, d.learning_rate)?,
        batch_size: s.pick("batch_size", a.batch_size, d.batch_size)?,
        epochs: s.pick("epochs", a.epochs, d.epochs)?,
        lambda: s.pick("lambda", a.lambda, d.lambda)?,
        cpc_weight: s.pick("cpc_weight", a.cpc_weight, d.cpc_weight)?,
        negatives: s.pick("negatives", a.negatives, d.negatives)?,
        sub_sequence_length: s.pick("sub_sequence_length", a.sub_sequence_length, d.sub_sequence_length)?,
        window_stride: s.pick("window_stride", a.window_stride, d.window_stride)?,
        decoder_epochs: s.pick("decoder_epochs", a.decoder_epochs, d.decoder_epochs)?,
        decoder_learning_rate: s.pick("decoder_lr", a.decoder_lr, d.decoder_learning_rate)?,
        seed,
        ..d
    };
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train<S: Real>(a: &TrainArgs, s: &mut Settings, seed: u64) -> Result<RunManifest> {
    let raw = load_csv(&a.data)?;
    let stats = NormStats::fit(&raw);
    let series = stats.standardize(&raw)?;
    let model_cfg = model_config(s, a, series.num_channels())?;
    let cfg = train_config(s, a, seed)?;
    let windows = training_windows::<S>(&series, &cfg)?;
    let init = ModelParams::<S>::init(&model_cfg, seed)?;
    let (mut model, report) = fit_from(init, &windows, &cfg, |e, _| {
        eprintln!("epoch {:>4}  cpc {:.4}  ddcl {:.4}  total {:.4}  {:.1}s", e.epoch, e.cpc, e.ddcl, e.total, e.seconds);
    })?;
    let mut decoder_mse = None;
    if a.decoder {
        decoder_mse = fit_decoder(&windows, &mut model, &cfg)?.last().copied();
    }
    let hash = Checkpoint::new(model.cast::<f32>(), Some(stats)).save(&a.out)?;
    let report_path = a.report.clone().unwrap_or_else(|| a.out.with_extension("report.csv"));
    report.write_csv(&report_path)?;
    let mut m = blank_manifest(vec![show(&a.data)], vec![show(&a.out), show(&report_path)]);
    m.checkpoint_sha256 = Some(hash);
    m.details = serde_json::json!({
        "windows": windows.len(),
        "parameters": model.num_parameters(),
        "decoder_mse": decoder_mse,
    });
    Ok(m)
}

/// Loads a checkpoint and the series standardized with its statistics.
fn load_pair<S: Real>(checkpoint: &Path, data: &Path) -> Result<(ModelParams<S>, crate::data::LabeledSeries, String)> {
    let ck = Checkpoint::load(checkpoint)?;
    let hash = file_sha256(checkpoint)?;
    let raw = load_csv(data)?;
    let series = match &ck.norm {
        Some(stats) => stats.standardize(&raw)?,
        None => raw,
    };
    if series.num_channels() != ck.model.config.in_channels {
        return Err(LntError::Config(format!(
            "{} has {} usable channels but the checkpoint expects {}",
            data.display(),
            series.num_channels(),
            ck.model.config.in_channels
        )));
    }
    Ok((ck.model.cast::<S>(), series, hash))
}

fn cmd_score<S: Real>(a: &ScoreArgs, s: &mut Settings) -> Result<RunManifest> {
    let method: Method = s.pick("method", a.method.clone(), "ddcl".to_string())?.parse()?;
    let normalize = s.pick("normalize", a.no_normalize.then_some(false), true)?;
    let defaults = ScoreConfig::default();
    let cfg = ScoreConfig {
        normalize,
        chunk_len: s.pick("chunk_len", a.chunk_len, defaults.chunk_len)?,
        ..defaults
    };
    let (model, series, hash) = load_pair::<S>(&a.checkpoint, &a.data)?;
    let result = score(&series.values.cast::<S>(), &model, method, &cfg)?;
    write_scores(&a.out, &result.scores, series.labels.as_deref())?;
    let mut m = blank_manifest(vec![show(&a.checkpoint), show(&a.data)], vec![show(&a.out)]);
    m.checkpoint_sha256 = Some(hash);
    m.details = serde_json::json!({ "rows": result.scores.len(), "latent_steps": result.latent_scores.len() });
    Ok(m)
}

/// Writes `index,score[,label]`.
pub fn write_scores(path: &Path, scores: &[f64], labels: Option<&[u8]>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| LntError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| LntError::io(path, e);
    writeln!(w, "{}", if labels.is_some() { "index,score,label" } else { "index,score" }).map_err(io)?;
    for (i, s) in scores.iter().enumerate() {
        match labels {
            Some(l) => writeln!(w, "{i},{s},{}", l[i]),
            None => writeln!(w, "{i},{s}"),
        }
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

fn cmd_eval(a: &EvalArgs) -> Result<RunManifest> {
    let file = load_csv(&a.scores)?;
    let col = file
        .channels
        .iter()
        .position(|c| c == "score")
        .ok_or_else(|| LntError::Data(format!("{}: no 'score' column", a.scores.display())))?;
    let scores = file.channel(col).to_vec();
    let labels = match &a.labels {
        Some(p) => load_csv(p)?
            .labels
            .ok_or_else(|| LntError::Data(format!("{}: no 'label' column", p.display())))?,
        None => file
            .labels
            .clone()
            .ok_or_else(|| LntError::Data(format!("{}: no 'label' column; pass --labels", a.scores.display())))?,
    };
    let result = evaluate(&scores, &labels).map_err(|e| match e {
        LntError::SingleClass => LntError::Data(format!(
            "labels contain only class {}; ROC-AUC and F1 need both normal and anomalous points",
            labels[0]
        )),
        other => other,
    })?;
    println!("{result}");
    let text = format!("{}\n{}\n", crate::eval::EvalResult::CSV_HEADER, result.csv_line());
    fs::write(&a.out, text).map_err(|e| LntError::io(&a.out, e))?;
    let mut inputs = vec![show(&a.scores)];
    inputs.extend(a.labels.as_deref().map(show));
    let mut m = blank_manifest(inputs, vec![show(&a.out)]);
    m.details = serde_json::json!({ "auc": result.auc, "best_f1": result.best.f1 });
    Ok(m)
}

fn cmd_viz<S: Real>(a: &VizArgs, s: &mut Settings) -> Result<RunManifest> {
    let (model, series, hash) = load_pair::<S>(&a.checkpoint, &a.data)?;
    if model.parts.decoder.is_none() {
        return Err(LntError::MissingDecoder);
    }
    let length = s.pick("sub_sequence_length", a.length, TrainConfig::default().sub_sequence_length)?;
    if a.start + length > series.len() {
        return Err(LntError::TooShort {
            needed: a.start + length,
            got: series.len(),
        });
    }
    let values = series.values.cast::<S>();
    let t_all = series.len();
    let c = series.num_channels();
    let x = Tensor::from_fn(vec![c, length], |i| values.data()[(i / length) * t_all + a.start + i % length]);
    let z = model.encode(&x)?;
    let mut groups: Vec<(String, Tensor<S>)> = vec![("original".into(), x), ("reconstruction".into(), model.decode(&z)?)];
    for (l, v) in model.transform_sequence(&z)?.iter().enumerate() {
        groups.push((format!("T{}", l + 1), model.decode(v)?));
    }
    write_views(&a.out, &groups)?;
    let mut m = blank_manifest(vec![show(&a.checkpoint), show(&a.data)], vec![show(&a.out)]);
    m.checkpoint_sha256 = Some(hash);
    m.details = serde_json::json!({ "start": a.start, "length": length, "groups": groups.len() });
    Ok(m)
}

/// Long-format `view,channel,t,value`.
pub fn write_views<S: Real>(path: &Path, groups: &[(String, Tensor<S>)]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| LntError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| LntError::io(path, e);
    writeln!(w, "view,channel,t,value").map_err(io)?;
    for (name, t) in groups {
        let (channels, len) = t.as_matrix("write_views")?;
        for ch in 0..channels {
            for (i, v) in t.row(ch).iter().enumerate() {
                if !v.is_finite() {
                    return Err(LntError::NonFinite { op: "viz-decode" });
                }
                writeln!(w, "{name},{ch},{i},{v}").map_err(io)?;
            }
        }
        debug_assert!(len > 0);
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settings_file_parsing() {
        let s = parse_settings("# comment\nepochs = 3\nbatch-size=8 # inline\n\n", "x").unwrap();
        assert_eq!(s.get("epochs").map(String::as_str), Some("3"));
        assert_eq!(s.get("batch_size").map(String::as_str), Some("8"));
        assert!(parse_settings("nonsense\n", "x").is_err());
    }

    #[test]
    fn flags_override_file_over_defaults() {
        let mut s = Settings {
            file: parse_settings("epochs = 3\nlr = 0.01\n", "x").unwrap(),
            resolved: BTreeMap::new(),
        };
        assert_eq!(s.pick("epochs", Some(5usize), 20).unwrap(), 5);
        assert_eq!(s.pick("lr", None, 2e-4).unwrap(), 0.01);
        assert_eq!(s.pick("batch_size", None, 32usize).unwrap(), 32);
        assert_eq!(s.resolved.len(), 3);
        s.file.insert("negatives".into(), "many".into());
        assert!(s.pick("negatives", None, 16usize).is_err());
    }
}
