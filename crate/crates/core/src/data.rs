//! Series ingestion, normalization, windowing, and synthetic benchmarks.

use std::f64::consts::TAU;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{LntError, Result};
use crate::tensor::{Real, Tensor};

/// A multichannel series `[C, T]` with optional per-frame 0/1 labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSeries {
    pub values: Tensor<f64>,
    pub labels: Option<Vec<u8>>,
    pub channels: Vec<String>,
    /// Nominal frames per second, if known.
    pub sample_rate: Option<f64>,
}

impl LabeledSeries {
    pub fn new(values: Tensor<f64>, labels: Option<Vec<u8>>) -> Result<Self> {
        if values.rank() != 2 {
            return Err(LntError::shape("LabeledSeries", format!("values must be [C, T], got {:?}", values.shape())));
        }
        let len = values.shape()[1];
        if let Some(l) = &labels {
            if l.len() != len {
                return Err(LntError::Length { left: l.len(), right: len });
            }
            if l.iter().any(|&v| v > 1) {
                return Err(LntError::Data("labels must be 0 or 1".into()));
            }
        }
        let channels = (0..values.shape()[0]).map(|c| format!("ch{c}")).collect();
        Ok(LabeledSeries {
            values,
            labels,
            channels,
            sample_rate: None,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        self.values.row(c)
    }

    /// Share of frames labeled 1 (0 when unlabeled).
    pub fn labeled_fraction(&self) -> f64 {
        match &self.labels {
            Some(l) => l.iter().filter(|&&v| v == 1).count() as f64 / l.len() as f64,
            None => 0.0,
        }
    }
}

/// Reads a CSV with a header row; a column named `label` becomes the labels.
pub fn load_csv(path: impl AsRef<Path>) -> Result<LabeledSeries> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| LntError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let parse_err = |row: usize, msg: String| LntError::Parse {
        path: shown.clone(),
        row,
        msg,
    };
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let label_col = headers.iter().position(|h| h == "label");
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != label_col)
        .map(|(_, h)| h.to_string())
        .collect();
    if names.is_empty() {
        return Err(parse_err(1, "no value columns".into()));
    }

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            parse_err(row, e.to_string())
        })?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let mut c = 0;
        for (i, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(row, format!("column '{}': '{cell}' is not a number", &headers[i])))?;
            if !v.is_finite() {
                return Err(parse_err(row, format!("column '{}': non-finite value '{cell}'", &headers[i])));
            }
            if Some(i) == label_col {
                if v != 0.0 && v != 1.0 {
                    return Err(parse_err(row, format!("label must be 0 or 1, got '{cell}'")));
                }
                labels.push(v as u8);
            } else {
                columns[c].push(v);
                c += 1;
            }
        }
    }
    let len = columns[0].len();
    if len == 0 {
        return Err(LntError::Data(format!("{shown}: no data rows")));
    }
    let values = Tensor::new(vec![names.len(), len], columns.concat())?;
    let mut series = LabeledSeries::new(values, label_col.map(|_| labels))?;
    series.channels = names;
    Ok(series)
}

/// Writes `series` in the format read by [`load_csv`]; values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_csv(path: impl AsRef<Path>, series: &LabeledSeries) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| LntError::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let csv_err = |e: csv::Error| LntError::Data(format!("{}: {e}", path.display()));
    let mut header = series.channels.clone();
    if series.labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header).map_err(csv_err)?;
    let mut row = Vec::with_capacity(header.len());
    for t in 0..series.len() {
        row.clear();
        for c in 0..series.num_channels() {
            row.push(series.values.row(c)[t].to_string());
        }
        if let Some(l) = &series.labels {
            row.push(l[t].to_string());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| LntError::io(path, e))
}

/// Per-channel standardization statistics from a training split.
///
/// Values are rounded to `f32` so they survive a checkpoint round-trip
/// exactly. A standard deviation of zero marks a constant channel, which
/// is dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn fit(series: &LabeledSeries) -> Self {
        let n = series.len() as f64;
        let mut mean = Vec::new();
        let mut std = Vec::new();
        for c in 0..series.num_channels() {
            let x = series.channel(c);
            let m = x.iter().sum::<f64>() / n;
            let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            let s = var.sqrt();
            mean.push(m as f32 as f64);
            std.push(if s <= 1e-8 * m.abs().max(1.0) { 0.0 } else { s as f32 as f64 });
        }
        NormStats { mean, std }
    }

    /// Indices of the channels kept after dropping constant ones.
    pub fn kept(&self) -> Vec<usize> {
        (0..self.std.len()).filter(|&c| self.std[c] > 0.0).collect()
    }

    /// `(x - mean) / std` per channel, constant channels removed.
    pub fn standardize(&self, series: &LabeledSeries) -> Result<LabeledSeries> {
        if series.num_channels() != self.mean.len() {
            return Err(LntError::Data(format!(
                "series has {} channels, statistics cover {}",
                series.num_channels(),
                self.mean.len()
            )));
        }
        let kept = self.kept();
        if kept.is_empty() {
            return Err(LntError::Data("every channel is constant".into()));
        }
        let mut data = Vec::with_capacity(kept.len() * series.len());
        for &c in &kept {
            data.extend(series.channel(c).iter().map(|v| (v - self.mean[c]) / self.std[c]));
        }
        Ok(LabeledSeries {
            values: Tensor::new(vec![kept.len(), series.len()], data)?,
            labels: series.labels.clone(),
            channels: kept.iter().map(|&c| series.channels[c].clone()).collect(),
            sample_rate: series.sample_rate,
        })
    }

    /// Maps standardized kept channels `[C_kept, T]` back to the original scale.
    pub fn destandardize(&self, values: &Tensor<f64>) -> Result<Tensor<f64>> {
        let kept = self.kept();
        if values.rank() != 2 || values.shape()[0] != kept.len() {
            return Err(LntError::shape("destandardize", format!("{:?} for {} kept channels", values.shape(), kept.len())));
        }
        let t = values.shape()[1];
        Ok(Tensor::from_fn(values.shape().to_vec(), |i| {
            let c = kept[i / t];
            values.data()[i] * self.std[c] + self.mean[c]
        }))
    }
}

/// One sinusoid `amplitude * sin(2 pi t / period + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub period: f64,
    pub phase: f64,
}

/// Generator parameters of the synthetic "normal" data.
#[derive(Debug, Clone, PartialEq)]
pub struct SineMixture {
    pub components: Vec<Vec<Sinusoid>>,
    pub noise_std: f64,
}

impl SineMixture {
    /// Per channel: 2 to 4 sinusoids, periods log-uniform in `[512, 4096]`
    /// frames, amplitudes in `[0.5, 1.5]`; noise sigma 0.05.
    pub fn random(channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let components = (0..channels)
            .map(|_| {
                let n = rng.random_range(2..=4);
                (0..n)
                    .map(|_| Sinusoid {
                        amplitude: rng.random_range(0.5..1.5),
                        period: (rng.random_range(512f64.ln()..4096f64.ln())).exp(),
                        phase: rng.random_range(0.0..TAU),
                    })
                    .collect()
            })
            .collect();
        SineMixture {
            components,
            noise_std: 0.05,
        }
    }

    /// Frames `start..start + len`, with noise from `(seed, stream)`.
    pub fn render(&self, start: usize, len: usize, seed: u64, stream: u64) -> LabeledSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let noise = Normal::new(0.0, self.noise_std).expect("positive noise level");
        let channels = self.components.len();
        let mut data = Vec::with_capacity(channels * len);
        for comps in &self.components {
            for t in start..start + len {
                let clean: f64 = comps.iter().map(|s| s.amplitude * (TAU * t as f64 / s.period + s.phase).sin()).sum();
                data.push(clean + noise.sample(&mut rng));
            }
        }
        let values = Tensor::new(vec![channels, len], data).expect("consistent shape");
        let mut s = LabeledSeries::new(values, Some(vec![0; len])).expect("valid labels");
        s.sample_rate = Some(NOMINAL_RATE);
        s
    }
}

/// Frames per second assumed when mapping Hz to synthetic frames.
pub const NOMINAL_RATE: f64 = 16000.0;

/// Clean synthetic series: a random sine mixture per channel plus noise.
pub fn synth_normal(channels: usize, length: usize, seed: u64) -> Result<LabeledSeries> {
    if channels == 0 || length == 0 {
        return Err(LntError::Config("synthetic series needs at least one channel and one frame".into()));
    }
    Ok(SineMixture::random(channels, seed).render(0, length, seed, 1))
}

/// Train and test series from the same mixture; the test split continues
/// where the train split ends and carries independent noise.
pub fn synth_split(channels: usize, train_len: usize, test_len: usize, seed: u64) -> Result<(LabeledSeries, LabeledSeries)> {
    if channels == 0 || train_len == 0 || test_len == 0 {
        return Err(LntError::Config("synthetic series needs at least one channel and one frame".into()));
    }
    let mix = SineMixture::random(channels, seed);
    Ok((mix.render(0, train_len, seed, 1), mix.render(train_len, test_len, seed, 2)))
}

/// Tone amplitude rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Amplitude {
    /// Multiple of each channel's standard deviation.
    RelativeStd(f64),
    Absolute(f64),
}

/// Additive sine-tone anomaly protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionSpec {
    /// Tone frequency range in Hz at [`NOMINAL_RATE`].
    pub freq_hz: (f64, f64),
    /// Interval length range in frames, inclusive.
    pub length: (usize, usize),
    /// Target share of labeled frames; 0 disables injection.
    pub fraction: f64,
    pub amplitude: Amplitude,
    pub seed: u64,
}

impl Default for InjectionSpec {
    fn default() -> Self {
        InjectionSpec {
            freq_hz: (20.0, 120.0),
            length: (512, 4096),
            fraction: 0.10,
            amplitude: Amplitude::RelativeStd(0.5),
            seed: 0,
        }
    }
}

impl InjectionSpec {
    pub fn validate(&self) -> Result<()> {
        let (f0, f1) = self.freq_hz;
        let (l0, l1) = self.length;
        if !(f0 > 0.0 && f1 >= f0 && f1.is_finite()) {
            return Err(LntError::Injection(format!("bad frequency range {f0}..{f1}")));
        }
        if l0 == 0 || l1 < l0 {
            return Err(LntError::Injection(format!("bad length range {l0}..{l1}")));
        }
        if !(0.0..1.0).contains(&self.fraction) {
            return Err(LntError::Injection(format!("fraction {} outside [0, 1)", self.fraction)));
        }
        let amp = match self.amplitude {
            Amplitude::RelativeStd(a) | Amplitude::Absolute(a) => a,
        };
        if !(amp >= 0.0 && amp.is_finite()) {
            return Err(LntError::Injection(format!("bad amplitude {amp}")));
        }
        Ok(())
    }
}

/// One injected interval.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Tone {
    pub start: usize,
    pub length: usize,
    pub frequency_hz: f64,
}

/// Result of [`inject_sine_anomalies`].
#[derive(Debug, Clone, PartialEq)]
pub struct Injected {
    pub series: LabeledSeries,
    pub tones: Vec<Tone>,
}

/// Adds pure sine tones on non-overlapping intervals of every channel and
/// labels the covered frames.
pub fn inject_sine_anomalies(series: &LabeledSeries, spec: &InjectionSpec) -> Result<Injected> {
    spec.validate()?;
    let total_len = series.len();
    let mut labels = series.labels.clone().unwrap_or_else(|| vec![0; total_len]);
    if spec.fraction == 0.0 {
        let mut out = series.clone();
        out.labels = Some(labels);
        return Ok(Injected { series: out, tones: vec![] });
    }
    let (lo, hi) = spec.length;
    if total_len <= hi {
        return Err(LntError::Injection(format!(
            "series of {total_len} frames is not longer than the maximum anomaly length {hi}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let target = (spec.fraction * total_len as f64).round() as usize;

    let mut lengths = Vec::new();
    let mut covered = 0usize;
    loop {
        let rem = target.saturating_sub(covered);
        if rem < lo {
            if rem * 2 >= lo {
                lengths.push(lo);
                covered += lo;
            }
            break;
        }
        let len = rng.random_range(lo..=hi.min(rem));
        lengths.push(len);
        covered += len;
    }
    let n = lengths.len();
    let slack = total_len as i64 - covered as i64 - (n as i64 - 1).max(0);
    if n == 0 || slack < 0 {
        return Err(LntError::Injection(format!(
            "cannot fit a fraction of {} into {total_len} frames",
            spec.fraction
        )));
    }
    let achieved = covered as f64 / total_len as f64;
    if (achieved - spec.fraction).abs() > 0.02 {
        return Err(LntError::Injection(format!(
            "achievable fraction {achieved:.4} is more than 2 points from {}",
            spec.fraction
        )));
    }
    lengths.shuffle(&mut rng);
    let mut cuts: Vec<i64> = (0..n).map(|_| rng.random_range(0..=slack)).collect();
    cuts.sort_unstable();

    let stds: Vec<f64> = (0..series.num_channels())
        .map(|c| {
            let x = series.channel(c);
            let m = x.iter().sum::<f64>() / x.len() as f64;
            (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
        })
        .collect();
    let mut values = series.values.clone();
    let mut tones = Vec::with_capacity(n);
    let mut pos = 0i64;
    let mut prev_cut = 0i64;
    for (i, &len) in lengths.iter().enumerate() {
        pos += cuts[i] - prev_cut;
        prev_cut = cuts[i];
        let start = pos as usize;
        let freq = rng.random_range(spec.freq_hz.0..=spec.freq_hz.1);
        let phase = rng.random_range(0.0..TAU);
        for (c, &std) in stds.iter().enumerate() {
            let amp = match spec.amplitude {
                Amplitude::RelativeStd(a) => a * std,
                Amplitude::Absolute(a) => a,
            };
            if amp == 0.0 {
                continue;
            }
            let row = &mut values.data_mut()[c * total_len..(c + 1) * total_len];
            for t in 0..len {
                row[start + t] += amp * (TAU * freq * t as f64 / NOMINAL_RATE + phase).sin();
            }
        }
        labels[start..start + len].iter_mut().for_each(|l| *l = 1);
        tones.push(Tone {
            start,
            length: len,
            frequency_hz: freq,
        });
        pos += len as i64 + 1;
    }
    let mut out = series.clone();
    out.values = values;
    out.labels = Some(labels);
    Ok(Injected { series: out, tones })
}

/// Contiguous `[C, length]` windows of a `[C, T]` series starting every
/// `stride` frames; a trailing partial window is dropped.
pub fn window<S: Real>(values: &Tensor<S>, length: usize, stride: usize) -> Result<Vec<Tensor<S>>> {
    let (channels, total) = values.as_matrix("window")?;
    if length == 0 || stride == 0 {
        return Err(LntError::Config("window length and stride must be positive".into()));
    }
    if length > total {
        return Err(LntError::TooShort { needed: length, got: total });
    }
    Ok((0..=(total - length) / stride)
        .map(|w| {
            let s = w * stride;
            Tensor::from_fn(vec![channels, length], |i| values.data()[(i / length) * total + s + i % length])
        })
        .collect())
}
