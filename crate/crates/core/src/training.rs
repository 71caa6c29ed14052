//! Joint optimization of the unified loss, and decoder fitting on a frozen
//! encoder.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{LntError, Result};
use crate::losses::{unified_loss, LossConfig, NegativeSampler};
use crate::model::{is_decoder_param, stack_windows, ModelConfig, ModelParams, Parts};
use crate::tape::Tape;
use crate::tensor::{Real, Tensor};

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda: f64,
    /// Weight of the contrastive-predictive loss (0 trains on the transformation loss alone).
    pub cpc_weight: f64,
    /// Contrastive set size `N`.
    pub negatives: usize,
    pub sub_sequence_length: usize,
    /// Frames between consecutive training windows.
    pub window_stride: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
    pub decoder_learning_rate: f64,
    pub decoder_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            batch_size: 32,
            epochs: 20,
            lambda: 1e-3,
            cpc_weight: 1.0,
            negatives: 16,
            sub_sequence_length: 720,
            window_stride: 24,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
            decoder_learning_rate: 1e-3,
            decoder_epochs: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("eps", self.eps),
            ("clip_norm", self.clip_norm),
            ("decoder_learning_rate", self.decoder_learning_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(LntError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(LntError::Config("moment coefficients must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.sub_sequence_length == 0 || self.window_stride == 0 {
            return Err(LntError::Config("batch size, sub-sequence length and stride must be positive".into()));
        }
        Ok(())
    }

    pub fn loss_config(&self, model: &ModelConfig) -> LossConfig {
        LossConfig {
            horizons: model.horizons,
            transforms: model.transforms,
            lambda: self.lambda,
            negatives: self.negatives,
            cpc_weight: self.cpc_weight,
        }
    }
}

/// Adaptive-moment optimizer state, one pair of moments per parameter slot.
#[derive(Debug, Clone)]
pub struct Adam<S: Real> {
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
    steps: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl<S: Real> Adam<S> {
    pub fn new(params: &Parts<Tensor<S>>, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Tensor<S>> = params.named().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            steps: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Clips `grads` to `clip_norm` and applies one update; `None` marks a
    /// frozen slot. Returns the pre-clipping global norm.
    pub fn step(&mut self, params: &mut Parts<Tensor<S>>, mut grads: Vec<Option<Tensor<S>>>, lr: f64, clip_norm: f64) -> f64 {
        assert_eq!(grads.len(), self.m.len(), "gradient list does not match parameter slots");
        let norm = grads.iter().flatten().map(|g| g.sq_norm()).sum::<f64>().sqrt();
        if norm > clip_norm {
            let s = S::lit(clip_norm / norm);
            for g in grads.iter_mut().flatten() {
                g.data_mut().iter_mut().for_each(|v| *v = *v * s);
            }
        }
        self.steps += 1;
        let (b1, b2) = (S::lit(self.beta1), S::lit(self.beta2));
        let (one, eps) = (S::one(), S::lit(self.eps));
        let c1 = S::lit(1.0 - self.beta1.powi(self.steps as i32));
        let c2 = S::lit(1.0 - self.beta2.powi(self.steps as i32));
        let lr = S::lit(lr);
        let mut i = 0;
        params.visit_mut(|_, p| {
            if let Some(g) = &grads[i] {
                let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
                for (j, w) in p.data_mut().iter_mut().enumerate() {
                    let gj = g.data()[j];
                    m[j] = b1 * m[j] + (one - b1) * gj;
                    v[j] = b2 * v[j] + (one - b2) * gj * gj;
                    let mhat = m[j] / c1;
                    let vhat = v[j] / c2;
                    *w = *w - lr * mhat / (vhat.sqrt() + eps);
                }
            }
            i += 1;
        });
        norm
    }
}

/// Loss values of one optimization step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub total: f64,
    pub cpc: f64,
    pub ddcl: f64,
    pub grad_norm: f64,
}

/// One unified-loss update on a `[B, C, T]` batch. Decoder slots stay frozen.
pub fn train_step<S: Real>(
    batch: &Tensor<S>,
    model: &mut ModelParams<S>,
    opt: &mut Adam<S>,
    sampler: &mut NegativeSampler,
    cfg: &TrainConfig,
) -> Result<StepStats> {
    let tape = Tape::new();
    let trainable = |name: &str| !is_decoder_param(name);
    let vars = model.bind(&tape, trainable);
    let enc = vars.encode_batch(&model.config, tape.constant(batch.clone()), None)?;
    let loss = unified_loss(&enc, &vars, sampler, &cfg.loss_config(&model.config))?;
    let grads = tape.backward(loss.total)?;
    let g = vars.named().into_iter().map(|(n, v)| trainable(&n).then(|| grads.wrt(*v))).collect();
    let (total, cpc, ddcl) = (loss.total.item()?.as_f64(), loss.cpc.item()?.as_f64(), loss.ddcl.item()?.as_f64());
    let grad_norm = opt.step(&mut model.parts, g, cfg.learning_rate, cfg.clip_norm);
    if !grad_norm.is_finite() {
        return Err(LntError::NonFinite { op: "gradient norm" });
    }
    Ok(StepStats { total, cpc, ddcl, grad_norm })
}

/// Per-epoch means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub cpc: f64,
    pub ddcl: f64,
    pub total: f64,
    pub grad_norm: f64,
    /// Wall time since training started.
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    pub const CSV_HEADER: &'static str = "epoch,cpc,ddcl,total,grad_norm,seconds";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for e in &self.epochs {
            s += &format!("{},{},{},{},{},{:.3}\n", e.epoch, e.cpc, e.ddcl, e.total, e.grad_norm, e.seconds);
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| LntError::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| LntError::io(path, e))
    }
}

fn epoch_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

fn gather<S: Real>(windows: &[Tensor<S>], idx: &[usize]) -> Result<Tensor<S>> {
    let picked: Vec<Tensor<S>> = idx.iter().map(|&i| windows[i].clone()).collect();
    stack_windows(&picked)
}

/// Trains a freshly initialized model (seeded with `cfg.seed`).
pub fn fit<S: Real>(windows: &[Tensor<S>], model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<(ModelParams<S>, TrainReport)> {
    let model = ModelParams::init(model_cfg, cfg.seed)?;
    fit_from(model, windows, cfg, |_, _| {})
}

/// Continues training `model`; `on_epoch` sees each epoch's statistics and
/// the parameters after it.
pub fn fit_from<S: Real>(
    mut model: ModelParams<S>,
    windows: &[Tensor<S>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats, &ModelParams<S>),
) -> Result<(ModelParams<S>, TrainReport)> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(LntError::Data("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut sampler = NegativeSampler::new(rng.random());
    let mut opt = Adam::new(&model.parts, cfg);
    let start = Instant::now();
    let mut report = TrainReport::default();
    for epoch in 1..=cfg.epochs {
        let batches = epoch_batches(windows.len(), cfg.batch_size, &mut rng);
        let mut sums = [0.0f64; 4];
        for (step, idx) in batches.iter().enumerate() {
            let batch = gather(windows, idx)?;
            let s = train_step(&batch, &mut model, &mut opt, &mut sampler, cfg).map_err(|e| LntError::Training {
                epoch,
                step,
                source: Box::new(e),
            })?;
            for (acc, v) in sums.iter_mut().zip([s.cpc, s.ddcl, s.total, s.grad_norm]) {
                *acc += v;
            }
        }
        let n = batches.len() as f64;
        let stats = EpochStats {
            epoch,
            cpc: sums[0] / n,
            ddcl: sums[1] / n,
            total: sums[2] / n,
            grad_norm: sums[3] / n,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&stats, &model);
        report.epochs.push(stats);
    }
    Ok((model, report))
}

fn reconstruction_loss<'t, S: Real>(
    tape: &'t Tape<S>,
    model: &ModelParams<S>,
    batch: &Tensor<S>,
    trainable: impl Fn(&str) -> bool,
) -> Result<(crate::tape::Var<'t, S>, crate::model::ModelVars<'t, S>)> {
    let cfg = &model.config;
    let vars = model.bind(tape, trainable);
    let z = vars.encode(cfg, tape.constant(batch.clone()))?;
    let recon = vars.decode(cfg, z)?;
    let len = recon.shape()[2];
    let (b, c, t) = (batch.shape()[0], batch.shape()[1], batch.shape()[2]);
    let target = Tensor::from_fn(vec![b, c, len], |i| batch.data()[(i / len) * t + i % len]);
    let diff = recon.sub(tape.constant(target))?;
    Ok((diff.mul(diff)?.mean()?, vars))
}

/// Mean squared reconstruction error of `decode(encode(x))` over `windows`.
pub fn reconstruction_mse<S: Real>(model: &ModelParams<S>, windows: &[Tensor<S>]) -> Result<f64> {
    let batch = stack_windows(windows)?;
    let tape = Tape::new();
    let (loss, _) = reconstruction_loss(&tape, model, &batch, |_| false)?;
    Ok(loss.item()?.as_f64())
}

/// Fits the visualization decoder on a frozen model, adding one if needed.
/// Returns the mean reconstruction error of each epoch.
pub fn fit_decoder<S: Real>(windows: &[Tensor<S>], model: &mut ModelParams<S>, cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(LntError::Data("empty training set".into()));
    }
    if model.parts.decoder.is_none() {
        model.init_decoder(cfg.seed.wrapping_add(1))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut opt = Adam::new(&model.parts, cfg);
    let mut history = Vec::with_capacity(cfg.decoder_epochs);
    for epoch in 1..=cfg.decoder_epochs {
        let batches = epoch_batches(windows.len(), cfg.batch_size, &mut rng);
        let mut total = 0.0;
        for (step, idx) in batches.iter().enumerate() {
            let wrap = |e| LntError::Training {
                epoch,
                step,
                source: Box::new(e),
            };
            let batch = gather(windows, idx)?;
            let tape = Tape::new();
            let (loss, vars) = reconstruction_loss(&tape, model, &batch, is_decoder_param).map_err(wrap)?;
            let grads = tape.backward(loss).map_err(wrap)?;
            let g = vars.named().into_iter().map(|(n, v)| is_decoder_param(&n).then(|| grads.wrt(*v))).collect();
            total += loss.item()?.as_f64();
            opt.step(&mut model.parts, g, cfg.decoder_learning_rate, cfg.clip_norm);
        }
        history.push(total / batches.len() as f64);
    }
    Ok(history)
}

/// Average over latent dimensions of the standard deviation across all
/// windows and steps; with `unit` each latent vector is first scaled to
/// unit length.
pub fn latent_spread<S: Real>(model: &ModelParams<S>, windows: &[Tensor<S>], unit: bool) -> Result<f64> {
    let batch = stack_windows(windows)?;
    let tape = Tape::new();
    let vars = model.bind_frozen(&tape);
    let enc = vars.encode_batch(&model.config, tape.constant(batch), None)?;
    let mut z = enc.latents;
    if unit {
        z = z.row_normalize()?;
    }
    let z = z.value();
    let (rows, dim) = z.as_matrix("latent_spread")?;
    let mut total = 0.0;
    for d in 0..dim {
        let col: Vec<f64> = (0..rows).map(|r| z.data()[r * dim + d].as_f64()).collect();
        let mean = col.iter().sum::<f64>() / rows as f64;
        total += (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rows as f64).sqrt();
    }
    Ok(total / dim as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::stack_windows;

    fn tiny() -> ModelConfig {
        ModelConfig {
            in_channels: 2,
            dim_z: 8,
            dim_c: 4,
            filters: vec![2, 2],
            strides: vec![2, 2],
            conv_bias: true,
            horizons: 2,
            transforms: 3,
            bank_width: 6,
            bank_layers: 2,
            shared_heads: true,
        }
    }

    fn windows(n: usize, seed: u64) -> Vec<Tensor<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let f: f32 = rng.random_range(0.05..0.4);
                let p: f32 = rng.random_range(0.0..6.0);
                Tensor::from_fn(vec![2, 40], |i| ((i % 40) as f32 * f + p + (i / 40) as f32).sin())
            })
            .collect()
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            learning_rate: 3e-3,
            batch_size: 4,
            epochs: 2,
            negatives: 6,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.learning_rate, c.batch_size, c.lambda), (2e-4, 32, 1e-3));
        assert_eq!((c.beta1, c.beta2, c.eps, c.clip_norm), (0.9, 0.999, 1e-8, 5.0));
    }

    #[test]
    fn overfits_a_fixed_batch() {
        let mut model = ModelParams::<f32>::init(&tiny(), 1).unwrap();
        let c = cfg();
        let mut opt = Adam::new(&model.parts, &c);
        let batch = stack_windows(&windows(4, 2)).unwrap();
        let mut losses = Vec::new();
        for _ in 0..50 {
            // same negatives every step so the objective is fixed
            let mut sampler = NegativeSampler::new(0);
            losses.push(train_step(&batch, &mut model, &mut opt, &mut sampler, &c).unwrap().total);
        }
        assert!(losses[49] < losses[0] * 0.8, "{} -> {}", losses[0], losses[49]);
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let run = || {
            let mut model = ModelParams::<f32>::init(&tiny(), 1).unwrap();
            let c = cfg();
            let mut opt = Adam::new(&model.parts, &c);
            let mut sampler = NegativeSampler::new(5);
            let batch = stack_windows(&windows(4, 2)).unwrap();
            for _ in 0..10 {
                train_step(&batch, &mut model, &mut opt, &mut sampler, &c).unwrap();
            }
            model
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_lambda_leaves_the_bank_untouched() {
        let c = TrainConfig { lambda: 0.0, ..cfg() };
        let base = ModelParams::<f32>::init(&tiny(), 1).unwrap();
        let batch = stack_windows(&windows(4, 2)).unwrap();

        let mut model = base.clone();
        let mut opt = Adam::new(&model.parts, &c);
        let s = train_step(&batch, &mut model, &mut opt, &mut NegativeSampler::new(5), &c).unwrap();
        assert!(s.ddcl > 0.0);
        assert_eq!(model.parts.bank, base.parts.bank);

        // same update as a run that never evaluates the transformation loss
        let mut cpc_only = base.clone();
        let tape = Tape::new();
        let vars = cpc_only.bind(&tape, |n| !is_decoder_param(n));
        let enc = vars.encode_batch(&cpc_only.config, tape.constant(batch.clone()), None).unwrap();
        let loss = crate::losses::cpc_loss(&enc, &vars, &mut NegativeSampler::new(5), &c.loss_config(&tiny())).unwrap();
        let grads = tape.backward(loss).unwrap();
        let g = vars.named().into_iter().map(|(_, v)| Some(grads.wrt(*v))).collect();
        let mut opt2 = Adam::new(&cpc_only.parts, &c);
        opt2.step(&mut cpc_only.parts, g, c.learning_rate, c.clip_norm);
        assert_eq!(model, cpc_only);
    }

    #[test]
    fn positive_lambda_moves_every_bank_weight_with_gradient() {
        let c = TrainConfig { lambda: 1.0, ..cfg() };
        let base = ModelParams::<f32>::init(&tiny(), 1).unwrap();
        let mut model = base.clone();
        let mut opt = Adam::new(&model.parts, &c);
        let batch = stack_windows(&windows(4, 2)).unwrap();
        train_step(&batch, &mut model, &mut opt, &mut NegativeSampler::new(5), &c).unwrap();
        for (a, b) in model.parts.bank.transforms.iter().flatten().zip(base.parts.bank.transforms.iter().flatten()) {
            assert_ne!(a, b);
        }
    }

    #[test]
    fn fit_smoke_and_report() {
        let (model, report) = fit(&windows(4, 3), &tiny(), &TrainConfig { epochs: 1, ..cfg() }).unwrap();
        assert_eq!(report.epochs.len(), 1);
        let e = report.epochs[0];
        assert!(e.total.is_finite() && e.cpc > 0.0 && e.ddcl > 0.0);
        let csv = report.to_csv();
        assert!(csv.starts_with("epoch,cpc,ddcl,total,grad_norm,seconds\n1,"));
        let ck = crate::checkpoint::Checkpoint::new(model.clone(), None);
        let back = crate::checkpoint::Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.model, model);
        assert!(fit::<f32>(&[], &tiny(), &cfg()).is_err());
    }

    #[test]
    fn report_wall_time_is_monotone() {
        let (_, report) = fit(&windows(8, 3), &tiny(), &TrainConfig { epochs: 3, ..cfg() }).unwrap();
        assert!(report.epochs.windows(2).all(|w| w[0].seconds <= w[1].seconds));
    }

    #[test]
    fn decoder_training_freezes_everything_else() {
        let base = ModelParams::<f32>::init(&tiny(), 1).unwrap();
        let mut model = base.clone();
        let ws = windows(8, 4);
        let held_out = windows(2, 99);
        let c = TrainConfig {
            decoder_epochs: 15,
            decoder_learning_rate: 1e-2,
            ..cfg()
        };
        model.init_decoder(7).unwrap();
        let before = reconstruction_mse(&model, &held_out).unwrap();
        let history = fit_decoder(&ws, &mut model, &c).unwrap();
        let after = reconstruction_mse(&model, &held_out).unwrap();
        assert!(after < before, "{before} -> {after}");
        assert!(history.last().unwrap() < &history[0]);
        let mut stripped = model.clone();
        stripped.parts.decoder = None;
        assert_eq!(stripped, base);

        let z = model.encode(&held_out[0]).unwrap();
        let x = model.decode(&z).unwrap();
        assert_eq!(x.shape(), &[2, 40]);
    }
}
