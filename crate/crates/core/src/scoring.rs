//! Per-timestep anomaly scores.
//!
//! The transformation-loss score of latent step `t` is the mean (or sum)
//! of the loss terms `l_t^{(k, l)}` over every horizon with `t - k >= 0` and
//! every view. No negatives are drawn, so scoring is deterministic.
//!
//! Long series are encoded in chunks whose raw extents overlap by
//! `receptive_field - r` frames; the recurrent state is carried from chunk
//! to chunk, so the result equals encoding the whole series at once.

use rayon::prelude::*;

use crate::error::{LntError, Result};
use crate::losses::ddcl_terms;
use crate::model::{Encoded, ModelConfig, ModelParams};
use crate::tape::Tape;
use crate::tensor::{Real, Tensor};

/// Scoring options.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreConfig {
    /// Divide each latent score by its number of valid terms.
    pub normalize: bool,
    /// Raw frames encoded per chunk (at least the receptive field).
    pub chunk_len: usize,
    /// Latent steps per term-evaluation block.
    pub block_steps: usize,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            normalize: true,
            chunk_len: 720,
            block_steps: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Transformation-loss terms.
    Ddcl,
    /// Negated positive logit of the contrastive-predictive objective.
    CpcApprox,
}

impl std::str::FromStr for Method {
    type Err = LntError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddcl" => Ok(Method::Ddcl),
            "cpc-approx" => Ok(Method::CpcApprox),
            other => Err(LntError::Config(format!("unknown scoring method '{other}' (ddcl, cpc-approx)"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(match self {
            Method::Ddcl => "ddcl",
            Method::CpcApprox => "cpc-approx",
        })
    }
}

/// Scores at raw and latent rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    pub scores: Vec<f64>,
    pub latent_scores: Vec<f64>,
    pub downsample: usize,
    pub method: Method,
    pub config: ModelConfig,
}

/// Latents `[T_z, dim_z]` and contexts `[T_z, dim_c]` of a whole series.
pub struct Representation<S: Real> {
    pub latents: Tensor<S>,
    pub contexts: Tensor<S>,
}

fn slice_cols<S: Real>(x: &Tensor<S>, start: usize, len: usize) -> Tensor<S> {
    let t = x.shape()[1];
    Tensor::from_fn(vec![1, x.shape()[0], len], |i| x.data()[(i / len) * t + start + i % len])
}

fn select_rows<S: Real>(x: &Tensor<S>, start: usize, end: usize) -> Tensor<S> {
    let w = x.shape()[1];
    Tensor::new(vec![end - start, w], x.data()[start * w..end * w].to_vec()).expect("row range")
}

/// Encodes a `[C, T]` series chunk by chunk and runs the recurrent module
/// over all latent steps.
pub fn represent<S: Real>(x: &Tensor<S>, model: &ModelParams<S>, chunk_len: usize) -> Result<Representation<S>> {
    let cfg = &model.config;
    let (channels, total) = x.as_matrix("represent")?;
    if channels != cfg.in_channels {
        return Err(LntError::shape(
            "represent",
            format!("series has {channels} channels, model expects {}", cfg.in_channels),
        ));
    }
    let (rf, r) = (cfg.receptive_field(), cfg.downsample());
    if total < rf {
        return Err(LntError::TooShort { needed: rf, got: total });
    }
    if chunk_len < rf {
        return Err(LntError::Config(format!("chunk length {chunk_len} is below the receptive field {rf}")));
    }
    let steps = cfg.latent_len(total);
    let per_chunk = cfg.latent_len(chunk_len);
    let starts: Vec<usize> = (0..steps).step_by(per_chunk).collect();

    let latents: Vec<Tensor<S>> = starts
        .par_iter()
        .map(|&s| {
            let m = per_chunk.min(steps - s);
            let tape = Tape::new();
            let vars = model.bind_frozen(&tape);
            let raw = tape.constant(slice_cols(x, s * r, (m - 1) * r + rf));
            let z = vars.encode(cfg, raw)?.transpose()?;
            let z = z.reshape(vec![m, cfg.dim_z])?;
            Ok(z.value().as_ref().clone())
        })
        .collect::<Result<_>>()?;

    let mut state: Option<Tensor<S>> = None;
    let mut contexts = Vec::with_capacity(latents.len());
    for z in &latents {
        let tape = Tape::new();
        let vars = model.bind_frozen(&tape);
        let m = z.shape()[0];
        let init = state.take().map(|s| tape.constant(s));
        let (c, h) = vars.contextualize(tape.constant(z.clone()), 1, m, init)?;
        contexts.push(c.value().as_ref().clone());
        state = Some(h.value().as_ref().clone());
    }
    let cat = |parts: &[Tensor<S>], width: usize| {
        Tensor::new(vec![steps, width], parts.iter().flat_map(|t| t.data().iter().copied()).collect())
    };
    Ok(Representation {
        latents: cat(&latents, cfg.dim_z)?,
        contexts: cat(&contexts, cfg.dim_c)?,
    })
}

/// Per-step `(sum, count)` for anchor steps `start..end`.
type Block = (usize, Vec<f64>, Vec<usize>);

fn blocks(steps: usize, size: usize) -> Vec<(usize, usize)> {
    (0..steps).step_by(size.max(1)).map(|s| (s, (s + size.max(1)).min(steps))).collect()
}

fn ddcl_block<S: Real>(rep: &Representation<S>, model: &ModelParams<S>, start: usize, end: usize) -> Result<Block> {
    let k_max = model.config.horizons;
    let lo = start.saturating_sub(k_max);
    let tape = Tape::new();
    let vars = model.bind_frozen(&tape);
    let contexts = tape.constant(select_rows(&rep.contexts, lo, end));
    let enc = Encoded {
        latents: tape.constant(select_rows(&rep.latents, lo, end)),
        contexts,
        batch: 1,
        steps: end - lo,
        final_state: contexts,
    };
    let mut sums = vec![0.0; end - start];
    let mut counts = vec![0usize; end - start];
    if enc.steps < 2 {
        return Ok((start, sums, counts));
    }
    let terms = ddcl_terms(&enc, &vars, k_max)?;
    for (_, rows, vals) in &terms.per_horizon {
        let vals = vals.value();
        let width = terms.transforms;
        for (i, &row) in rows.iter().enumerate() {
            let t = lo + row;
            if t < start {
                continue;
            }
            let s: S = vals.data()[i * width..(i + 1) * width].iter().copied().sum();
            sums[t - start] += s.as_f64();
            counts[t - start] += width;
        }
    }
    Ok((start, sums, counts))
}

fn cpc_block<S: Real>(rep: &Representation<S>, model: &ModelParams<S>, start: usize, end: usize) -> Result<Block> {
    let tape = Tape::new();
    let vars = model.bind_frozen(&tape);
    let mut sums = vec![0.0; end - start];
    let mut counts = vec![0usize; end - start];
    for k in 1..=model.config.horizons {
        let first = start.max(k);
        if first >= end {
            continue;
        }
        let z = tape.constant(select_rows(&rep.latents, first, end));
        let c = tape.constant(select_rows(&rep.contexts, first - k, end - k));
        let logits = vars.predict(c, k, false)?.row_dot(z)?.value();
        for (i, &v) in logits.data().iter().enumerate() {
            sums[first + i - start] -= v.as_f64();
            counts[first + i - start] += 1;
        }
    }
    Ok((start, sums, counts))
}

fn latent_scores<S: Real>(rep: &Representation<S>, model: &ModelParams<S>, method: Method, cfg: &ScoreConfig) -> Result<Vec<f64>> {
    let steps = rep.latents.shape()[0];
    let parts: Vec<Block> = blocks(steps, cfg.block_steps)
        .into_par_iter()
        .map(|(s, e)| match method {
            Method::Ddcl => ddcl_block(rep, model, s, e),
            Method::CpcApprox => cpc_block(rep, model, s, e),
        })
        .collect::<Result<_>>()?;
    let mut scores = vec![0.0; steps];
    let mut counts = vec![0usize; steps];
    for (start, sums, cnt) in parts {
        scores[start..start + sums.len()].copy_from_slice(&sums);
        counts[start..start + cnt.len()].copy_from_slice(&cnt);
    }
    let first = counts
        .iter()
        .position(|&c| c > 0)
        .ok_or_else(|| LntError::NoValidTerms(format!("{steps} latent step(s) leave no horizon to score")))?;
    if cfg.normalize {
        for (s, &c) in scores.iter_mut().zip(&counts) {
            if c > 0 {
                *s /= c as f64;
            }
        }
    }
    // steps without any valid horizon take the first scorable value
    let fill = scores[first];
    scores[..first].iter_mut().for_each(|s| *s = fill);
    Ok(scores)
}

/// Scores every raw frame of `x` (`[C, T]`) with `method`.
pub fn score<S: Real>(x: &Tensor<S>, model: &ModelParams<S>, method: Method, cfg: &ScoreConfig) -> Result<ScoreSeries> {
    let rep = represent(x, model, cfg.chunk_len)?;
    let latent = latent_scores(&rep, model, method, cfg)?;
    let r = model.config.downsample();
    if let Some(i) = latent.iter().position(|v| !v.is_finite()) {
        return Err(LntError::Data(format!("non-finite score at latent step {i}")));
    }
    Ok(ScoreSeries {
        scores: broadcast_scores(&latent, r, x.shape()[1])?,
        latent_scores: latent,
        downsample: r,
        method,
        config: model.config.clone(),
    })
}

/// Transformation-loss scores.
pub fn score_ddcl<S: Real>(x: &Tensor<S>, model: &ModelParams<S>, cfg: &ScoreConfig) -> Result<ScoreSeries> {
    score(x, model, Method::Ddcl, cfg)
}

/// `-z_t^T W_k c_{t-k}` averaged over valid horizons.
pub fn score_cpc_approx<S: Real>(x: &Tensor<S>, model: &ModelParams<S>, cfg: &ScoreConfig) -> Result<ScoreSeries> {
    score(x, model, Method::CpcApprox, cfg)
}

/// Repeats each latent score over its `r` raw frames; frames past the last
/// full step inherit the final score.
pub fn broadcast_scores(latent: &[f64], r: usize, raw_len: usize) -> Result<Vec<f64>> {
    if latent.is_empty() {
        return Err(LntError::NoValidTerms("no latent scores to broadcast".into()));
    }
    if r == 0 || raw_len < r || raw_len < latent.len() * r {
        return Err(LntError::Length {
            left: raw_len,
            right: latent.len() * r.max(1),
        });
    }
    let last = *latent.last().expect("non-empty");
    Ok((0..raw_len).map(|i| latent.get(i / r).copied().unwrap_or(last)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::roc_auc;
    use crate::model::constant_model;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            in_channels: 2,
            dim_z: 6,
            dim_c: 4,
            filters: vec![3, 2],
            strides: vec![2, 2],
            conv_bias: true,
            horizons: 3,
            transforms: 3,
            bank_width: 5,
            bank_layers: 2,
            shared_heads: true,
        }
    }

    fn series(seed: u64, t: usize) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(vec![2, t], |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn broadcast_examples() {
        assert_eq!(broadcast_scores(&[1.0, 2.0], 3, 6).unwrap(), vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        assert_eq!(broadcast_scores(&[1.0, 2.0], 3, 7).unwrap(), vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
        assert!(broadcast_scores(&[], 3, 7).is_err());
        assert!(broadcast_scores(&[1.0], 3, 2).is_err());
    }

    #[test]
    fn chunking_does_not_change_scores() {
        let model = ModelParams::<f32>::init(&tiny(), 5).unwrap();
        let x = series(1, 403);
        let whole = ScoreConfig {
            chunk_len: 403,
            block_steps: 1000,
            ..Default::default()
        };
        let chunked = ScoreConfig {
            chunk_len: 11,
            block_steps: 7,
            ..Default::default()
        };
        for method in [Method::Ddcl, Method::CpcApprox] {
            let a = score(&x, &model, method, &whole).unwrap();
            let b = score(&x, &model, method, &chunked).unwrap();
            assert_eq!(a.scores.len(), 403);
            for (u, v) in a.latent_scores.iter().zip(&b.latent_scores) {
                assert!((u - v).abs() <= 1e-5 * u.abs().max(1.0), "{u} vs {v}");
            }
        }
    }

    #[test]
    fn latent_scores_match_per_term_function() {
        let model = ModelParams::<f64>::init(&tiny(), 9).unwrap();
        let x = series(2, 64).cast::<f64>();
        let s = score_ddcl(&x, &model, &ScoreConfig::default()).unwrap();
        let z = model.encode(&x).unwrap();
        let c = model.contextualize(&z).unwrap();
        let steps = z.shape()[0];
        for t in 1..steps {
            let views = model.transform(&Tensor::vector(z.row(t).to_vec())).unwrap();
            let mut sum = 0.0;
            let mut n = 0;
            for k in 1..=3usize.min(t) {
                for l in 0..3 {
                    let cp = Tensor::vector(c.row(t - k).to_vec());
                    sum += crate::losses::ddcl_term(&views, &cp, k, l, &model.parts.heads.cpc).unwrap();
                    n += 1;
                }
            }
            assert!((s.latent_scores[t] - sum / n as f64).abs() < 1e-10);
        }
        assert_eq!(s.latent_scores[0], s.latent_scores[1]);

        let raw = score_ddcl(&x, &model, &ScoreConfig { normalize: false, ..Default::default() }).unwrap();
        assert!((raw.latent_scores[5] - 9.0 * s.latent_scores[5]).abs() < 1e-10);
    }

    #[test]
    fn cpc_approx_matches_direct_formula() {
        let model = ModelParams::<f64>::init(&tiny(), 9).unwrap();
        let x = series(3, 64).cast::<f64>();
        let s = score_cpc_approx(&x, &model, &ScoreConfig::default()).unwrap();
        let z = model.encode(&x).unwrap();
        let c = model.contextualize(&z).unwrap();
        let t = 7;
        let mut acc = 0.0;
        for k in 1..=3 {
            let p = model.predict(&Tensor::vector(c.row(t - k).to_vec()), k).unwrap();
            acc -= p.data().iter().zip(z.row(t)).map(|(a, b)| a * b).sum::<f64>();
        }
        assert!((s.latent_scores[t] - acc / 3.0).abs() < 1e-12);
    }

    #[test]
    fn scoring_is_deterministic() {
        let model = ModelParams::<f32>::init(&tiny(), 5).unwrap();
        let x = series(4, 300);
        for method in [Method::Ddcl, Method::CpcApprox] {
            let a = score(&x, &model, method, &ScoreConfig::default()).unwrap();
            let b = score(&x, &model, method, &ScoreConfig::default()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn future_frames_do_not_affect_past_scores() {
        let model = ModelParams::<f32>::init(&tiny(), 5).unwrap();
        let x = series(4, 300);
        let base = score_ddcl(&x, &model, &ScoreConfig { chunk_len: 40, ..Default::default() }).unwrap();
        let r = 4;
        for t in [2usize, 10, 33, 60] {
            let mut y = x.clone();
            for c in 0..2 {
                for i in (t + 1) * r..300 {
                    y.data_mut()[c * 300 + i] += 3.0;
                }
            }
            let s = score_ddcl(&y, &model, &ScoreConfig { chunk_len: 40, ..Default::default() }).unwrap();
            assert_eq!(&s.scores[..t * r], &base.scores[..t * r]);
            assert_ne!(s.scores, base.scores);
        }
    }

    #[test]
    fn constant_model_gives_constant_scores_and_half_auc() {
        let cfg = tiny();
        let a = Tensor::vector(vec![0.3f32, -0.2, 0.5, 0.1, -0.7, 0.9]);
        let b = Tensor::vector(vec![0.4f32, 0.1, -0.3, 0.8]);
        let model = constant_model(&cfg, &a, &b).unwrap();
        let labels: Vec<u8> = (0..200).map(|i| (i / 37 % 2) as u8).collect();
        for method in [Method::Ddcl, Method::CpcApprox] {
            let s1 = score(&series(5, 200), &model, method, &ScoreConfig::default()).unwrap();
            let s2 = score(&series(6, 200), &model, method, &ScoreConfig::default()).unwrap();
            assert!(s1.scores.iter().all(|v| v.to_bits() == s1.scores[0].to_bits()));
            assert_eq!(s1.scores, s2.scores);
            assert_eq!(roc_auc(&s1.scores, &labels).unwrap(), 0.5);
        }
    }

    #[test]
    fn short_or_mismatched_input_is_rejected() {
        let model = ModelParams::<f32>::init(&tiny(), 5).unwrap();
        assert!(matches!(score_ddcl(&series(1, 4), &model, &ScoreConfig::default()), Err(LntError::TooShort { .. })));
        // one latent step has no horizon to score
        assert!(matches!(score_ddcl(&series(1, 8), &model, &ScoreConfig::default()), Err(LntError::NoValidTerms(_))));
        let x3 = Tensor::<f32>::zeros(vec![3, 100]);
        assert!(score_ddcl(&x3, &model, &ScoreConfig::default()).is_err());
        assert!(score_ddcl(&series(1, 100), &model, &ScoreConfig { chunk_len: 3, ..Default::default() }).is_err());
    }
}
