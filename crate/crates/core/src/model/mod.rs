//! The model: strided convolutional encoder, recurrent context module,
//! linear prediction heads, bank of learned latent transformations and an
//! optional decoder used to look at transformed views in data space.

mod config;
mod forward;
mod params;

pub use config::ModelConfig;
pub use forward::{stack_windows, Encoded, ModelVars};
pub use params::{
    is_decoder_param, ContextParams, ConvLayer, DecoderParams, EncoderParams, GateParams, ModelParams, Parts,
    PredictionHeads, TransformationBank,
};

use crate::error::{LntError, Result};
use crate::tape::Tape;
use crate::tensor::{Real, Tensor};

impl<S: Real> ModelParams<S> {
    /// Latent sequence `[T_z, dim_z]` of one raw window `[C, T]`.
    pub fn encode(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let tape = Tape::new();
        let vars = self.bind_frozen(&tape);
        let z = vars.encode(&self.config, tape.constant(x.clone()))?;
        Ok(z.transpose()?.value().as_ref().clone())
    }

    /// Context sequence `[T_z, dim_c]` for a latent sequence `[T_z, dim_z]`,
    /// starting from the zero state.
    pub fn contextualize(&self, z: &Tensor<S>) -> Result<Tensor<S>> {
        let (steps, dim) = z.as_matrix("contextualize")?;
        if dim != self.config.dim_z {
            return Err(LntError::shape("contextualize", format!("latent width {dim} != {}", self.config.dim_z)));
        }
        let tape = Tape::new();
        let vars = self.bind_frozen(&tape);
        let (c, _) = vars.contextualize(tape.constant(z.clone()), 1, steps, None)?;
        Ok(c.value().as_ref().clone())
    }

    /// `W_k c` for one context vector (`k` in `1..=K`).
    pub fn predict(&self, c: &Tensor<S>, k: usize) -> Result<Tensor<S>> {
        let tape = Tape::new();
        let vars = self.bind_frozen(&tape);
        let row = tape.constant(c.clone().reshape(vec![1, c.numel()])?);
        let p = vars.predict(row, k, false)?;
        Ok(Tensor::vector(p.value().data().to_vec()))
    }

    /// The `L` latent views `[L, dim_z]` of one embedding `[dim_z]`.
    pub fn transform(&self, z: &Tensor<S>) -> Result<Tensor<S>> {
        let tape = Tape::new();
        let vars = self.bind_frozen(&tape);
        let row = tape.constant(z.clone().reshape(vec![1, z.numel()])?);
        let views = vars.transform(row)?;
        let stacked = tape.concat_rows(&views)?;
        Ok(stacked.value().as_ref().clone())
    }

    /// Every view of a latent sequence: `L` tensors shaped `[T_z, dim_z]`.
    pub fn transform_sequence(&self, z: &Tensor<S>) -> Result<Vec<Tensor<S>>> {
        let tape = Tape::new();
        let vars = self.bind_frozen(&tape);
        let views = vars.transform(tape.constant(z.clone()))?;
        Ok(views.iter().map(|v| v.value().as_ref().clone()).collect())
    }

    /// Raw-rate reconstruction `[C, T_z * r]` of a latent sequence `[T_z, dim_z]`.
    pub fn decode(&self, z: &Tensor<S>) -> Result<Tensor<S>> {
        if self.parts.decoder.is_none() {
            return Err(LntError::MissingDecoder);
        }
        let tape = Tape::new();
        let vars = self.bind_frozen(&tape);
        let zt = tape.constant(z.clone()).transpose()?;
        let x = vars.decode(&self.config, zt)?;
        Ok(x.value().as_ref().clone())
    }
}

/// A model whose encoder emits `a` at every step and whose context module
/// emits `b` at every step, whatever the input.
///
/// All multiplicative encoder and recurrent weights are zero, the last
/// convolution's bias is `a`, and the context module carries an output bias
/// `b`. Every prediction head maps `b` to `a` (or to zero when `b == 0`), so
/// all horizons see the same prediction. The transformation bank keeps a
/// deterministic random initialization.
pub fn constant_model<S: Real>(config: &ModelConfig, a: &Tensor<S>, b: &Tensor<S>) -> Result<ModelParams<S>> {
    if a.numel() != config.dim_z || b.numel() != config.dim_c {
        return Err(LntError::shape(
            "constant_model",
            format!("a has {} values (dim_z {}), b has {} (dim_c {})", a.numel(), config.dim_z, b.numel(), config.dim_c),
        ));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(LntError::NonFinite { op: "constant_model" });
    }
    let mut config = config.clone();
    config.conv_bias = true;
    let mut model = ModelParams::zeros(&config, false, true)?;
    let last = model.parts.encoder.layers.len() - 1;
    model.parts.encoder.layers[last].bias = Some(Tensor::vector(a.data().to_vec()));
    model.parts.context.output_bias = Some(Tensor::vector(b.data().to_vec()));

    let bb: S = b.data().iter().map(|&v| v * v).sum();
    let head = Tensor::from_fn(vec![config.dim_z, config.dim_c], |i| {
        if bb > S::zero() {
            a.data()[i / config.dim_c] * b.data()[i % config.dim_c] / bb
        } else {
            S::zero()
        }
    });
    for w in model.parts.heads.cpc.iter_mut() {
        *w = head.clone();
    }
    if let Some(hs) = &mut model.parts.heads.ddcl {
        for w in hs.iter_mut() {
            *w = head.clone();
        }
    }
    model.parts.bank = ModelParams::<S>::init(&config, 0)?.parts.bank;
    Ok(model)
}
