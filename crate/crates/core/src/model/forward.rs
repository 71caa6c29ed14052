//! Differentiable forward pass over parameters bound to a [`Tape`].

use super::config::ModelConfig;
use super::params::{ModelParams, Parts};
use crate::error::{LntError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// Parameters registered on a tape.
pub type ModelVars<'t, S> = Parts<Var<'t, S>>;

/// Latents and contexts of a batch, flattened sequence-major:
/// row `b * steps + t` holds step `t` of sequence `b`.
pub struct Encoded<'t, S: Real> {
    pub latents: Var<'t, S>,
    pub contexts: Var<'t, S>,
    pub batch: usize,
    pub steps: usize,
    /// Recurrent state after the last step, `[batch, dim_c]`.
    pub final_state: Var<'t, S>,
}

impl<S: Real> ModelParams<S> {
    /// Registers every slot on `tape`; slots for which `trainable(name)` is
    /// false become constants.
    pub fn bind<'t>(&self, tape: &'t Tape<S>, trainable: impl Fn(&str) -> bool) -> ModelVars<'t, S> {
        self.parts.map(|name, t| tape.leaf(t.clone(), trainable(name)))
    }

    /// Registers every slot as a constant.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape<S>) -> ModelVars<'t, S> {
        self.bind(tape, |_| false)
    }
}

impl<'t, S: Real> ModelVars<'t, S> {
    /// `[B, C, T]` raw windows to `[B, dim_z, T_z]` latents.
    pub fn encode(&self, cfg: &ModelConfig, x: Var<'t, S>) -> Result<Var<'t, S>> {
        let t = *x.shape().last().unwrap_or(&0);
        let rf = cfg.receptive_field();
        if t < rf {
            return Err(LntError::TooShort { needed: rf, got: t });
        }
        let n = self.encoder.layers.len();
        let mut h = x;
        for (i, (layer, &stride)) in self.encoder.layers.iter().zip(&cfg.strides).enumerate() {
            h = h.conv1d(layer.weight, layer.bias, stride)?;
            if i + 1 < n {
                h = h.relu()?;
            }
        }
        Ok(h)
    }

    /// Runs the recurrent cell over `latents` (`[batch * steps, dim_z]`,
    /// sequence-major) starting from `state` (zero when `None`).
    ///
    /// Returns contexts in the same row layout and the final state.
    pub fn contextualize(
        &self,
        latents: Var<'t, S>,
        batch: usize,
        steps: usize,
        state: Option<Var<'t, S>>,
    ) -> Result<(Var<'t, S>, Var<'t, S>)> {
        let tape = latents.tape();
        let dim_c = self.context.reset.b_input.shape()[0];
        let mut h = match state {
            Some(s) => s,
            None => tape.constant(Tensor::zeros(vec![batch, dim_c])),
        };
        let mut outs = Vec::with_capacity(steps);
        for t in 0..steps {
            let rows: Vec<usize> = (0..batch).map(|b| b * steps + t).collect();
            let x = latents.gather_rows(&rows)?;
            h = self.gru_step(h, x)?;
            outs.push(h);
        }
        // time-major [steps * batch] back to sequence-major
        let stacked = tape.concat_rows(&outs)?;
        let order: Vec<usize> = (0..batch * steps).map(|r| (r % steps) * batch + r / steps).collect();
        let mut contexts = stacked.gather_rows(&order)?;
        if let Some(bias) = self.context.output_bias {
            contexts = contexts.add_bias(bias)?;
        }
        Ok((contexts, h))
    }

    /// One gated-recurrent-unit update for a batch: `state [B, H]`, `input [B, Z]`.
    pub fn gru_step(&self, state: Var<'t, S>, input: Var<'t, S>) -> Result<Var<'t, S>> {
        let c = &self.context;
        let affine = |g: &super::params::GateParams<Var<'t, S>>| -> Result<(Var<'t, S>, Var<'t, S>)> {
            let xi = input.matmul_t(g.w_input)?.add_bias(g.b_input)?;
            let hh = state.matmul_t(g.w_hidden)?.add_bias(g.b_hidden)?;
            Ok((xi, hh))
        };
        let (xr, hr) = affine(&c.reset)?;
        let reset = xr.add(hr)?.sigmoid()?;
        let (xu, hu) = affine(&c.update)?;
        let update = xu.add(hu)?.sigmoid()?;
        let (xn, hn) = affine(&c.candidate)?;
        let candidate = xn.add(reset.mul(hn)?)?.tanh()?;
        // h' = (1 - u) * n + u * h
        candidate.add(update.mul(state.sub(candidate)?)?)
    }

    /// `W_k c` for every row of `contexts` (`k` is 1-based).
    pub fn predict(&self, contexts: Var<'t, S>, k: usize, for_ddcl: bool) -> Result<Var<'t, S>> {
        let heads = if for_ddcl { self.heads.for_ddcl() } else { &self.heads.cpc };
        if k == 0 || k > heads.len() {
            return Err(LntError::Horizon { k, max: heads.len() });
        }
        contexts.matmul_t(heads[k - 1])
    }

    /// Latent views `sigmoid(MLP_l(z)) * z` for every transformation, each
    /// shaped like `latents` (`[M, dim_z]`).
    pub fn transform(&self, latents: Var<'t, S>) -> Result<Vec<Var<'t, S>>> {
        self.bank
            .transforms
            .iter()
            .map(|layers| {
                let mut h = latents;
                for (j, &w) in layers.iter().enumerate() {
                    h = h.matmul_t(w)?;
                    if j + 1 < layers.len() {
                        h = h.relu()?;
                    }
                }
                h.sigmoid()?.mul(latents)
            })
            .collect()
    }

    /// `[B, dim_z, T_z]` latents to `[B, C, T_z * r]` raw frames.
    pub fn decode(&self, cfg: &ModelConfig, latents: Var<'t, S>) -> Result<Var<'t, S>> {
        let dec = self.decoder.as_ref().ok_or(LntError::MissingDecoder)?;
        let n = dec.layers.len();
        let mut h = latents;
        for (i, layer) in dec.layers.iter().enumerate() {
            let stride = cfg.strides[n - 1 - i];
            h = h.conv_transpose1d(layer.weight, layer.bias, stride)?;
            if i + 1 < n {
                h = h.relu()?;
            }
        }
        Ok(h)
    }

    /// Encodes `[B, C, T]` windows and summarizes them into contexts.
    pub fn encode_batch(
        &self,
        cfg: &ModelConfig,
        x: Var<'t, S>,
        state: Option<Var<'t, S>>,
    ) -> Result<Encoded<'t, S>> {
        let z = self.encode(cfg, x)?;
        let shape = z.shape();
        let (batch, dim_z, steps) = (shape[0], shape[1], shape[2]);
        let latents = z.transpose()?.reshape(vec![batch * steps, dim_z])?;
        let (contexts, final_state) = self.contextualize(latents, batch, steps, state)?;
        Ok(Encoded {
            latents,
            contexts,
            batch,
            steps,
            final_state,
        })
    }
}

/// Stacks `[C, T]` windows of equal shape into a `[B, C, T]` tensor.
pub fn stack_windows<S: Real>(windows: &[Tensor<S>]) -> Result<Tensor<S>> {
    let first = windows
        .first()
        .ok_or_else(|| LntError::Data("empty batch".into()))?
        .shape()
        .to_vec();
    if first.len() != 2 {
        return Err(LntError::shape("stack_windows", format!("window shape {first:?}")));
    }
    let mut data = Vec::with_capacity(windows.len() * first.iter().product::<usize>());
    for w in windows {
        if w.shape() != first.as_slice() {
            return Err(LntError::shape("stack_windows", "windows differ in shape"));
        }
        data.extend_from_slice(w.data());
    }
    Tensor::new(vec![windows.len(), first[0], first[1]], data)
}
