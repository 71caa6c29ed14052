//! Parameter containers.
//!
//! The containers are generic over the slot type so the same traversal serves
//! stored tensors, variables bound to a tape, and optimizer state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{LntError, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub weight: T,
    pub bias: Option<T>,
}

/// Strided convolution stack `g_enc`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub layers: Vec<ConvLayer<T>>,
}

/// One gate of the recurrent cell: `W_i x + b_i` and `W_h h + b_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams<T> {
    pub w_input: T,
    pub w_hidden: T,
    pub b_input: T,
    pub b_hidden: T,
}

/// Gated recurrent context module `g_ar`.
///
/// `output_bias` is only present in the constant-encoder construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextParams<T> {
    pub reset: GateParams<T>,
    pub update: GateParams<T>,
    pub candidate: GateParams<T>,
    pub output_bias: Option<T>,
}

/// Linear `k`-step prediction matrices, each `dim_z x dim_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionHeads<T> {
    pub cpc: Vec<T>,
    /// Separate heads for the transformation loss when not shared.
    pub ddcl: Option<Vec<T>>,
}

impl<T> PredictionHeads<T> {
    /// Heads used by the transformation loss and the anomaly score.
    pub fn for_ddcl(&self) -> &[T] {
        self.ddcl.as_deref().unwrap_or(&self.cpc)
    }
}

/// Bias-free MLPs, one per learned transformation; weights stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformationBank<T> {
    pub transforms: Vec<Vec<T>>,
}

/// Transposed-convolution stack mirroring the encoder; weights `C_in x C_out x F`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams<T> {
    pub layers: Vec<ConvLayer<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parts<T> {
    pub encoder: EncoderParams<T>,
    pub context: ContextParams<T>,
    pub heads: PredictionHeads<T>,
    pub bank: TransformationBank<T>,
    pub decoder: Option<DecoderParams<T>>,
}

impl<T> ConvLayer<T> {
    fn map<'a, U>(&'a self, prefix: &str, f: &mut impl FnMut(&str, &'a T) -> U) -> ConvLayer<U> {
        ConvLayer {
            weight: f(&format!("{prefix}.weight"), &self.weight),
            bias: self.bias.as_ref().map(|b| f(&format!("{prefix}.bias"), b)),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut T)) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&format!("{prefix}.bias"), b);
        }
    }
}

impl<T> GateParams<T> {
    fn map<'a, U>(&'a self, prefix: &str, f: &mut impl FnMut(&str, &'a T) -> U) -> GateParams<U> {
        GateParams {
            w_input: f(&format!("{prefix}.w_input"), &self.w_input),
            w_hidden: f(&format!("{prefix}.w_hidden"), &self.w_hidden),
            b_input: f(&format!("{prefix}.b_input"), &self.b_input),
            b_hidden: f(&format!("{prefix}.b_hidden"), &self.b_hidden),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut T)) {
        f(&format!("{prefix}.w_input"), &mut self.w_input);
        f(&format!("{prefix}.w_hidden"), &mut self.w_hidden);
        f(&format!("{prefix}.b_input"), &mut self.b_input);
        f(&format!("{prefix}.b_hidden"), &mut self.b_hidden);
    }
}

impl<T> Parts<T> {
    /// Maps every slot in a fixed order, passing its checkpoint name.
    pub fn map<'a, U>(&'a self, mut f: impl FnMut(&str, &'a T) -> U) -> Parts<U> {
        let f = &mut f;
        let encoder = EncoderParams {
            layers: self
                .encoder
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| l.map(&format!("encoder.layer{i}"), f))
                .collect(),
        };
        let c = &self.context;
        let context = ContextParams {
            reset: c.reset.map("context.reset", f),
            update: c.update.map("context.update", f),
            candidate: c.candidate.map("context.candidate", f),
            output_bias: c.output_bias.as_ref().map(|b| f("context.output_bias", b)),
        };
        let heads = PredictionHeads {
            cpc: self
                .heads
                .cpc
                .iter()
                .enumerate()
                .map(|(k, w)| f(&format!("heads.W{}", k + 1), w))
                .collect(),
            ddcl: self.heads.ddcl.as_ref().map(|hs| {
                hs.iter()
                    .enumerate()
                    .map(|(k, w)| f(&format!("ddcl_heads.W{}", k + 1), w))
                    .collect()
            }),
        };
        let bank = TransformationBank {
            transforms: self
                .bank
                .transforms
                .iter()
                .enumerate()
                .map(|(l, layers)| {
                    layers
                        .iter()
                        .enumerate()
                        .map(|(j, w)| f(&format!("bank.T{l}.layer{j}.weight"), w))
                        .collect()
                })
                .collect(),
        };
        let decoder = self.decoder.as_ref().map(|d| DecoderParams {
            layers: d
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| l.map(&format!("decoder.layer{i}"), f))
                .collect(),
        });
        Parts {
            encoder,
            context,
            heads,
            bank,
            decoder,
        }
    }

    /// Mutable traversal in the same order as [`Parts::map`].
    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut T)) {
        let f = &mut f;
        for (i, l) in self.encoder.layers.iter_mut().enumerate() {
            l.visit_mut(&format!("encoder.layer{i}"), f);
        }
        let c = &mut self.context;
        c.reset.visit_mut("context.reset", f);
        c.update.visit_mut("context.update", f);
        c.candidate.visit_mut("context.candidate", f);
        if let Some(b) = &mut c.output_bias {
            f("context.output_bias", b);
        }
        for (k, w) in self.heads.cpc.iter_mut().enumerate() {
            f(&format!("heads.W{}", k + 1), w);
        }
        if let Some(hs) = &mut self.heads.ddcl {
            for (k, w) in hs.iter_mut().enumerate() {
                f(&format!("ddcl_heads.W{}", k + 1), w);
            }
        }
        for (l, layers) in self.bank.transforms.iter_mut().enumerate() {
            for (j, w) in layers.iter_mut().enumerate() {
                f(&format!("bank.T{l}.layer{j}.weight"), w);
            }
        }
        if let Some(d) = &mut self.decoder {
            for (i, l) in d.layers.iter_mut().enumerate() {
                l.visit_mut(&format!("decoder.layer{i}"), f);
            }
        }
    }

    /// Slots with their names, in traversal order.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        self.map(|name, t| out.push((name.to_string(), t)));
        out
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.map(|name, _| names.push(name.to_string()));
        names
    }
}

/// Whether a named slot belongs to the visualization decoder.
pub fn is_decoder_param(name: &str) -> bool {
    name.starts_with("decoder.")
}

/// All learned parameters together with the architecture they instantiate.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S: Real = f32> {
    pub config: ModelConfig,
    pub parts: Parts<Tensor<S>>,
}

/// Shapes of every slot for a configuration.
pub(crate) fn shape_template(cfg: &ModelConfig, decoder: bool, output_bias: bool) -> Parts<Vec<usize>> {
    let (z, c, k) = (cfg.dim_z, cfg.dim_c, cfg.horizons);
    let mut cin = cfg.in_channels;
    let mut enc = Vec::new();
    for &f in &cfg.filters {
        enc.push(ConvLayer {
            weight: vec![z, cin, f],
            bias: cfg.conv_bias.then(|| vec![z]),
        });
        cin = z;
    }
    let gate = || GateParams {
        w_input: vec![c, z],
        w_hidden: vec![c, c],
        b_input: vec![c],
        b_hidden: vec![c],
    };
    let heads = PredictionHeads {
        cpc: vec![vec![z, c]; k],
        ddcl: (!cfg.shared_heads).then(|| vec![vec![z, c]; k]),
    };
    let mlp: Vec<Vec<usize>> = (0..cfg.bank_layers)
        .map(|j| {
            let input = if j == 0 { z } else { cfg.bank_width };
            let output = if j + 1 == cfg.bank_layers { z } else { cfg.bank_width };
            vec![output, input]
        })
        .collect();
    let dec = decoder.then(|| {
        let n = cfg.filters.len();
        DecoderParams {
            layers: (0..n)
                .map(|i| {
                    let f = cfg.filters[n - 1 - i];
                    let out = if i + 1 == n { cfg.in_channels } else { z };
                    ConvLayer {
                        weight: vec![z, out, f],
                        bias: Some(vec![out]),
                    }
                })
                .collect(),
        }
    });
    Parts {
        encoder: EncoderParams { layers: enc },
        context: ContextParams {
            reset: gate(),
            update: gate(),
            candidate: gate(),
            output_bias: output_bias.then(|| vec![c]),
        },
        heads,
        bank: TransformationBank {
            transforms: vec![mlp; cfg.transforms],
        },
        decoder: dec,
    }
}

/// Uniform initialization bound `1/sqrt(fan_in)` for a named slot.
fn init_bound(cfg: &ModelConfig, name: &str, shape: &[usize]) -> f64 {
    let fan_in = if name.starts_with("encoder.") {
        // bias shares the bound of its layer's weight
        let layer: usize = name["encoder.layer".len()..]
            .split('.')
            .next()
            .and_then(|s| s.parse().ok())
            .unwrap_or(0);
        let cin = if layer == 0 { cfg.in_channels } else { cfg.dim_z };
        cin * cfg.filters[layer]
    } else if name.starts_with("decoder.") {
        let layer: usize = name["decoder.layer".len()..]
            .split('.')
            .next()
            .and_then(|s| s.parse().ok())
            .unwrap_or(0);
        let n = cfg.strides.len();
        let (f, s) = (cfg.filters[n - 1 - layer], cfg.strides[n - 1 - layer]);
        cfg.dim_z * f.div_ceil(s)
    } else if name.starts_with("context.") {
        if name.ends_with("w_input") {
            cfg.dim_z
        } else {
            cfg.dim_c
        }
    } else {
        shape[shape.len() - 1]
    };
    1.0 / (fan_in as f64).sqrt()
}

impl<S: Real> ModelParams<S> {
    /// Fresh parameters drawn uniformly in `+-1/sqrt(fan_in)` from `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::init_with(config, seed, false)
    }

    /// Like [`ModelParams::init`], optionally with a visualization decoder.
    pub fn init_with(config: &ModelConfig, seed: u64, decoder: bool) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parts = shape_template(config, decoder, false).map(|name, shape| {
            let bound = init_bound(config, name, shape);
            Tensor::from_fn(shape.clone(), |_| S::lit(rng.random_range(-bound..bound)))
        });
        Ok(ModelParams {
            config: config.clone(),
            parts,
        })
    }

    /// Adds freshly initialized decoder parameters.
    pub fn init_decoder(&mut self, seed: u64) -> Result<()> {
        let fresh = Self::init_with(&self.config, seed, true)?;
        self.parts.decoder = fresh.parts.decoder;
        Ok(())
    }

    /// All-zero parameters with the given layout.
    pub(crate) fn zeros(config: &ModelConfig, decoder: bool, output_bias: bool) -> Result<Self> {
        config.validate()?;
        Ok(ModelParams {
            config: config.clone(),
            parts: shape_template(config, decoder, output_bias).map(|_, s| Tensor::zeros(s.clone())),
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.parts.named().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<T: Real>(&self) -> ModelParams<T> {
        ModelParams {
            config: self.config.clone(),
            parts: self.parts.map(|_, t| t.cast()),
        }
    }

    /// Replaces slots by name; every slot must be supplied with a matching shape.
    pub(crate) fn fill_by_name(&mut self, mut lookup: impl FnMut(&str) -> Option<Tensor<S>>) -> Result<()> {
        let mut err = None;
        self.parts.visit_mut(|name, slot| {
            if err.is_some() {
                return;
            }
            match lookup(name) {
                Some(t) if t.shape() == slot.shape() => *slot = t,
                Some(t) => {
                    err = Some(LntError::Checkpoint(format!(
                        "{name}: expected shape {:?}, found {:?}",
                        slot.shape(),
                        t.shape()
                    )))
                }
                None => err = Some(LntError::Checkpoint(format!("missing tensor {name}"))),
            }
        });
        err.map_or(Ok(()), Err)
    }
}
