//! Training objectives.
//!
//! * the contrastive-predictive loss: linear `k`-step predictions `W_k c_t`
//!   scored against the true future latent and `N - 1` latents drawn from the
//!   mini-batch, with raw dot-product logits;
//! * the dynamic deterministic contrastive loss: every latent view is pulled
//!   towards the prediction `W_k c_{t-k}` and pushed away from the other views
//!   of the same embedding, with exponentiated cosine similarity;
//! * the unified loss `cpc + lambda * ddcl`.
//!
//! All contrastive terms are evaluated in log space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{LntError, Result};
use crate::model::{Encoded, ModelVars};
use crate::tape::{contrast_nll_row, Var, NORM_EPS};
use crate::tensor::{Real, Tensor};

/// Loss hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// Prediction horizons `K`.
    pub horizons: usize,
    /// Learned transformations `L`.
    pub transforms: usize,
    /// Weight of the transformation loss.
    pub lambda: f64,
    /// Size `N` of each contrastive set (one positive, `N - 1` negatives).
    pub negatives: usize,
    /// Weight of the contrastive-predictive loss; zero gives a DDCL-only objective.
    pub cpc_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            horizons: 4,
            transforms: 12,
            lambda: 1e-3,
            negatives: 16,
            cpc_weight: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizons == 0 {
            return Err(LntError::Config("K must be >= 1".into()));
        }
        if self.transforms < 2 {
            return Err(LntError::Config("L must be >= 2".into()));
        }
        if !(self.lambda >= 0.0) || !(self.cpc_weight >= 0.0) {
            return Err(LntError::Config("loss weights must be >= 0".into()));
        }
        if self.negatives < 2 {
            return Err(LntError::Config("N must be >= 2".into()));
        }
        Ok(())
    }
}

/// Seeded source of in-batch negatives.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    rng: ChaCha8Rng,
}

impl NegativeSampler {
    pub fn new(seed: u64) -> Self {
        NegativeSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// `count` indices drawn uniformly with replacement from
    /// `0..population`, never equal to `positive`.
    pub fn sample(&mut self, positive: usize, population: usize, count: usize) -> Vec<usize> {
        assert!(population >= 2 && positive < population);
        (0..count)
            .map(|_| {
                let j = self.rng.random_range(0..population - 1);
                if j >= positive {
                    j + 1
                } else {
                    j
                }
            })
            .collect()
    }
}

/// `exp(cos(a, b))` with norms clamped below at 1e-12.
pub fn cosine_exp_sim<S: Real>(a: &[S], b: &[S]) -> S {
    cosine(a, b).exp()
}

fn cosine<S: Real>(a: &[S], b: &[S]) -> S {
    let eps = S::lit(NORM_EPS);
    let na = a.iter().map(|&x| x * x).sum::<S>().sqrt().max(eps);
    let nb = b.iter().map(|&x| x * x).sum::<S>().sqrt().max(eps);
    a.iter().zip(b).map(|(&x, &y)| (x / na) * (y / nb)).sum()
}

/// Tape version of [`cosine_exp_sim`] for two vectors.
pub fn cosine_exp_sim_var<'t, S: Real>(a: Var<'t, S>, b: Var<'t, S>) -> Result<Var<'t, S>> {
    a.row_normalize()?.row_dot(b.row_normalize()?)?.exp()
}

/// `-log(p / (p + sum n))` from log-similarities, via log-sum-exp.
pub fn log_softmax_contrast<S: Real>(log_pos: S, log_negs: &[S]) -> Result<S> {
    if log_negs.is_empty() {
        return Err(LntError::EmptyNegatives);
    }
    let mut row = Vec::with_capacity(log_negs.len() + 1);
    row.push(log_pos);
    row.extend_from_slice(log_negs);
    Ok(contrast_nll_row(&row))
}

/// One transformation-loss term for view `l` (0-based) at horizon `k`
/// (1-based): `views` is `[L, dim_z]`, `c_prev` the context `k` steps back.
pub fn ddcl_term<S: Real>(views: &Tensor<S>, c_prev: &Tensor<S>, k: usize, l: usize, heads: &[Tensor<S>]) -> Result<S> {
    let (num_views, dim) = views.as_matrix("ddcl_term")?;
    if num_views < 2 {
        return Err(LntError::Config("at least two views are required".into()));
    }
    if l >= num_views {
        return Err(LntError::shape("ddcl_term", format!("view {l} of {num_views}")));
    }
    if k == 0 || k > heads.len() {
        return Err(LntError::Horizon { k, max: heads.len() });
    }
    let w = &heads[k - 1];
    let (zd, cd) = w.as_matrix("ddcl_term")?;
    if zd != dim || cd != c_prev.numel() {
        return Err(LntError::shape("ddcl_term", format!("head {:?} vs view {dim}, context {}", w.shape(), c_prev.numel())));
    }
    let pred: Vec<S> = (0..zd)
        .map(|i| w.row(i).iter().zip(c_prev.data()).map(|(&a, &b)| a * b).sum())
        .collect();
    let view = views.row(l);
    let pos = cosine(view, &pred);
    let negs: Vec<S> = (0..num_views).filter(|&m| m != l).map(|m| cosine(view, views.row(m))).collect();
    log_softmax_contrast(pos, &negs)
}

/// Mean contrastive-predictive loss over all anchors `(b, t, k)` with `t + k < T_z`.
pub fn cpc_loss<'t, S: Real>(
    enc: &Encoded<'t, S>,
    vars: &ModelVars<'t, S>,
    sampler: &mut NegativeSampler,
    cfg: &LossConfig,
) -> Result<Var<'t, S>> {
    let (batch, steps) = (enc.batch, enc.steps);
    if steps <= cfg.horizons {
        return Err(LntError::NoValidTerms(format!(
            "{steps} latent steps leave no positive for horizon {}",
            cfg.horizons
        )));
    }
    let population = batch * steps;
    if population < 2 {
        return Err(LntError::EmptyNegatives);
    }
    let width = cfg.negatives;
    let mut parts = Vec::with_capacity(cfg.horizons);
    let mut count = 0usize;
    for k in 1..=cfg.horizons {
        let mut anchors = Vec::new();
        let mut idx = Vec::new();
        for b in 0..batch {
            for t in 0..steps - k {
                let pos = b * steps + t + k;
                anchors.push(b * steps + t);
                idx.push(pos);
                idx.extend(sampler.sample(pos, population, width - 1));
            }
        }
        let pred = vars.predict(enc.contexts.gather_rows(&anchors)?, k, false)?;
        let logits = pred.matmul_t(enc.latents)?.gather_per_row(&idx, width)?;
        parts.push(logits.contrast_nll()?.sum()?);
        count += anchors.len();
    }
    let mut total = parts[0];
    for p in &parts[1..] {
        total = total.add(*p)?;
    }
    total.scale(1.0 / count as f64)
}

/// Per-term transformation losses of a batch, grouped by horizon.
pub struct DdclTerms<'t, S: Real> {
    /// `(k, anchor rows, terms [anchors, L])`; anchor row `b * steps + t`
    /// holds `l_t^{(k, l)}` in column `l`.
    pub per_horizon: Vec<(usize, Vec<usize>, Var<'t, S>)>,
    pub transforms: usize,
}

impl<'t, S: Real> DdclTerms<'t, S> {
    pub fn count(&self) -> usize {
        self.per_horizon.iter().map(|(_, a, _)| a.len()).sum::<usize>() * self.transforms
    }

    /// Mean over every valid `(b, t, k, l)` term.
    pub fn mean(&self) -> Result<Var<'t, S>> {
        let mut acc: Option<Var<'t, S>> = None;
        for (_, _, terms) in &self.per_horizon {
            let s = terms.sum()?;
            acc = Some(match acc {
                Some(a) => a.add(s)?,
                None => s,
            });
        }
        let total = acc.ok_or_else(|| LntError::NoValidTerms("no (t, k) pair with t - k >= 0".into()))?;
        total.scale(1.0 / self.count() as f64)
    }
}

/// Evaluates every transformation-loss term with `t - k` inside the sequence.
pub fn ddcl_terms<'t, S: Real>(enc: &Encoded<'t, S>, vars: &ModelVars<'t, S>, horizons: usize) -> Result<DdclTerms<'t, S>> {
    let tape = enc.latents.tape();
    let (batch, steps) = (enc.batch, enc.steps);
    let views: Vec<Var<'t, S>> = vars
        .transform(enc.latents)?
        .into_iter()
        .map(|v| v.row_normalize())
        .collect::<Result<_>>()?;
    let n_views = views.len();
    if n_views < 2 {
        return Err(LntError::Config("at least two transformations are required".into()));
    }
    // pairwise view cosines, indexed [l][m] for l < m
    let mut pair = vec![vec![None; n_views]; n_views];
    for l in 0..n_views {
        for m in l + 1..n_views {
            pair[l][m] = Some(views[l].row_dot(views[m])?);
        }
    }

    let mut per_horizon = Vec::new();
    for k in 1..=horizons {
        if k >= steps {
            break;
        }
        let mut cur = Vec::new();
        let mut prev = Vec::new();
        for b in 0..batch {
            for t in k..steps {
                cur.push(b * steps + t);
                prev.push(b * steps + t - k);
            }
        }
        let target = vars.predict(enc.contexts.gather_rows(&prev)?, k, true)?.row_normalize()?;
        let mut gathered = vec![vec![None; n_views]; n_views];
        for l in 0..n_views {
            for m in l + 1..n_views {
                gathered[l][m] = Some(pair[l][m].expect("filled above").gather_rows(&cur)?);
            }
        }
        let mut columns = Vec::with_capacity(n_views);
        for l in 0..n_views {
            let pos = views[l].gather_rows(&cur)?.row_dot(target)?;
            let mut logits = vec![pos];
            for m in (0..n_views).filter(|&m| m != l) {
                let (lo, hi) = (l.min(m), l.max(m));
                logits.push(gathered[lo][hi].expect("filled above"));
            }
            columns.push(tape.concat_cols(&logits)?.contrast_nll()?);
        }
        per_horizon.push((k, cur, tape.concat_cols(&columns)?));
    }
    Ok(DdclTerms {
        per_horizon,
        transforms: n_views,
    })
}

/// Mean transformation loss of a batch.
pub fn ddcl_loss<'t, S: Real>(enc: &Encoded<'t, S>, vars: &ModelVars<'t, S>, cfg: &LossConfig) -> Result<Var<'t, S>> {
    if enc.steps < 2 {
        return Err(LntError::NoValidTerms("need at least two latent steps".into()));
    }
    ddcl_terms(enc, vars, cfg.horizons)?.mean()
}

/// The three parts of the unified objective.
pub struct UnifiedLoss<'t, S: Real> {
    pub total: Var<'t, S>,
    pub cpc: Var<'t, S>,
    pub ddcl: Var<'t, S>,
}

/// `cpc_weight * cpc + lambda * ddcl`.
pub fn unified_loss<'t, S: Real>(
    enc: &Encoded<'t, S>,
    vars: &ModelVars<'t, S>,
    sampler: &mut NegativeSampler,
    cfg: &LossConfig,
) -> Result<UnifiedLoss<'t, S>> {
    cfg.validate()?;
    let cpc = cpc_loss(enc, vars, sampler, cfg)?;
    let ddcl = ddcl_loss(enc, vars, cfg)?;
    let total = cpc.scale(cfg.cpc_weight)?.add(ddcl.scale(cfg.lambda)?)?;
    Ok(UnifiedLoss { total, cpc, ddcl })
}
