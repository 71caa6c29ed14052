//! An encoder that ignores its input: every transformation-loss term is the
//! same at every step and the scores cannot rank anything.

use lnt::eval::roc_auc;
use lnt::model::{constant_model, ModelConfig};
use lnt::scoring::{score_ddcl, ScoreConfig};
use lnt::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> lnt::Result<()> {
    let cfg = ModelConfig::small(3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = Tensor::<f32>::from_fn(vec![cfg.dim_z], |_| rng.random_range(-1.0..1.0));
    let b = Tensor::<f32>::from_fn(vec![cfg.dim_c], |_| rng.random_range(-1.0..1.0));
    let model = constant_model(&cfg, &a, &b)?;

    for seed in 1..=2u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f32>::from_fn(vec![3, 4000], |_| rng.random_range(-3.0..3.0));
        let s = score_ddcl(&x, &model, &ScoreConfig::default())?;
        let distinct = {
            let mut v: Vec<u64> = s.scores.iter().map(|x| x.to_bits()).collect();
            v.sort_unstable();
            v.dedup();
            v.len()
        };
        let labels: Vec<u8> = (0..s.scores.len()).map(|i| (i % 5 == 0) as u8).collect();
        println!(
            "series {seed}: score {:.6}, {distinct} distinct value(s), AUC {}",
            s.scores[0],
            roc_auc(&s.scores, &labels)?
        );
    }
    Ok(())
}
