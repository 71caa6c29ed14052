//! Central finite differences against tape gradients of the unified loss
//! on a tiny model, in 64-bit.

use lnt::gradcheck::check_gradients;
use lnt::losses::{unified_loss, LossConfig, NegativeSampler};
use lnt::model::{ModelConfig, ModelParams};
use lnt::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> lnt::Result<()> {
    let cfg = ModelConfig {
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
    };
    let model = ModelParams::<f64>::init(&cfg, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::from_fn(vec![2, 2, 32], |_| rng.random_range(-1.0..1.0));
    let loss_cfg = LossConfig {
        horizons: 2,
        transforms: 3,
        lambda: 1.0,
        negatives: 8,
        cpc_weight: 1.0,
    };

    let named = model.parts.named();
    let inputs: Vec<Tensor<f64>> = named.iter().map(|(_, t)| (*t).clone()).collect();
    let report = check_gradients(&inputs, 1e-4, |tape, vars| {
        let mut i = 0;
        let mv = model.parts.map(|_, _| {
            i += 1;
            vars[i - 1]
        });
        let enc = mv.encode_batch(&cfg, tape.constant(x.clone()), None)?;
        Ok(unified_loss(&enc, &mv, &mut NegativeSampler::new(3), &loss_cfg)?.total)
    })?;
    println!("{} parameters checked", report.checked);
    println!("max relative error {:.3e}", report.max_rel_error);
    println!("max absolute error {:.3e}", report.max_abs_error);
    println!("worst at {}[{}]", named[report.worst.0].0, report.worst.1);
    Ok(())
}
