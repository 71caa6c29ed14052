//! Trains on the transformation loss alone and tracks how the directions of
//! the latents converge.
//!
//! cargo run --release --example collapse -- [epochs] [seed]

use lnt::experiment::{training_windows, SyntheticTask};
use lnt::model::{ModelConfig, ModelParams};
use lnt::training::{fit_from, latent_spread, TrainConfig};

fn main() -> lnt::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs = args.first().and_then(|s| s.parse().ok()).unwrap_or(20);
    let seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);

    let task = SyntheticTask::generate(3, 50_000, 20_000, 0.10, seed)?;
    let cfg = TrainConfig {
        cpc_weight: 0.0,
        lambda: 1.0,
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let windows = training_windows::<f32>(&task.train, &cfg)?;
    let probe: Vec<_> = windows.iter().step_by(8).cloned().collect();
    let init = ModelParams::<f32>::init(&ModelConfig::small(3), seed)?;
    let (raw0, unit0) = (latent_spread(&init, &probe, false)?, latent_spread(&init, &probe, true)?);
    println!("epoch   0  raw spread {raw0:.3e}  direction spread {unit0:.3e}");

    fit_from(init, &windows, &cfg, |e, m| {
        let raw = latent_spread(m, &probe, false).unwrap_or(f64::NAN);
        let unit = latent_spread(m, &probe, true).unwrap_or(f64::NAN);
        println!(
            "epoch {:>3}  ddcl {:.4}  raw spread {raw:.3e}  direction spread {unit:.3e}  ({:.1}x)",
            e.epoch,
            e.ddcl,
            unit0 / unit
        );
    })?;
    Ok(())
}
