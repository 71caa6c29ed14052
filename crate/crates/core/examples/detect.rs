//! Desk-scale detection run on synthetic sine data.
//!
//! cargo run --release --example detect -- [seed] [epochs] [lr]

use lnt::experiment::{detection_run, SyntheticTask};
use lnt::model::ModelConfig;
use lnt::training::TrainConfig;

fn main() -> lnt::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(20);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2e-4);

    let task = SyntheticTask::generate(3, 50_000, 20_000, 0.10, seed)?;
    let cfg = TrainConfig {
        epochs,
        learning_rate: lr,
        seed,
        ..TrainConfig::default()
    };
    let out = detection_run(&task, &ModelConfig::small(3), &cfg)?;
    for e in &out.report.epochs {
        println!("epoch {:>3}  cpc {:.4}  ddcl {:.4}  grad {:.3}  {:.1}s", e.epoch, e.cpc, e.ddcl, e.grad_norm, e.seconds);
    }
    println!("untrained AUC  {:.4}", out.untrained_auc);
    println!("trained AUC    {:.4}", out.trained_auc);
    println!("cpc-approx AUC {:.4}", out.cpc_approx_auc);
    Ok(())
}
