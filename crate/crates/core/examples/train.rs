//! Trains the small config on a CSV series and saves a checkpoint.
//!
//! cargo run --release --example train -- [train.csv] [epochs] [out.lntc]

use lnt::checkpoint::Checkpoint;
use lnt::data::{load_csv, NormStats};
use lnt::experiment::training_windows;
use lnt::model::{ModelConfig, ModelParams};
use lnt::training::{fit_from, TrainConfig};

fn main() -> lnt::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let data = args.first().map(String::as_str).unwrap_or("lnt-demo/train.csv");
    let epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let out = args.get(2).map(String::as_str).unwrap_or("lnt-demo/model.lntc");

    let raw = load_csv(data)?;
    let stats = NormStats::fit(&raw);
    let series = stats.standardize(&raw)?;
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let windows = training_windows::<f32>(&series, &cfg)?;
    let model = ModelParams::<f32>::init(&ModelConfig::small(series.num_channels()), cfg.seed)?;
    println!("{} windows, {} parameters", windows.len(), model.num_parameters());

    let (model, report) = fit_from(model, &windows, &cfg, |e, _| {
        println!("epoch {:>3}  cpc {:.4}  ddcl {:.4}  total {:.4}  {:.1}s", e.epoch, e.cpc, e.ddcl, e.total, e.seconds);
    })?;
    let hash = Checkpoint::new(model, Some(stats)).save(out)?;
    report.write_csv(format!("{out}.report.csv"))?;
    println!("saved {out} (sha256 {})", &hash[..16]);
    Ok(())
}
