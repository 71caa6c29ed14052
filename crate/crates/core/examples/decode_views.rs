//! Fits the visualization decoder on a frozen checkpoint and writes the
//! original, reconstructed and transformed views of one window.
//!
//! cargo run --release --example decode_views -- [model.lntc] [test.csv] [start] [views.csv]

use lnt::checkpoint::Checkpoint;
use lnt::cli::write_views;
use lnt::data::load_csv;
use lnt::experiment::training_windows;
use lnt::training::{fit_decoder, TrainConfig};
use lnt::Tensor;

fn main() -> lnt::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let ck_path = args.first().map(String::as_str).unwrap_or("lnt-demo/model.lntc");
    let data = args.get(1).map(String::as_str).unwrap_or("lnt-demo/test.csv");
    let start: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let out = args.get(3).map(String::as_str).unwrap_or("lnt-demo/views.csv");

    let mut ck = Checkpoint::load(ck_path)?;
    let stats = ck.norm.clone().expect("checkpoint carries normalization statistics");
    let series = stats.standardize(&load_csv(data)?)?;
    let cfg = TrainConfig {
        decoder_epochs: 5,
        ..TrainConfig::default()
    };
    if ck.model.parts.decoder.is_none() {
        let windows = training_windows::<f32>(&series, &cfg)?;
        for (epoch, mse) in fit_decoder(&windows, &mut ck.model, &cfg)?.iter().enumerate() {
            println!("decoder epoch {:>2}  mse {mse:.5}", epoch + 1);
        }
        ck.save(ck_path)?;
    }

    let (len, t_all, c) = (cfg.sub_sequence_length, series.len(), series.num_channels());
    let values = series.values.cast::<f32>();
    let x = Tensor::from_fn(vec![c, len], |i| values.data()[(i / len) * t_all + start + i % len]);
    let z = ck.model.encode(&x)?;
    let mut groups = vec![("original".to_string(), x), ("reconstruction".to_string(), ck.model.decode(&z)?)];
    for (l, v) in ck.model.transform_sequence(&z)?.iter().enumerate() {
        groups.push((format!("T{}", l + 1), ck.model.decode(v)?));
    }
    write_views(out.as_ref(), &groups)?;
    println!("wrote {} views of frames {start}..{} to {out}", groups.len(), start + len);
    Ok(())
}
