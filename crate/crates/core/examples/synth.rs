//! Writes a clean training split and a test split with injected tones.
//!
//! cargo run --release --example synth -- [dir] [seed]

use std::path::PathBuf;

use lnt::data::{inject_sine_anomalies, synth_split, write_csv, InjectionSpec};

fn main() -> lnt::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "lnt-demo".into()));
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    std::fs::create_dir_all(&dir).map_err(|e| lnt::LntError::Io {
        path: dir.clone(),
        source: e,
    })?;

    let (train, test) = synth_split(3, 50_000, 20_000, seed)?;
    let spec = InjectionSpec {
        seed: seed + 1,
        ..InjectionSpec::default()
    };
    let injected = inject_sine_anomalies(&test, &spec)?;
    write_csv(dir.join("train.csv"), &train)?;
    write_csv(dir.join("test.csv"), &injected.series)?;

    for t in &injected.tones {
        println!("tone at {:>6}  {:>4} frames  {:5.1} Hz", t.start, t.length, t.frequency_hz);
    }
    println!("labeled fraction {:.4}", injected.series.labeled_fraction());
    println!("wrote {}/train.csv and {}/test.csv", dir.display(), dir.display());
    Ok(())
}
