//! Scores a CSV series with a checkpoint, by DDCL and by the cpc-approx baseline.
//!
//! cargo run --release --example score -- [model.lntc] [test.csv] [scores.csv]

use lnt::checkpoint::Checkpoint;
use lnt::cli::write_scores;
use lnt::data::load_csv;
use lnt::eval::roc_auc;
use lnt::scoring::{score, Method, ScoreConfig};

fn main() -> lnt::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let ck = args.first().map(String::as_str).unwrap_or("lnt-demo/model.lntc");
    let data = args.get(1).map(String::as_str).unwrap_or("lnt-demo/test.csv");
    let out = args.get(2).map(String::as_str).unwrap_or("lnt-demo/scores.csv");

    let ck = Checkpoint::load(ck)?;
    let raw = load_csv(data)?;
    let series = match &ck.norm {
        Some(stats) => stats.standardize(&raw)?,
        None => raw,
    };
    let x = series.values.cast::<f32>();

    for method in [Method::Ddcl, Method::CpcApprox] {
        let s = score(&x, &ck.model, method, &ScoreConfig::default())?;
        let (lo, hi) = s.scores.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        print!("{method:<10} {} latent steps, range [{lo:.4}, {hi:.4}]", s.latent_scores.len());
        match series.labels.as_deref() {
            Some(l) if l.contains(&1) && l.contains(&0) => println!(", AUC {:.4}", roc_auc(&s.scores, l)?),
            _ => println!(),
        }
        if method == Method::Ddcl {
            write_scores(out.as_ref(), &s.scores, series.labels.as_deref())?;
        }
    }
    println!("wrote {out}");
    Ok(())
}
