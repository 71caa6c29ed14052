//! ROC-AUC and the best-F1 operating point of a score file.
//!
//! cargo run --release --example eval -- [scores.csv]

use lnt::data::load_csv;
use lnt::eval::{confusion, evaluate, EvalResult};

fn main() -> lnt::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "lnt-demo/scores.csv".into());
    let file = load_csv(&path)?;
    let col = file.channels.iter().position(|c| c == "score").expect("score column");
    let scores = file.channel(col);
    let labels = file.labels.as_deref().expect("label column");

    let result = evaluate(scores, labels)?;
    println!("{result}");
    println!("{}\n{}", EvalResult::CSV_HEADER, result.csv_line());

    // a few fixed operating points for comparison
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    for q in [0.5, 0.8, 0.9, 0.95] {
        let th = sorted[((sorted.len() - 1) as f64 * q) as usize];
        let c = confusion(scores, labels, th)?;
        println!("q{:<4} threshold {th:.4}  precision {:.3}  recall {:.3}  f1 {:.3}", q, c.precision(), c.recall(), c.f1());
    }
    Ok(())
}
