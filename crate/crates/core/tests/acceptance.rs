//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints a PASS/FAIL line; exits nonzero if any fails.

use std::time::Instant;

use lnt::data::load_csv;
use lnt::eval::{best_f1, roc_auc};
use lnt::experiment::{detection_run, training_windows, SyntheticTask};
use lnt::gradcheck::check_gradients;
use lnt::losses::{cosine_exp_sim, ddcl_term, ddcl_terms, log_softmax_contrast, unified_loss, LossConfig, NegativeSampler};
use lnt::model::{constant_model, ModelConfig, ModelParams};
use lnt::scoring::{score_cpc_approx, score_ddcl, ScoreConfig};
use lnt::training::{fit, fit_from, latent_spread, TrainConfig};
use lnt::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn noise(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn gradient_correctness() -> Outcome {
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
    let model = ModelParams::<f64>::init(&cfg, 11).map_err(|e| e.to_string())?;
    let x = noise(vec![2, 2, 32], 12);
    let loss_cfg = LossConfig {
        horizons: 2,
        transforms: 3,
        lambda: 1.0,
        negatives: 8,
        cpc_weight: 1.0,
    };
    let inputs: Vec<Tensor<f64>> = model.parts.named().into_iter().map(|(_, t)| t.clone()).collect();
    let report = check_gradients(&inputs, 1e-4, |tape, vars| {
        let mut i = 0;
        let mv = model.parts.map(|_, _| {
            i += 1;
            vars[i - 1]
        });
        let enc = mv.encode_batch(&cfg, tape.constant(x.clone()), None)?;
        if enc.steps != 8 {
            return Err(lnt::LntError::Config(format!("expected 8 latent steps, got {}", enc.steps)));
        }
        Ok(unified_loss(&enc, &mv, &mut NegativeSampler::new(3), &loss_cfg)?.total)
    })
    .map_err(|e| e.to_string())?;
    check(
        report.max_rel_error <= 1e-3,
        format!("max relative error {:.2e} over {} parameters", report.max_rel_error, report.checked),
    )
}

fn contrastive_closed_forms() -> Outcome {
    let n = 16;
    let s = 0.37f64;
    let cpc = log_softmax_contrast(s, &vec![s; n - 1]).map_err(|e| e.to_string())?;
    let l = 12;
    let d = 5;
    let view: Vec<f64> = (0..d).map(|i| 0.3 + i as f64).collect();
    let views = Tensor::from_fn(vec![l, d], |i| view[i % d]);
    let c = Tensor::vector(vec![1.0, 0.0]);
    let head = Tensor::from_fn(vec![d, 2], |i| if i % 2 == 0 { view[i / 2] } else { 0.0 });
    let ddcl = ddcl_term(&views, &c, 1, 4, &[head]).map_err(|e| e.to_string())?;
    let z = [0.2, -1.3, 4.0];
    let h = cosine_exp_sim(&z, &z);
    let errs = [
        (cpc - (n as f64).ln()).abs(),
        (ddcl - (l as f64).ln()).abs(),
        (h - std::f64::consts::E).abs(),
    ];
    check(
        errs.iter().all(|&e| e <= 1e-6),
        format!("|cpc-logN| {:.1e}, |ddcl-logL| {:.1e}, |h-e| {:.1e}", errs[0], errs[1], errs[2]),
    )
}

fn constant_model_corollary() -> Outcome {
    let cfg = ModelConfig::small(3);
    let a = noise(vec![cfg.dim_z], 21);
    let b = noise(vec![cfg.dim_c], 22);
    let model = constant_model(&cfg, &a, &b).map_err(|e| e.to_string())?;
    // one column per transformation l; every (series, b, t, k) row must match
    let l = cfg.transforms;
    let mut rows: Vec<Vec<u64>> = Vec::new();
    for seed in [23, 24] {
        let x = noise(vec![2, 3, 720], seed);
        let tape = Tape::new();
        let vars = model.bind_frozen(&tape);
        let enc = vars.encode_batch(&cfg, tape.constant(x), None).map_err(|e| e.to_string())?;
        let terms = ddcl_terms(&enc, &vars, cfg.horizons).map_err(|e| e.to_string())?;
        for (_, _, t) in &terms.per_horizon {
            rows.extend(t.value().data().chunks(l).map(|r| r.iter().map(|v| v.to_bits()).collect()));
        }
    }
    let identical = rows.iter().all(|r| *r == rows[0]);

    let x = noise(vec![3, 5000], 25);
    let s = score_ddcl(&x, &model, &ScoreConfig::default()).map_err(|e| e.to_string())?;
    let flat = s.scores.iter().all(|v| v.to_bits() == s.scores[0].to_bits());
    let labels: Vec<u8> = (0..s.scores.len()).map(|i| ((i / 700) % 2) as u8).collect();
    let auc = roc_auc(&s.scores, &labels).map_err(|e| e.to_string())?;
    check(
        identical && flat && auc == 0.5,
        format!(
            "{} (t, k) rows of DDCL terms identical: {identical}; scores constant: {flat}; AUC {auc}",
            rows.len()
        ),
    )
}

fn determinism_and_causality() -> Outcome {
    let cfg = ModelConfig::small(3);
    let model = ModelParams::<f64>::init(&cfg, 31).map_err(|e| e.to_string())?;
    let x = noise(vec![3, 3000], 32);
    let sc = ScoreConfig::default();
    let first = score_ddcl(&x, &model, &sc).map_err(|e| e.to_string())?;
    let second = score_ddcl(&x, &model, &sc).map_err(|e| e.to_string())?;
    let same = first.scores.iter().zip(&second.scores).all(|(a, b)| a.to_bits() == b.to_bits());

    let (t, r) = (10, first.downsample);
    let mut y = x.clone();
    for c in 0..3 {
        for i in t * r..3000 {
            y.data_mut()[c * 3000 + i] += 5.0;
        }
    }
    let mutated = score_ddcl(&y, &model, &sc).map_err(|e| e.to_string())?;
    let prefix = (0..t * r).all(|i| first.scores[i].to_bits() == mutated.scores[i].to_bits());
    let changed = first.scores[t * r..] != mutated.scores[t * r..];
    check(
        same && prefix && changed,
        format!("repeat bitwise: {same}; scores[0..{}] unchanged after mutation: {prefix}", t * r),
    )
}

fn desk_scale_detection() -> Outcome {
    let start = Instant::now();
    let outcomes: Vec<_> = [0u64, 1, 2]
        .par_iter()
        .map(|&seed| {
            let task = SyntheticTask::generate(3, 50_000, 20_000, 0.10, seed)?;
            let cfg = TrainConfig {
                learning_rate: 1e-3,
                seed,
                ..TrainConfig::default()
            };
            detection_run(&task, &ModelConfig::small(3), &cfg)
        })
        .collect::<lnt::Result<_>>()
        .map_err(|e| e.to_string())?;
    let n = outcomes.len() as f64;
    let mean = |f: fn(&lnt::experiment::DetectionOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / n;
    let (trained, untrained, cpc) = (mean(|o| o.trained_auc), mean(|o| o.untrained_auc), mean(|o| o.cpc_approx_auc));
    let secs = start.elapsed().as_secs_f64();
    let per_seed: Vec<String> = outcomes
        .iter()
        .map(|o| format!("{:.3}/{:.3}/{:.3}", o.trained_auc, o.untrained_auc, o.cpc_approx_auc))
        .collect();
    let (a, b, c) = (trained >= 0.75, trained - untrained >= 0.10, trained - cpc >= 0.02);
    check(
        a && b && c && secs <= 1800.0,
        format!(
            "mean AUC ddcl {trained:.3} [(a) >= 0.75: {}], untrained {untrained:.3} [(b) +0.10: {}], \
             cpc-approx {cpc:.3} [(c) +0.02: {}]; per seed trained/untrained/cpc {}; {secs:.0}s",
            pf(a),
            pf(b),
            pf(c),
            per_seed.join(" ")
        ),
    )
}

fn collapse_demonstration() -> Outcome {
    let ratios: Vec<f64> = [0u64, 1, 2]
        .par_iter()
        .map(|&seed| {
            let task = SyntheticTask::generate(3, 50_000, 20_000, 0.10, seed)?;
            let cfg = TrainConfig {
                cpc_weight: 0.0,
                lambda: 1.0,
                epochs: 10,
                seed,
                ..TrainConfig::default()
            };
            let windows = training_windows::<f32>(&task.train, &cfg)?;
            let probe: Vec<_> = windows.iter().step_by(8).cloned().collect();
            let init = ModelParams::<f32>::init(&ModelConfig::small(3), seed)?;
            let before = latent_spread(&init, &probe, true)?;
            let (model, _) = fit_from(init, &windows, &cfg, |_, _| {})?;
            Ok(before / latent_spread(&model, &probe, true)?)
        })
        .collect::<lnt::Result<_>>()
        .map_err(|e| e.to_string())?;
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    check(
        mean >= 10.0,
        format!(
            "latent direction spread shrinks {mean:.1}x after 10 DDCL-only epochs (per seed {})",
            ratios.iter().map(|r| format!("{r:.1}x")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

/// Highest F1 over every observed score used as an inclusive threshold;
/// ties go to the lowest threshold.
fn exhaustive_f1(scores: &[f64], labels: &[u8]) -> (f64, f64) {
    let mut best = (-1.0, f64::NAN);
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for &th in &thresholds {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (&s, &l) in scores.iter().zip(labels) {
            match (s >= th, l == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let f1 = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
        if f1 >= best.0 {
            best = (f1, th);
        }
    }
    best
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let mut worst_auc = 0.0f64;
    for _ in 0..20 {
        let scores: Vec<f64> = (0..200).map(|_| (rng.random_range(0.0..5.0f64) * 4.0).round() / 4.0).collect();
        let mut labels: Vec<u8> = (0..200).map(|_| rng.random_bool(0.3) as u8).collect();
        labels[0] = 1;
        labels[1] = 0;
        let auc = roc_auc(&scores, &labels).map_err(|e| e.to_string())?;
        worst_auc = worst_auc.max((auc - pairwise_auc(&scores, &labels)).abs());
    }
    let mut f1_mismatches = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..60);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..12) as f64 * 0.5).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_bool(0.4) as u8).collect();
        labels[0] = 1;
        labels[1] = 0;
        let ours = best_f1(&scores, &labels).map_err(|e| e.to_string())?;
        let (f1, th) = exhaustive_f1(&scores, &labels);
        if ours.f1 != f1 || ours.threshold != th {
            f1_mismatches += 1;
        }
    }
    check(
        worst_auc <= 1e-9 && f1_mismatches == 0,
        format!("max |auc - pairwise| {worst_auc:.1e} on 200-point sets; best-F1 mismatches {f1_mismatches}/100"),
    )
}

fn checkpoint_round_trip() -> Outcome {
    let task = SyntheticTask::generate(3, 6_000, 5_000, 0.10, 81).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 1,
        seed: 81,
        ..TrainConfig::default()
    };
    let windows = training_windows::<f32>(&task.train, &cfg).map_err(|e| e.to_string())?;
    let (model, _) = fit(&windows, &ModelConfig::small(3), &cfg).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("m.lntc");
    lnt::checkpoint::Checkpoint::new(model.clone(), Some(task.stats.clone()))
        .save(&path)
        .map_err(|e| e.to_string())?;
    let loaded = lnt::checkpoint::Checkpoint::load(&path).map_err(|e| e.to_string())?;
    let x = task.test.values.cast::<f32>();
    let sc = ScoreConfig::default();
    let mut same = loaded.model == model && loaded.norm.as_ref() == Some(&task.stats);
    for (a, b) in [
        (score_ddcl(&x, &model, &sc), score_ddcl(&x, &loaded.model, &sc)),
        (score_cpc_approx(&x, &model, &sc), score_cpc_approx(&x, &loaded.model, &sc)),
    ] {
        let (a, b) = (a.map_err(|e| e.to_string())?, b.map_err(|e| e.to_string())?);
        same &= a.scores.iter().zip(&b.scores).all(|(u, v)| u.to_bits() == v.to_bits());
    }
    check(same, format!("save -> load -> score bitwise identical: {same}"))
}

fn injection_protocol() -> Outcome {
    let mut problems = Vec::new();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    let mut tones = 0;
    for seed in 0..20u64 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let out = dir.path().to_str().unwrap().to_string();
        lnt::cli::run(["lnt", "synth", "--seed", &seed.to_string(), "--out", &out]).map_err(|e| e.to_string())?;
        let test = load_csv(&dir.path().join("test.csv")).map_err(|e| e.to_string())?;
        let fraction = test.labeled_fraction();
        lo = lo.min(fraction);
        hi = hi.max(fraction);
        if (fraction - 0.10).abs() > 0.02 {
            problems.push(format!("seed {seed}: fraction {fraction:.4}"));
        }
        let text = std::fs::read_to_string(dir.path().join("manifest.json")).map_err(|e| e.to_string())?;
        let manifest: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        let labels = test.labels.as_deref().unwrap_or(&[]);
        let mut covered = 0;
        for tone in manifest["details"]["anomalies"].as_array().cloned().unwrap_or_default() {
            tones += 1;
            let f = tone["frequency_hz"].as_f64().unwrap_or(f64::NAN);
            let len = tone["length"].as_u64().unwrap_or(0) as usize;
            let start = tone["start"].as_u64().unwrap_or(0) as usize;
            if !(20.0..=120.0).contains(&f) || !(512..=4096).contains(&len) {
                problems.push(format!("seed {seed}: tone {len} frames at {f:.1} Hz"));
            }
            if labels[start..start + len].iter().any(|&l| l != 1) {
                problems.push(format!("seed {seed}: tone at {start} not fully labeled"));
            }
            covered += len;
        }
        if covered != labels.iter().filter(|&&l| l == 1).count() {
            problems.push(format!("seed {seed}: labels outside tones or overlapping tones"));
        }
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("20 seeds, {tones} tones, labeled fraction in [{lo:.4}, {hi:.4}]")
        } else {
            problems.join("; ")
        },
    )
}

fn pf(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 gradient correctness", gradient_correctness),
        ("2 contrastive closed forms", contrastive_closed_forms),
        ("3 constant-encoder corollary", constant_model_corollary),
        ("4 determinism and causality", determinism_and_causality),
        ("5 desk-scale detection", desk_scale_detection),
        ("6 collapse demonstration", collapse_demonstration),
        ("7 metric oracles", metric_oracles),
        ("8 checkpoint round-trip", checkpoint_round_trip),
        ("9 injection protocol", injection_protocol),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        let (ok, detail) = match &outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        failed += !ok as usize;
        println!("criterion {name}: {} ({detail}) [{secs:.1}s]", pf(ok));
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
