//! The synthetic detection benchmark: clean sine mixtures for training,
//! injected sine tones in the test split.

use std::time::Instant;

use crate::data::{inject_sine_anomalies, synth_split, window, InjectionSpec, LabeledSeries, NormStats, Tone};
use crate::error::Result;
use crate::eval::roc_auc;
use crate::model::{ModelConfig, ModelParams};
use crate::scoring::{score, Method, ScoreConfig};
use crate::tensor::{Real, Tensor};
use crate::training::{fit_from, TrainConfig, TrainReport};

/// Standardized train/test splits of one synthetic task.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub train: LabeledSeries,
    pub test: LabeledSeries,
    pub stats: NormStats,
    pub tones: Vec<Tone>,
}

impl SyntheticTask {
    /// Train and test series share generator parameters; the test split
    /// receives tones covering `fraction` of its frames. Both splits are
    /// standardized with training statistics.
    pub fn generate(channels: usize, train_len: usize, test_len: usize, fraction: f64, seed: u64) -> Result<Self> {
        let (train, test) = synth_split(channels, train_len, test_len, seed)?;
        let spec = InjectionSpec {
            fraction,
            seed: seed.wrapping_add(1),
            ..InjectionSpec::default()
        };
        let injected = inject_sine_anomalies(&test, &spec)?;
        let stats = NormStats::fit(&train);
        Ok(SyntheticTask {
            train: stats.standardize(&train)?,
            test: stats.standardize(&injected.series)?,
            stats,
            tones: injected.tones,
        })
    }

    pub fn labels(&self) -> &[u8] {
        self.test.labels.as_deref().expect("test split is labeled")
    }
}

/// Training windows of a standardized series.
pub fn training_windows<S: Real>(series: &LabeledSeries, cfg: &TrainConfig) -> Result<Vec<Tensor<S>>> {
    window(&series.values.cast::<S>(), cfg.sub_sequence_length, cfg.window_stride)
}

/// ROC-AUC of scoring `series` with `method`.
pub fn auc_of<S: Real>(model: &ModelParams<S>, series: &LabeledSeries, method: Method) -> Result<f64> {
    let s = score(&series.values.cast::<S>(), model, method, &ScoreConfig::default())?;
    roc_auc(&s.scores, series.labels.as_deref().unwrap_or(&[]))
}

/// Test-split ROC-AUCs of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionOutcome {
    pub seed: u64,
    pub untrained_auc: f64,
    pub trained_auc: f64,
    pub cpc_approx_auc: f64,
    pub report: TrainReport,
    pub seconds: f64,
}

/// Trains on `task.train` from a fresh initialization and scores `task.test`.
pub fn detection_run(task: &SyntheticTask, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<DetectionOutcome> {
    let start = Instant::now();
    let init = ModelParams::<f32>::init(model_cfg, cfg.seed)?;
    let untrained_auc = auc_of(&init, &task.test, Method::Ddcl)?;
    let windows = training_windows::<f32>(&task.train, cfg)?;
    let (model, report) = fit_from(init, &windows, cfg, |_, _| {})?;
    Ok(DetectionOutcome {
        seed: cfg.seed,
        untrained_auc,
        trained_auc: auc_of(&model, &task.test, Method::Ddcl)?,
        cpc_approx_auc: auc_of(&model, &task.test, Method::CpcApprox)?,
        report,
        seconds: start.elapsed().as_secs_f64(),
    })
}
