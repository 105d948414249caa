use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use hinmal_core::datagen::SyntheticConfig;
use hinmal_core::detector::ClassifierConfig;
use hinmal_core::incremental::IncrementalConfig;
use hinmal_core::msgat::TrainConfig;
use hinmal_core::{Error, Result};

/// File locations. Relative paths are resolved against the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub manifest: PathBuf,
    pub permission_map: PathBuf,
    /// Meta-structure definitions; the built-in registry when absent.
    pub structures: Option<PathBuf>,
    pub batch: PathBuf,
    pub truth: PathBuf,
    /// Labeled batch used to tune structure weights.
    pub calibration: Option<PathBuf>,
    pub hin: PathBuf,
    pub adjacency: PathBuf,
    pub checkpoint: PathBuf,
    pub embeddings_in: PathBuf,
    pub embeddings_out: PathBuf,
    pub audit: PathBuf,
    pub verdicts: PathBuf,
    pub train_report: PathBuf,
    pub eval_report: PathBuf,
    pub bench_report: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            manifest: "manifest.jsonl".into(),
            permission_map: "permissions.csv".into(),
            structures: None,
            batch: "batch.jsonl".into(),
            truth: "batch_truth.jsonl".into(),
            calibration: None,
            hin: "hin.bin".into(),
            adjacency: "adjacency.bin".into(),
            checkpoint: "model.ckpt".into(),
            embeddings_in: "embeddings_in.tsv".into(),
            embeddings_out: "embeddings_out.tsv".into(),
            audit: "audit.jsonl".into(),
            verdicts: "verdicts.jsonl".into(),
            train_report: "train_report.json".into(),
            eval_report: "eval_report.json".into(),
            bench_report: "bench_report.json".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Score verdicts against ground truth.
    #[default]
    Verdicts,
    /// Stratified k-fold over the in-sample HIN, retraining per fold.
    Cv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub mode: EvalMode,
    pub folds: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: EvalMode::Verdicts,
            folds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Timed repetitions of the incremental embedding; the fastest counts.
    pub repetitions: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { repetitions: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Source of all randomness; copied into every stage.
    pub seed: u64,
    /// Fraction of labeled in-sample apps held out from training.
    pub holdout_fraction: f64,
    pub paths: Paths,
    pub synthetic: SyntheticConfig,
    pub train: TrainConfig,
    pub incremental: IncrementalConfig,
    pub classifier: ClassifierConfig,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            holdout_fraction: 0.2,
            paths: Paths::default(),
            synthetic: SyntheticConfig::default(),
            train: TrainConfig::default(),
            incremental: IncrementalConfig::default(),
            classifier: ClassifierConfig::default(),
            eval: EvalConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `key=value` overrides; dotted keys address nested fields and
    /// values are read as JSON, falling back to a plain string.
    pub fn with_overrides(self, overrides: &[String]) -> Result<Self> {
        let mut doc = serde_json::to_value(&self).expect("config serializes");
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{item}` is not KEY=VALUE")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
            let mut slot = &mut doc;
            for part in key.split('.') {
                slot = slot
                    .as_object_mut()
                    .and_then(|o| o.get_mut(part))
                    .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
            }
            *slot = value;
        }
        serde_json::from_value(doc).map_err(|e| Error::Config(format!("config: {e}")))
    }

    /// Pushes the top-level seed into every stage and checks ranges.
    pub fn finalize(mut self) -> Result<Self> {
        self.train.seed = self.seed;
        self.synthetic.seed = self.seed;
        self.train.validate()?;
        self.incremental.validate()?;
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config(format!(
                "holdout_fraction must lie in [0, 1), got {}",
                self.holdout_fraction
            )));
        }
        if self.bench.repetitions == 0 {
            return Err(Error::Config("bench.repetitions must be at least 1".into()));
        }
        Ok(self)
    }
}
