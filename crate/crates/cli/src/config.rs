//! Resolved run configurations. Every run writes one of these as JSON next to
//! its outputs; `qaff --replay FILE` executes it again.

use std::path::PathBuf;

use clap::ValueEnum;
use qaff_core::corpus::SynthOptions;
use qaff_core::generate::GenerationConfig;
use qaff_core::inferalpha::{AlphaGrid, RecoveryConfig, ReplayConfig};
use qaff_core::quantile::TrainConfig;
use qaff_core::testbed::{Split, TestbedConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Lm,
    Train,
    Validation,
    Evaluation,
}

impl From<SplitName> for Split {
    fn from(s: SplitName) -> Self {
        match s {
            SplitName::Lm => Split::LanguageModel,
            SplitName::Train => Split::Train,
            SplitName::Validation => Split::Validation,
            SplitName::Evaluation => Split::Evaluation,
        }
    }
}

/// Where quantile predictions come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Source {
    /// A trained head; `model` supplies the featurizer for raw text.
    Head { head: PathBuf, model: Option<PathBuf> },
    /// Exact quantiles of the reference grammar.
    Oracle { grammar: SynthOptions },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRun {
    pub testbed: TestbedConfig,
    pub split: SplitName,
    pub n: usize,
    pub out: PathBuf,
    pub model: Option<PathBuf>,
    pub text: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub data: PathBuf,
    pub out: PathBuf,
    pub log: Option<PathBuf>,
    pub channel: String,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrateRun {
    pub data: PathBuf,
    pub source: Source,
    pub channel: String,
    pub out: PathBuf,
    pub summary: Option<PathBuf>,
    /// Leave out positions whose predicted quantiles are all equal.
    pub skip_degenerate: bool,
    /// Number of frequent prefixes to compare; 0 skips the comparison.
    pub prefixes: usize,
    pub prefix_out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRun {
    pub text: String,
    pub source: Source,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRun {
    pub sentences: PathBuf,
    pub source: Source,
    pub top_pct: f64,
    pub out: PathBuf,
    pub table: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionsRun {
    pub sentences: PathBuf,
    pub source: Source,
    pub pivot: String,
    /// "Before" value for sentence-initial pivots; defaults to the median of
    /// the scores in the sentence file.
    pub marginal_median: Option<f64>,
    pub out: PathBuf,
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRun {
    pub head: PathBuf,
    pub model: PathBuf,
    pub prompt: String,
    pub generation: GenerationConfig,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferRun {
    pub head: PathBuf,
    pub model: PathBuf,
    pub sentences: PathBuf,
    pub grid: AlphaGrid,
    pub replay: ReplayConfig,
    pub out: PathBuf,
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoverRun {
    pub head: PathBuf,
    pub model: PathBuf,
    pub recovery: RecoveryConfig,
    pub out: PathBuf,
    pub estimates: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    Synth(SynthRun),
    Train(TrainRun),
    Calibrate(CalibrateRun),
    Predict(PredictRun),
    ScanVariance(ScanRun),
    Transitions(TransitionsRun),
    Generate(GenerateRun),
    InferAlpha(InferRun),
    Recover(RecoverRun),
}

impl RunConfig {
    /// Replaces the seed of seeded commands.
    pub fn set_seed(&mut self, seed: u64) {
        match self {
            RunConfig::Synth(r) => r.testbed.synth.seed = seed,
            RunConfig::Train(r) => r.train.seed = seed,
            RunConfig::Generate(r) => r.generation.seed = seed,
            RunConfig::Recover(r) => r.recovery.seed = seed,
            _ => {}
        }
    }

    /// Default location of the emitted config: next to the primary output.
    pub fn default_path(&self) -> Option<PathBuf> {
        let out = match self {
            RunConfig::Synth(r) => &r.out,
            RunConfig::Train(r) => &r.out,
            RunConfig::Calibrate(r) => &r.out,
            RunConfig::Predict(r) => r.out.as_ref()?,
            RunConfig::ScanVariance(r) => &r.out,
            RunConfig::Transitions(r) => &r.out,
            RunConfig::Generate(r) => &r.out,
            RunConfig::InferAlpha(r) => &r.out,
            RunConfig::Recover(r) => &r.out,
        };
        let mut name = out.file_name()?.to_os_string();
        name.push(".run.json");
        Some(out.with_file_name(name))
    }
}
