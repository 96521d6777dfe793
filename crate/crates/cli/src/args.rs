//! Command-line flags and their resolution into a [`RunConfig`].

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use qaff_core::corpus::{SynthOptions, VALENCE};
use qaff_core::generate::{GenerationConfig, Tail};
use qaff_core::inferalpha::{AlphaGrid, RecoveryConfig, ReplayConfig};
use qaff_core::quantile::{Method, TrainConfig};
use qaff_core::testbed::TestbedConfig;
use serde::de::DeserializeOwned;

use crate::config::*;
use crate::Usage;

#[derive(Debug, Parser)]
#[command(name = "qaff", version, about = "Quantile forecasting of end-of-sentence affect")]
pub struct Cli {
    /// Worker threads for per-sentence parallelism (1 is the deterministic reference).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Re-run a previously emitted run configuration.
    #[arg(long, value_name = "FILE")]
    pub replay: Option<PathBuf>,

    /// Where to write the resolved run configuration (default: next to the output).
    #[arg(long, global = true, value_name = "FILE")]
    pub run_config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a scored, featurized corpus from the reference grammar.
    Synth(SynthArgs),
    /// Train a quantile head on an interchange corpus.
    Train(TrainArgs),
    /// Calibration curve of a head or of the grammar oracle.
    Calibrate(CalibrateArgs),
    /// Quantile trajectory of one sentence.
    Predict(PredictArgs),
    /// Local maxima of the interquartile range across sentences.
    ScanVariance(ScanArgs),
    /// Median transitions at a pivot token.
    Transitions(TransitionsArgs),
    /// Tail-targeted sampling from the language model.
    Generate(GenerateArgs),
    /// Fit the decoding α of observed sentences.
    InferAlpha(InferArgs),
    /// Simulated α-recovery experiment.
    Recover(RecoverArgs),
}

/// Grammar knobs shared by synth and the oracle.
#[derive(Debug, Args)]
pub struct GrammarArgs {
    #[arg(long)]
    pub intensifier_rate: Option<f64>,
    #[arg(long)]
    pub reversal_rate: Option<f64>,
    /// Seed of the reference grammar samples.
    #[arg(long)]
    pub grammar_seed: Option<u64>,
}

impl GrammarArgs {
    fn apply(&self, o: &mut SynthOptions) {
        set(&mut o.intensifier_rate, self.intensifier_rate);
        set(&mut o.reversal_rate, self.reversal_rate);
        set(&mut o.seed, self.grammar_seed);
    }
}

/// Forecaster selection for the analysis commands.
#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Trained head checkpoint.
    #[arg(long, value_name = "FILE")]
    pub head: Option<PathBuf>,
    /// Model bundle (language model and featurizer).
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Use exact grammar quantiles instead of a head.
    #[arg(long, conflicts_with = "head")]
    pub oracle: bool,
    #[command(flatten)]
    pub grammar: GrammarArgs,
}

impl SourceArgs {
    fn resolve(&self) -> Result<Source> {
        if self.oracle {
            let mut grammar = SynthOptions::default();
            self.grammar.apply(&mut grammar);
            return Ok(Source::Oracle { grammar });
        }
        let head = self.head.clone().ok_or_else(|| Usage("either --head or --oracle is required".into()))?;
        Ok(Source::Head {
            head,
            model: self.model.clone(),
        })
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Testbed configuration JSON used as the base.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub grammar: GrammarArgs,
    /// Seed of the token embeddings.
    #[arg(long)]
    pub featurizer_seed: Option<u64>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    /// Grammar sentences used to fit the language model.
    #[arg(long)]
    pub lm_sentences: Option<usize>,
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitName,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    /// Interchange corpus to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Model bundle to write.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Plain-text copy: one `score<TAB>sentence` line per example.
    #[arg(long, value_name = "FILE")]
    pub text: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training configuration JSON used as the base.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Head checkpoint to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Per-epoch loss log (CSV).
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
    #[arg(long, default_value = VALENCE)]
    pub channel: String,
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub huber_k: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Interchange validation corpus.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value = VALENCE)]
    pub channel: String,
    /// Calibration curve CSV.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Summary JSON.
    #[arg(long, value_name = "FILE")]
    pub summary: Option<PathBuf>,
    /// Leave out positions whose predicted quantiles are all equal.
    #[arg(long)]
    pub skip_degenerate: bool,
    /// Compare this many frequent prefixes against empirical quantiles.
    #[arg(long, default_value_t = 0)]
    pub prefixes: usize,
    #[arg(long, value_name = "FILE")]
    pub prefix_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub text: String,
    #[command(flatten)]
    pub source: SourceArgs,
    /// Trajectory CSV (default: standard output).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// Sentence file: one sentence per line, optionally `score<TAB>sentence`.
    #[arg(long, value_name = "FILE")]
    pub sentences: PathBuf,
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value_t = 1.0)]
    pub top_pct: f64,
    /// Peak list CSV.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Token frequency table CSV.
    #[arg(long, value_name = "FILE")]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TransitionsArgs {
    #[arg(long, value_name = "FILE")]
    pub sentences: PathBuf,
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value = "but")]
    pub pivot: String,
    #[arg(long)]
    pub marginal_median: Option<f64>,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub summary: Option<PathBuf>,
}

/// Decoder flags shared by generate, infer-alpha and recover.
#[derive(Debug, Args)]
pub struct DecoderArgs {
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
}

impl DecoderArgs {
    fn apply(&self, g: &mut GenerationConfig) {
        set(&mut g.top_k, self.top_k);
        set(&mut g.top_p, self.top_p);
        set(&mut g.temperature, self.temperature);
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Generation configuration JSON used as the base.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub head: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long)]
    pub prompt: String,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_parser = parse_tail)]
    pub tail: Option<Tail>,
    #[command(flatten)]
    pub decoder: DecoderArgs,
    #[arg(long)]
    pub max_tokens: Option<usize>,
    #[arg(long = "n")]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON-lines output.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Candidate α levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    /// Tails to consider, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_tail)]
    pub tails: Option<Vec<Tail>>,
}

impl GridArgs {
    fn apply(&self, g: &mut AlphaGrid) {
        set(&mut g.alphas, self.alphas.clone());
        set(&mut g.tails, self.tails.clone());
    }
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long, value_name = "FILE")]
    pub head: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub sentences: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub decoder: DecoderArgs,
    #[arg(long)]
    pub weight_floor: Option<f64>,
    /// Per-sentence fits CSV.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Source-level summary JSON.
    #[arg(long, value_name = "FILE")]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RecoverArgs {
    /// Recovery configuration JSON used as the base.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub head: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub decoder: DecoderArgs,
    #[arg(long)]
    pub max_tokens: Option<usize>,
    /// Sentences per simulated source, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub simulations: Option<usize>,
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Accuracy and correlation per size (CSV).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Per-source true and estimated values (CSV).
    #[arg(long, value_name = "FILE")]
    pub estimates: Option<PathBuf>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn parse_method(s: &str) -> Result<Method, String> {
    match s {
        "mc" => Ok(Method::Mc),
        "td0" => Ok(Method::Td0),
        other => Err(format!("expected mc or td0, got {other:?}")),
    }
}

fn parse_tail(s: &str) -> Result<Tail, String> {
    s.parse().map_err(|e: qaff_core::Error| e.to_string())
}

fn load_base<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| Usage(format!("{}: {e}", p.display())).into())
        }
    }
}

impl Command {
    pub fn resolve(self) -> Result<RunConfig> {
        Ok(match self {
            Command::Synth(a) => {
                let mut testbed: TestbedConfig = load_base(a.config.as_deref())?;
                a.grammar.apply(&mut testbed.synth);
                set(&mut testbed.featurizer_seed, a.featurizer_seed);
                set(&mut testbed.embed_dim, a.embed_dim);
                set(&mut testbed.window, a.window);
                set(&mut testbed.lm_sentences, a.lm_sentences);
                RunConfig::Synth(SynthRun {
                    testbed,
                    split: a.split,
                    n: a.n,
                    out: a.out,
                    model: a.model,
                    text: a.text,
                })
            }
            Command::Train(a) => {
                let mut train: TrainConfig = load_base(a.config.as_deref())?;
                set(&mut train.method, a.method);
                set(&mut train.epochs, a.epochs);
                set(&mut train.batch_size, a.batch_size);
                set(&mut train.learning_rate, a.lr);
                set(&mut train.huber_k, a.huber_k);
                set(&mut train.hidden, a.hidden);
                set(&mut train.patience, a.patience);
                set(&mut train.seed, a.seed);
                RunConfig::Train(TrainRun {
                    data: a.data,
                    out: a.out,
                    log: a.log,
                    channel: a.channel,
                    train,
                })
            }
            Command::Calibrate(a) => RunConfig::Calibrate(CalibrateRun {
                source: a.source.resolve()?,
                data: a.data,
                channel: a.channel,
                out: a.out,
                summary: a.summary,
                skip_degenerate: a.skip_degenerate,
                prefixes: a.prefixes,
                prefix_out: a.prefix_out,
            }),
            Command::Predict(a) => RunConfig::Predict(PredictRun {
                source: a.source.resolve()?,
                text: a.text,
                out: a.out,
            }),
            Command::ScanVariance(a) => RunConfig::ScanVariance(ScanRun {
                source: a.source.resolve()?,
                sentences: a.sentences,
                top_pct: a.top_pct,
                out: a.out,
                table: a.table,
            }),
            Command::Transitions(a) => RunConfig::Transitions(TransitionsRun {
                source: a.source.resolve()?,
                sentences: a.sentences,
                pivot: a.pivot,
                marginal_median: a.marginal_median,
                out: a.out,
                summary: a.summary,
            }),
            Command::Generate(a) => {
                let mut generation: GenerationConfig = load_base(a.config.as_deref())?;
                set(&mut generation.alpha, a.alpha);
                set(&mut generation.tail, a.tail);
                a.decoder.apply(&mut generation);
                set(&mut generation.max_tokens, a.max_tokens);
                set(&mut generation.n_samples, a.n_samples);
                set(&mut generation.seed, a.seed);
                RunConfig::Generate(GenerateRun {
                    head: a.head,
                    model: a.model,
                    prompt: a.prompt,
                    generation,
                    out: a.out,
                })
            }
            Command::InferAlpha(a) => {
                let mut grid = AlphaGrid::default();
                a.grid.apply(&mut grid);
                let mut g = GenerationConfig::default();
                a.decoder.apply(&mut g);
                let mut replay = ReplayConfig::from_generation(&g);
                set(&mut replay.weight_floor, a.weight_floor);
                RunConfig::InferAlpha(InferRun {
                    head: a.head,
                    model: a.model,
                    sentences: a.sentences,
                    grid,
                    replay,
                    out: a.out,
                    summary: a.summary,
                })
            }
            Command::Recover(a) => {
                let mut recovery: RecoveryConfig = load_base(a.config.as_deref())?;
                a.grid.apply(&mut recovery.grid);
                a.decoder.apply(&mut recovery.generation);
                set(&mut recovery.generation.max_tokens, a.max_tokens);
                let floor = recovery.replay.weight_floor;
                recovery.replay = ReplayConfig {
                    weight_floor: floor,
                    ..ReplayConfig::from_generation(&recovery.generation)
                };
                set(&mut recovery.sizes, a.sizes);
                set(&mut recovery.simulations, a.simulations);
                set(&mut recovery.pool_size, a.pool_size);
                set(&mut recovery.seed, a.seed);
                RunConfig::Recover(RecoverRun {
                    head: a.head,
                    model: a.model,
                    recovery,
                    out: a.out,
                    estimates: a.estimates,
                })
            }
        })
    }
}
