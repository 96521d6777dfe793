//! Execution of resolved run configurations.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use qaff_core::analyze::{pivot_calibration, scan_peaks, summarize_transitions, transitions, Trajectory};
use qaff_core::calib::{global_calibration, prefix_compare, CalibrationCurve};
use qaff_core::corpus::{
    read_interchange, reference_grammar, reference_lexicon, write_interchange, GrammarOracle, InterchangeHeader,
    ScoredExample, TokenSequence, VALENCE,
};
use qaff_core::embed::ModelBundle;
use qaff_core::generate::{generate_batch, GenerationRecord};
use qaff_core::inferalpha::{fit_sentences, fit_source, recovery_experiment};
use qaff_core::quantile::{train, FeaturizedHead, QuantileForecaster, QuantileHead, QuantileSet};
use qaff_core::stats::percentile;
use qaff_core::testbed::Testbed;
use serde::Serialize;
use serde_json::json;

use crate::config::*;
use crate::Usage;

pub fn execute(config: &RunConfig) -> Result<()> {
    match config {
        RunConfig::Synth(r) => synth(r),
        RunConfig::Train(r) => train_head(r),
        RunConfig::Calibrate(r) => calibrate(r),
        RunConfig::Predict(r) => predict(r),
        RunConfig::ScanVariance(r) => scan(r),
        RunConfig::Transitions(r) => pivot_transitions(r),
        RunConfig::Generate(r) => generate(r),
        RunConfig::InferAlpha(r) => infer_alpha(r),
        RunConfig::Recover(r) => recover(r),
    }
}

/// A loaded forecaster source.
enum Loaded {
    Head {
        head: QuantileHead,
        bundle: Option<ModelBundle>,
    },
    Oracle(GrammarOracle),
}

impl Loaded {
    fn open(source: &Source) -> Result<Self> {
        Ok(match source {
            Source::Head { head, model } => Loaded::Head {
                head: QuantileHead::load(head).with_context(|| format!("loading head {}", head.display()))?,
                bundle: model
                    .as_ref()
                    .map(|m| ModelBundle::load(m).with_context(|| format!("loading model {}", m.display())))
                    .transpose()?,
            },
            Source::Oracle { grammar } => {
                Loaded::Oracle(GrammarOracle::new(&reference_grammar(grammar)?, &reference_lexicon()))
            }
        })
    }

    fn forecaster(&self) -> Result<Box<dyn QuantileForecaster + '_>> {
        Ok(match self {
            Loaded::Head { head, bundle: Some(b) } => Box::new(FeaturizedHead::new(head, &b.featurizer)?),
            Loaded::Head { bundle: None, .. } => {
                return Err(Usage("reading raw text with a head needs --model".into()).into());
            }
            Loaded::Oracle(o) => Box::new(o),
        })
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn read_examples(path: &Path) -> Result<Vec<ScoredExample>> {
    read_interchange(path)
        .with_context(|| format!("reading {}", path.display()))?
        .collect::<qaff_core::Result<Vec<_>>>()
        .with_context(|| format!("reading {}", path.display()))
}

/// One sentence per line, optionally prefixed by `score<TAB>`.
fn read_sentences(path: &Path) -> Result<Vec<(Vec<String>, Option<f64>)>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (score, text) = match line.split_once('\t') {
            Some((s, t)) => {
                let y: f64 = s
                    .trim()
                    .parse()
                    .with_context(|| format!("{}:{}: bad score {s:?}", path.display(), i + 1))?;
                (Some(y), t)
            }
            None => (None, line.as_str()),
        };
        let seq = TokenSequence::from_text(text).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        out.push((seq.tokens().to_vec(), score));
    }
    if out.is_empty() {
        bail!("{} contains no sentences", path.display());
    }
    Ok(out)
}

fn synth(r: &SynthRun) -> Result<()> {
    let tb = Testbed::new(r.testbed.clone())?;
    let examples = tb.examples(r.split.into(), r.n)?;
    let header = InterchangeHeader::new(tb.featurizer().output_dim(), vec![VALENCE.to_string()]);
    if let Some(dir) = r.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_interchange(&header, &examples, &r.out)?;
    if let Some(m) = &r.model {
        tb.bundle.save(m)?;
    }
    if let Some(t) = &r.text {
        let mut w = create(t)?;
        for ex in &examples {
            writeln!(w, "{}\t{}", ex.score(VALENCE)?, ex.seq.text())?;
        }
    }
    eprintln!("wrote {} examples to {}", examples.len(), r.out.display());
    Ok(())
}

fn train_head(r: &TrainRun) -> Result<()> {
    let data = read_examples(&r.data)?;
    let report = train(&data, &r.channel, &r.train)?;
    if let Some(dir) = r.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    report.head.save(&r.out)?;
    if let Some(log) = &r.log {
        let mut w = csv_writer(log)?;
        for e in &report.log {
            w.serialize(e)?;
        }
        w.flush()?;
    }
    if let Some(last) = report.log.last() {
        eprintln!("epoch {}: train {:.6} validation {:.6}", last.epoch, last.train_loss, last.val_loss);
    }
    if let Some(msg) = report.diverged {
        bail!("training diverged: {msg} (last finite head saved to {})", r.out.display());
    }
    Ok(())
}

fn calibrate(r: &CalibrateRun) -> Result<()> {
    let data = read_examples(&r.data)?;
    let loaded = Loaded::open(&r.source)?;
    let curve = match (&loaded, r.skip_degenerate) {
        (Loaded::Head { head, .. }, false) => global_calibration(head, &data, &r.channel)?,
        _ => {
            let f = match &loaded {
                Loaded::Head { head, .. } => Box::new(HeadOnFeatures(head)) as Box<dyn Predictor>,
                Loaded::Oracle(o) => Box::new(OracleOnTokens(o)) as Box<dyn Predictor>,
            };
            let mut curve = CalibrationCurve::new(f.levels_of().clone(), qaff_core::corpus::MAX_TOKENS);
            for ex in &data {
                let y = ex.score(&r.channel)?;
                for (p, set) in f.sets(ex)?.iter().enumerate() {
                    let values = set.values();
                    if r.skip_degenerate && values[0] == values[values.len() - 1] {
                        continue;
                    }
                    curve.add(p + 1, set, y);
                }
            }
            curve
        }
    };
    let mut w = create(&r.out)?;
    curve.write_csv(&mut w)?;
    w.flush()?;
    let summary = curve.summary(&r.channel);
    let overall = curve.overall_max_abs_deviation();
    let mut doc = json!({
        "channel": summary.channel,
        "max_abs_dev": summary.max_abs_dev,
        "mean_abs_dev": summary.mean_abs_dev,
        "overall_max_abs_dev": overall,
    });
    if r.prefixes > 0 {
        let f = loaded.forecaster()?;
        let pairs: Vec<(Vec<String>, f64)> = data
            .iter()
            .map(|ex| Ok((ex.tokens().to_vec(), ex.score(&r.channel)?)))
            .collect::<Result<_>>()?;
        let (stats, avg) = prefix_compare(f.as_ref(), &pairs, r.prefixes)?;
        doc["prefix_avg_max_dev"] = json!(avg);
        if let Some(path) = &r.prefix_out {
            let mut w = csv_writer(path)?;
            let levels = f.levels().values().to_vec();
            let mut header = vec!["prefix".to_string(), "count".into(), "max_deviation".into()];
            header.extend(levels.iter().map(|a| format!("empirical_{a}")));
            header.extend(levels.iter().map(|a| format!("predicted_{a}")));
            w.write_record(&header)?;
            for s in &stats {
                let mut row = vec![s.prefix.join(" "), s.count.to_string(), s.max_deviation.to_string()];
                row.extend(s.empirical.iter().map(f64::to_string));
                row.extend(s.predicted.values().iter().map(f64::to_string));
                w.write_record(&row)?;
            }
            w.flush()?;
        }
    }
    if let Some(path) = &r.summary {
        write_json(path, &doc)?;
    }
    println!("{}", serde_json::to_string(&doc)?);
    Ok(())
}

/// Per-position quantile sets of a validation example.
trait Predictor {
    fn levels_of(&self) -> &qaff_core::quantile::QuantileLevels;
    fn sets(&self, ex: &ScoredExample) -> Result<Vec<QuantileSet>>;
}

struct HeadOnFeatures<'a>(&'a QuantileHead);

impl Predictor for HeadOnFeatures<'_> {
    fn levels_of(&self) -> &qaff_core::quantile::QuantileLevels {
        self.0.levels()
    }

    fn sets(&self, ex: &ScoredExample) -> Result<Vec<QuantileSet>> {
        Ok(self.0.predict(&ex.features)?)
    }
}

struct OracleOnTokens<'a>(&'a GrammarOracle);

impl Predictor for OracleOnTokens<'_> {
    fn levels_of(&self) -> &qaff_core::quantile::QuantileLevels {
        self.0.levels()
    }

    fn sets(&self, ex: &ScoredExample) -> Result<Vec<QuantileSet>> {
        Ok(self.0.trajectory(ex.tokens())?)
    }
}

fn predict(r: &PredictRun) -> Result<()> {
    let loaded = Loaded::open(&r.source)?;
    let f = loaded.forecaster()?;
    let tokens = TokenSequence::from_text(&r.text)?.tokens().to_vec();
    let sets = f.trajectory(&tokens)?;
    let sink: Box<dyn Write> = match &r.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["position".to_string(), "token".into()];
    header.extend(f.levels().values().iter().map(|a| format!("q{a}")));
    header.extend(["median".to_string(), "iqr".into()]);
    w.write_record(&header)?;
    for (p, (tok, set)) in tokens.iter().zip(&sets).enumerate() {
        let mut row = vec![(p + 1).to_string(), tok.clone()];
        row.extend(set.values().iter().map(f64::to_string));
        row.extend([set.median().to_string(), set.iqr().to_string()]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn trajectories(f: &dyn QuantileForecaster, sentences: Vec<(Vec<String>, Option<f64>)>) -> Result<Vec<Trajectory>> {
    use rayon::prelude::*;
    sentences
        .into_par_iter()
        .map(|(tokens, score)| Ok(Trajectory::predict(f, tokens, score)?))
        .collect()
}

fn scan(r: &ScanRun) -> Result<()> {
    let loaded = Loaded::open(&r.source)?;
    let f = loaded.forecaster()?;
    let trajs = trajectories(f.as_ref(), read_sentences(&r.sentences)?)?;
    let result = scan_peaks(&trajs, r.top_pct)?;
    let mut w = csv_writer(&r.out)?;
    w.write_record(["sentence", "position", "token", "value", "preceding"])?;
    for pk in &result.peaks {
        w.write_record([
            pk.sentence.to_string(),
            pk.position.to_string(),
            pk.token.clone(),
            pk.value.to_string(),
            pk.preceding.join(" "),
        ])?;
    }
    w.flush()?;
    if let Some(path) = &r.table {
        let mut w = csv_writer(path)?;
        for row in &result.table {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    println!(
        "{}",
        json!({"threshold": result.threshold, "peaks": result.peaks.len(), "sentences": trajs.len()})
    );
    Ok(())
}

fn pivot_transitions(r: &TransitionsRun) -> Result<()> {
    if r.pivot.is_empty() {
        return Err(Usage("pivot must be nonempty".into()).into());
    }
    let loaded = Loaded::open(&r.source)?;
    let f = loaded.forecaster()?;
    let sentences = read_sentences(&r.sentences)?;
    let marginal = match r.marginal_median {
        Some(m) => m,
        None => {
            let scores: Vec<f64> = sentences.iter().filter_map(|s| s.1).collect();
            if scores.is_empty() {
                return Err(Usage("sentences carry no scores; pass --marginal-median".into()).into());
            }
            percentile(&scores, 50.0)
        }
    };
    let trajs = trajectories(f.as_ref(), sentences)?;
    let ts = transitions(&trajs, &r.pivot, marginal);
    let mut w = csv_writer(&r.out)?;
    for t in &ts {
        w.serialize(t)?;
    }
    w.flush()?;
    let summary = summarize_transitions(&ts);
    let pivot_dev = pivot_calibration(&trajs, &r.pivot)
        .filter(|c| c.count(1) > 0)
        .map(|c| c.max_abs_deviation());
    let doc = json!({
        "pivot": r.pivot,
        "marginal_median": marginal,
        "count": summary.count,
        "flipped": summary.flipped,
        "mean_before": summary.mean_before,
        "mean_at": summary.mean_at,
        "mean_gap": summary.mean_at - summary.mean_before,
        "pivot_calibration_max_abs_dev": pivot_dev,
    });
    if let Some(path) = &r.summary {
        write_json(path, &doc)?;
    }
    println!("{}", serde_json::to_string(&doc)?);
    Ok(())
}

fn head_and_model(head: &Path, model: &Path) -> Result<(QuantileHead, ModelBundle)> {
    Ok((
        QuantileHead::load(head).with_context(|| format!("loading head {}", head.display()))?,
        ModelBundle::load(model).with_context(|| format!("loading model {}", model.display()))?,
    ))
}

fn generate(r: &GenerateRun) -> Result<()> {
    r.generation.validate()?;
    let (head, bundle) = head_and_model(&r.head, &r.model)?;
    let f = FeaturizedHead::new(&head, &bundle.featurizer)?;
    let prompt = TokenSequence::from_text(&r.prompt)?.tokens().to_vec();
    let out = generate_batch(&bundle.lm, &f, &prompt, &r.generation)?;
    let scorer = reference_lexicon();
    let mut w = create(&r.out)?;
    for g in &out {
        let score = scorer.score(&g.full_tokens());
        let record = GenerationRecord::new(g, &r.generation, Some(score));
        serde_json::to_writer(&mut w, &record)?;
        writeln!(w)?;
    }
    w.flush()?;
    eprintln!("wrote {} samples to {}", out.len(), r.out.display());
    Ok(())
}

fn infer_alpha(r: &InferRun) -> Result<()> {
    let (head, bundle) = head_and_model(&r.head, &r.model)?;
    let f = FeaturizedHead::new(&head, &bundle.featurizer)?;
    let sentences: Vec<Vec<String>> = read_sentences(&r.sentences)?.into_iter().map(|s| s.0).collect();
    let fits = fit_sentences(&bundle.lm, &f, &sentences, &r.grid, &r.replay)?;
    let mut w = csv_writer(&r.out)?;
    let candidates = r.grid.candidates();
    let mut header = vec![
        "sentence".to_string(),
        "text".into(),
        "best_alpha".into(),
        "best_tail".into(),
        "reported".into(),
    ];
    header.extend(candidates.iter().map(|c| format!("loglik_{}", c.reported())));
    w.write_record(&header)?;
    for (i, (fit, s)) in fits.iter().zip(&sentences).enumerate() {
        let mut row = vec![
            i.to_string(),
            s.join(" "),
            fit.best.alpha.to_string(),
            fit.best.tail.to_string(),
            fit.best.reported().to_string(),
        ];
        row.extend(fit.logliks.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    let doc = json!({"sentences": fits.len(), "estimate": fit_source(&fits)?});
    if let Some(path) = &r.summary {
        write_json(path, &doc)?;
    }
    println!("{}", serde_json::to_string(&doc)?);
    Ok(())
}

fn recover(r: &RecoverRun) -> Result<()> {
    let (head, bundle) = head_and_model(&r.head, &r.model)?;
    let f = FeaturizedHead::new(&head, &bundle.featurizer)?;
    let report = recovery_experiment(&bundle.lm, &f, &r.recovery)?;
    let mut w = csv_writer(&r.out)?;
    for row in &report.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    if let Some(path) = &r.estimates {
        let mut w = csv_writer(path)?;
        w.write_record(["size", "true", "estimate"])?;
        for (row, pairs) in report.rows.iter().zip(&report.estimates) {
            for (t, e) in pairs {
                w.write_record([row.size.to_string(), t.to_string(), e.to_string()])?;
            }
        }
        w.flush()?;
    }
    for row in &report.rows {
        println!("{}", serde_json::to_string(row)?);
    }
    Ok(())
}
