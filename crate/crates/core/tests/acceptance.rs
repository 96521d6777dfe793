//! End-to-end acceptance run on the synthetic testbed. Prints one PASS/FAIL
//! line per criterion and fails if any criterion fails.
//!
//! Run with `cargo test -p qaff-core --test acceptance -- --nocapture` to
//! see the report.

use std::time::Instant;

use qaff_core::analyze::{pivot_calibration, scan_peaks, transitions, Trajectory};
use qaff_core::calib::{frequent_prefixes, global_calibration, reference_compare};
use qaff_core::corpus::{reference_grammar, sample_sentences, SynthOptions, INTENSIFIERS, PIVOT, VALENCE};
use qaff_core::generate::{generate_batch, sample_baseline, sample_sentence, GenerationConfig};
use qaff_core::inferalpha::{recovery_experiment, RecoveryConfig};
use qaff_core::quantile::{minimize_free_quantiles, train, FeaturizedHead, Method, QuantileHead, QuantileLevels, TrainConfig};
use qaff_core::stats::mann_whitney_less;
use qaff_core::testbed::{Split, Testbed, TestbedConfig};
use qaff_core::corpus::FeatureMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Share of intensifier sentences in the training streams. The scan corpus
/// keeps the default, much lower rate.
const TRAIN_INTENSIFIER_RATE: f64 = 0.05;
const N_TRAIN: usize = 10_000;
const N_VALIDATION: usize = 5_000;
const N_TRAIN_DOWNSTREAM: usize = 40_000;
const N_EVALUATION: usize = 5_000;

fn train_config(method: Method) -> TrainConfig {
    TrainConfig {
        method,
        learning_rate: 1e-3,
        epochs: 30,
        seed: 1,
        ..Default::default()
    }
}

#[derive(Default)]
struct Report {
    results: Vec<(String, bool)>,
}

impl Report {
    fn record(&mut self, name: &str, pass: bool, detail: String, started: Instant) {
        let tag = if pass { "PASS" } else { "FAIL" };
        emit(format!("{tag} {name}: {detail} [{:.1}s]", started.elapsed().as_secs_f64()));
        self.results.push((name.to_string(), pass));
    }
}

fn pinball_oracle(report: &mut Report) {
    let t = Instant::now();
    let levels = QuantileLevels::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=50);
        let mut ys: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let q = minimize_free_quantiles(&ys, levels.values(), 0.001);
        ys.sort_by(f64::total_cmp);
        for (&a, &qa) in levels.values().iter().zip(&q) {
            // Minimizers of the pinball loss: the ceil(n a)-th order
            // statistic, or the interval between two order statistics when
            // n a is an integer.
            let na = n as f64 * a;
            let m = na.round();
            let (lo, hi) = if (na - m).abs() < 1e-9 {
                let m = m as usize;
                (ys[m - 1], ys[m.min(n - 1)])
            } else {
                let c = na.ceil() as usize;
                (ys[c - 1], ys[c - 1])
            };
            worst = worst.max((lo - qa).max(qa - hi).max(0.0));
        }
    }
    report.record("pinball oracle", worst <= 0.01, format!("max distance {worst:.2e} (tol 0.01)"), t);
}

fn gradient_check(report: &mut Report) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    let h = 1e-5;
    for ex in 0..20u64 {
        let rows = rng.random_range(1..=8);
        let dim = 128;
        let data: Vec<f32> = (0..rows * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let x = FeatureMatrix::new(rows, dim, data).unwrap();
        let y: f64 = rng.random_range(-0.95..0.95);
        let mut head = QuantileHead::new(dim, 100, QuantileLevels::standard(), VALENCE, ex);
        let (_, grad) = head.loss_and_grad(&x, y, 0.001).unwrap();
        let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let n = head.param_count();
        let picks: Vec<usize> = (0..300).map(|_| rng.random_range(0..n)).chain(n - 1010..n).collect();
        for i in picks {
            let orig = head.params()[i];
            head.params_mut()[i] = orig + h;
            let up = head.loss(&x, y, 0.001).unwrap();
            head.params_mut()[i] = orig - h;
            let down = head.loss(&x, y, 0.001).unwrap();
            head.params_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max((numeric - grad[i]).abs() / scale.max(1e-12));
        }
    }
    report.record(
        "gradient check",
        worst < 1e-4,
        format!("max relative error {worst:.2e} over 20 examples (tol 1e-4)"),
        t,
    );
}

#[test]
fn acceptance() {
    let mut report = Report::default();
    pinball_oracle(&mut report);
    gradient_check(&mut report);

    let t = Instant::now();
    let tb = Testbed::new(TestbedConfig {
        synth: SynthOptions {
            intensifier_rate: TRAIN_INTENSIFIER_RATE,
            ..Default::default()
        },
        ..Default::default()
    })
    .unwrap();
    let train_set = tb.examples(Split::Train, N_TRAIN).unwrap();
    let validation = tb.examples(Split::Validation, N_VALIDATION).unwrap();
    emit(format!("testbed ready [{:.1}s]", t.elapsed().as_secs_f64()));

    let t = Instant::now();
    let mc = train(&train_set, VALENCE, &train_config(Method::Mc)).unwrap();
    assert!(mc.diverged.is_none());
    let mc_dev = global_calibration(&mc.head, &validation, VALENCE).unwrap().max_abs_deviation();
    report.record(
        "calibration",
        mc_dev <= 0.05,
        format!("MC max abs deviation {:.2}% on {N_TRAIN}/{N_VALIDATION} (tol 5%)", 100.0 * mc_dev),
        t,
    );

    let t = Instant::now();
    let td = train(&train_set, VALENCE, &train_config(Method::Td0)).unwrap();
    assert!(td.diverged.is_none());
    let td_dev = global_calibration(&td.head, &validation, VALENCE).unwrap().max_abs_deviation();
    report.record(
        "MC vs TD(0)",
        mc_dev <= td_dev + 0.005,
        format!("MC {:.2}% vs TD(0) {:.2}% (MC must not exceed TD(0) + 0.5%)", 100.0 * mc_dev, 100.0 * td_dev),
        t,
    );
    drop(train_set);

    let t = Instant::now();
    let downstream_set = tb.examples(Split::Train, N_TRAIN_DOWNSTREAM).unwrap();
    let downstream = train(&downstream_set, VALENCE, &train_config(Method::Mc)).unwrap();
    assert!(downstream.diverged.is_none());
    drop(downstream_set);
    emit(format!("downstream head trained on {N_TRAIN_DOWNSTREAM} sentences [{:.1}s]", t.elapsed().as_secs_f64()));
    let head = FeaturizedHead::new(&downstream.head, tb.featurizer()).unwrap();
    let oracle = tb.oracle();
    let lm = tb.lm();

    let t = Instant::now();
    let val_pairs = tb.scored_tokens(Split::Validation, N_VALIDATION);
    let prefixes: Vec<Vec<String>> = frequent_prefixes(&val_pairs, 50).into_iter().map(|p| p.0).collect();
    let (_, avg) = reference_compare(&head, &oracle, &prefixes).unwrap();
    report.record(
        "prefix match",
        prefixes.len() == 50 && avg <= 0.15,
        format!("average max deviation {avg:.3} on {} prefixes (tol 0.15)", prefixes.len()),
        t,
    );

    let t = Instant::now();
    let prompt = vec!["well".to_string()];
    let n = 200;
    let score = |toks: &[String]| tb.scorer.score(toks);
    let unbiased: Vec<f64> = (0..n as u64)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(5000 + i);
            let (toks, _) = sample_baseline(lm, &prompt, &GenerationConfig::default(), &mut rng).unwrap();
            score(&[prompt.clone(), toks].concat())
        })
        .collect();
    let mut details = Vec::new();
    let mut pass = true;
    for alpha in [0.25, 0.05] {
        let cfg = GenerationConfig {
            alpha,
            n_samples: n,
            seed: 5000,
            ..Default::default()
        };
        let generated = generate_batch(lm, &head, &prompt, &cfg).unwrap();
        let target = generated[0].target.unwrap();
        let scores: Vec<f64> = generated.iter().map(|g| score(&g.full_tokens())).collect();
        let below = scores.iter().filter(|&&s| s < target).count() as f64 / n as f64;
        let p = mann_whitney_less(&scores, &unbiased).p_less;
        pass &= below >= 0.7 && p < 0.01;
        details.push(format!("alpha {alpha}: {:.1}% below {target:.3}, p {p:.1e}", 100.0 * below));
    }
    report.record("generation targeting", pass, format!("{} (tol 70%, p < 0.01)", details.join("; ")), t);

    let t = Instant::now();
    let cfg = GenerationConfig::default();
    let identical = (0..n as u64).all(|i| {
        let mut a = ChaCha8Rng::seed_from_u64(i);
        let mut b = ChaCha8Rng::seed_from_u64(i);
        let biased = sample_sentence(lm, &head, &prompt, &cfg, &mut a).unwrap();
        let (base, terminated) = sample_baseline(lm, &prompt, &cfg, &mut b).unwrap();
        biased.tokens == base && biased.terminated == terminated
    });
    report.record("alpha=1 identity", identical, format!("{n} seeds compared token by token"), t);

    let t = Instant::now();
    let rc = RecoveryConfig {
        sizes: vec![50, 100],
        simulations: 20,
        pool_size: 200,
        seed: 17,
        ..Default::default()
    };
    let rec = recovery_experiment(lm, &head, &rc).unwrap();
    let (at50, at100) = (&rec.rows[0], &rec.rows[1]);
    report.record(
        "recovery",
        at100.pearson >= 0.9 && at50.accuracy >= 0.7,
        format!(
            "Pearson {:.3} at 100 sentences (tol 0.9), accuracy {:.2} at 50 (tol 0.7)",
            at100.pearson, at50.accuracy
        ),
        t,
    );

    let t = Instant::now();
    let eval_pairs = tb.scored_tokens(Split::Evaluation, N_EVALUATION);
    let trajs: Vec<Trajectory> = eval_pairs
        .iter()
        .map(|(toks, y)| Trajectory::predict(&head, toks.clone(), Some(*y)).unwrap())
        .collect();
    let marginal = oracle.end_distribution::<&str>(&[]).unwrap().quantile(0.5);
    let positive: Vec<_> = transitions(&trajs, PIVOT, marginal)
        .into_iter()
        .filter(|tr| tb.scorer.total_ticks(&trajs[tr.sentence].tokens[..tr.position]) > 0)
        .collect();
    let dropped = positive.iter().filter(|tr| tr.at < tr.before).count() as f64 / positive.len().max(1) as f64;
    let pivot_dev = pivot_calibration(&trajs, PIVOT).unwrap().max_abs_deviation();
    report.record(
        "reversal",
        !positive.is_empty() && dropped >= 0.9 && pivot_dev <= 0.05,
        format!(
            "{:.1}% of {} positive-prefix pivots drop (tol 90%), pivot calibration {:.2}% (tol 5%)",
            100.0 * dropped,
            positive.len(),
            100.0 * pivot_dev
        ),
        t,
    );

    let t = Instant::now();
    let rare = reference_grammar(&SynthOptions::default()).unwrap();
    let scan_trajs: Vec<Trajectory> = sample_sentences(&rare, N_EVALUATION, tb.seed_for(Split::Evaluation))
        .into_iter()
        .map(|s| Trajectory::predict(&head, s.tokens().to_vec(), None).unwrap())
        .collect();
    let scan = scan_peaks(&scan_trajs, 1.0).unwrap();
    let mut planted = 0;
    let mut flagged = 0;
    for (s, tr) in scan_trajs.iter().enumerate() {
        for (p, tok) in tr.tokens.iter().enumerate() {
            if INTENSIFIERS.contains(&tok.as_str()) {
                planted += 1;
                flagged += scan.peaks.iter().any(|pk| pk.sentence == s && pk.position == p) as usize;
            }
        }
    }
    let share = flagged as f64 / planted.max(1) as f64;
    report.record(
        "intensifier detection",
        planted > 0 && share >= 0.8,
        format!("{flagged}/{planted} planted intensifiers flagged at top_pct=1 (tol 80%)"),
        t,
    );

    let failed: Vec<&str> = report.results.iter().filter(|r| !r.1).map(|r| r.0.as_str()).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

/// Writes past the test harness's output capture so the report shows up in
/// plain `cargo test` runs.
fn emit(line: String) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}
