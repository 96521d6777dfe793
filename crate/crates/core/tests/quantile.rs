use std::sync::OnceLock;

use qaff_core::corpus::{
    sample_sentences, FeatureMatrix, GrammarBuilder, GrammarOracle, LexiconScorer, ScoredExample, SynthOptions,
    TokenSequence, VALENCE,
};
use qaff_core::embed::{ContextFeaturizer, Vocabulary};
use qaff_core::quantile::{train, FeaturizedHead, Method, QuantileForecaster, QuantileHead, TrainConfig};
use qaff_core::testbed::{Split, Testbed, TestbedConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise_examples(n: usize, channel: &str, mut score: impl FnMut(&mut ChaCha8Rng) -> f64) -> Vec<ScoredExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    (0..n)
        .map(|_| {
            let rows = rng.random_range(1..4);
            let data = (0..rows * 8).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect();
            let tokens: Vec<String> = (0..rows).map(|i| format!("t{i}")).collect();
            let y = score(&mut rng);
            ScoredExample::new(
                TokenSequence::new(tokens, 8).unwrap(),
                FeatureMatrix::new(rows, 8, data).unwrap(),
                [(channel.to_string(), y)].into(),
            )
            .unwrap()
        })
        .collect()
}

fn fast(method: Method, epochs: usize) -> TrainConfig {
    TrainConfig {
        method,
        epochs,
        learning_rate: 1e-2,
        hidden: 16,
        plateau_tolerance: 0.0,
        ..TrainConfig::default()
    }
}

#[test]
fn constant_score_head_converges_to_the_constant() {
    let data = noise_examples(400, VALENCE, |_| 0.3);
    let head = train(&data, VALENCE, &fast(Method::Mc, 30)).unwrap().head;
    for ex in data.iter().take(50) {
        for set in head.predict(&ex.features).unwrap() {
            for &q in set.values() {
                assert!((q - 0.3).abs() <= 0.01, "{q}");
            }
        }
    }
}

#[test]
fn bernoulli_scores_split_the_levels_at_one_half() {
    let data = noise_examples(1000, "joy", |rng| if rng.random::<bool>() { 1.0 } else { 0.0 });
    let head = train(&data, "joy", &fast(Method::Mc, 40)).unwrap().head;
    for ex in data.iter().take(20) {
        for set in head.predict(&ex.features).unwrap() {
            for (&a, &q) in set.levels().values().iter().zip(set.values()) {
                let expected = if a < 0.5 { 0.0 } else { 1.0 };
                assert!((q - expected).abs() <= 0.05, "level {a}: {q}");
            }
        }
    }
}

struct Toy {
    featurizer: ContextFeaturizer,
    examples: Vec<ScoredExample>,
    oracle: GrammarOracle,
}

fn toy(grammar: GrammarBuilder, scorer: LexiconScorer, n: usize) -> Toy {
    let g = grammar.build(8, 0).unwrap();
    let featurizer = ContextFeaturizer::new(Vocabulary::new(g.vocabulary()), 16, 3, 2).unwrap();
    let examples = sample_sentences(&g, n, 1)
        .into_iter()
        .map(|seq| {
            let features = featurizer.featurize(seq.tokens());
            let y = scorer.score(seq.tokens());
            ScoredExample::new(seq, features, [(VALENCE.to_string(), y)].into()).unwrap()
        })
        .collect();
    Toy {
        featurizer,
        examples,
        oracle: GrammarOracle::new(&g, &scorer),
    }
}

fn max_gap(head: &QuantileHead, toy: &Toy, tokens: &[String]) -> f64 {
    let f = FeaturizedHead::new(head, &toy.featurizer).unwrap();
    let learned = f.trajectory(tokens).unwrap();
    let exact = toy.oracle.trajectory(tokens).unwrap();
    learned
        .iter()
        .zip(&exact)
        .flat_map(|(a, b)| a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn td0_reaches_the_fixed_point_of_a_deterministic_grammar() {
    let toy = toy(
        GrammarBuilder::new("S").rule("S", 1.0, "we are fine .").rule("S", 1.0, "they were bad ."),
        LexiconScorer::new(0.25, None).with_word("fine", 2).with_word("bad", -1),
        400,
    );
    let head = train(&toy.examples, VALENCE, &fast(Method::Td0, 60)).unwrap().head;
    for s in ["we are fine .", "they were bad ."] {
        let tokens: Vec<String> = s.split(' ').map(String::from).collect();
        assert!(max_gap(&head, &toy, &tokens) <= 0.02, "{s}");
    }
}

#[test]
fn td0_and_mc_agree_on_a_two_branch_grammar() {
    let toy = toy(
        GrammarBuilder::new("S").rule("S", 1.0, "it was ADJ .").words("ADJ", &["good", "bad"]),
        LexiconScorer::new(0.25, None).with_word("good", 2).with_word("bad", -2),
        600,
    );
    let mc = train(&toy.examples, VALENCE, &fast(Method::Mc, 40)).unwrap().head;
    let td = train(&toy.examples, VALENCE, &fast(Method::Td0, 40)).unwrap().head;
    let tokens: Vec<String> = ["it", "was", "good", "."].iter().map(|s| s.to_string()).collect();
    let fm = FeaturizedHead::new(&mc, &toy.featurizer).unwrap();
    let ft = FeaturizedHead::new(&td, &toy.featurizer).unwrap();
    let (a, b) = (fm.trajectory(&tokens).unwrap(), ft.trajectory(&tokens).unwrap());
    for (x, y) in a.iter().zip(&b) {
        for (p, q) in x.values().iter().zip(y.values()) {
            assert!((p - q).abs() <= 0.1, "{p} vs {q}");
        }
    }
    assert!(max_gap(&mc, &toy, &tokens) <= 0.1);
}

#[test]
fn width_collapses_at_the_deciding_final_token() {
    let toy = toy(
        GrammarBuilder::new("S").rule("S", 1.0, "it was so ADJ").words("ADJ", &["good", "bad", "fine", "awful"]),
        LexiconScorer::new(0.25, None)
            .with_word("good", 2)
            .with_word("bad", -2)
            .with_word("fine", 1)
            .with_word("awful", -3),
        800,
    );
    let head = train(&toy.examples, VALENCE, &fast(Method::Mc, 40)).unwrap().head;
    let f = FeaturizedHead::new(&head, &toy.featurizer).unwrap();
    for last in ["good", "bad", "fine", "awful"] {
        let tokens: Vec<String> = ["it", "was", "so", last].iter().map(|s| s.to_string()).collect();
        let sets = f.trajectory(&tokens).unwrap();
        assert!(sets[2].iqr() > 0.3, "{}", sets[2].iqr());
        assert!(sets[3].iqr() < 0.02, "{last}: {}", sets[3].iqr());
    }
}

struct Trained {
    tb: Testbed,
    head: QuantileHead,
}

fn intensifier_head() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let tb = Testbed::new(TestbedConfig {
            synth: SynthOptions {
                intensifier_rate: 0.8,
                ..SynthOptions::default()
            },
            ..TestbedConfig::default()
        })
        .unwrap();
        let data = tb.examples(Split::Train, 10_000).unwrap();
        let config = TrainConfig {
            learning_rate: 1e-3,
            epochs: 30,
            seed: 1,
            ..TrainConfig::default()
        };
        let head = train(&data, VALENCE, &config).unwrap().head;
        Trained { tb, head }
    })
}

#[test]
fn head_after_so_tracks_the_bimodal_oracle() {
    let t = intensifier_head();
    let f = FeaturizedHead::new(&t.head, t.tb.featurizer()).unwrap();
    let oracle = t.tb.oracle();
    let mut gaps = Vec::new();
    for seq in t.tb.sentences(Split::Validation, 2000) {
        let tokens = seq.tokens();
        let Some(i) = tokens.iter().position(|w| w == "so") else { continue };
        let learned = f.trajectory(&tokens[..=i]).unwrap();
        let exact = oracle.trajectory(&tokens[..=i]).unwrap();
        let gap = learned[i]
            .values()
            .iter()
            .zip(exact[i].values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        gaps.push(gap);
    }
    assert!(gaps.len() > 50);
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    assert!(mean <= 0.1, "mean max deviation {mean}");
}
