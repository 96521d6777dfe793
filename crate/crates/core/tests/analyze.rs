use qaff_core::analyze::{local_peaks, scan_peaks, summarize_transitions, transitions, variance_series, Trajectory};
use qaff_core::corpus::{reference_grammar, reference_lexicon, sample_sentences, GrammarOracle, ScoreRange, SynthOptions};
use qaff_core::quantile::{QuantileForecaster, QuantileLevels, QuantileSet};

mod common;
use common::words;

fn oracle() -> GrammarOracle {
    GrammarOracle::new(&reference_grammar(&SynthOptions::default()).unwrap(), &reference_lexicon())
}

fn set(values: Vec<f64>) -> QuantileSet {
    QuantileSet::new(QuantileLevels::standard(), values, ScoreRange::SIGNED)
}

#[test]
fn trivial_series() {
    assert!(local_peaks(&[0.3; 6]).is_empty());
    assert_eq!(local_peaks(&[0.1, 0.9, 0.1]), vec![1]);
    assert_eq!(variance_series(&[set(vec![0.2; 10])]), vec![0.0]);
    let linear = set(QuantileLevels::standard().values().to_vec());
    assert!((variance_series(&[linear])[0] - 0.5).abs() < 1e-12);
}

#[test]
fn oracle_widens_at_the_intensifier() {
    let oracle = oracle();
    for prefix in ["well today I am so", "oh warmly this is so", "sigh grimly life is so"] {
        let v = variance_series(&oracle.trajectory(&words(prefix)).unwrap());
        let n = v.len();
        assert!(v[n - 1] > v[n - 2], "{prefix}: {v:?}");
    }
}

#[test]
fn oracle_scan_finds_planted_intensifiers() {
    let g = reference_grammar(&SynthOptions::default()).unwrap();
    let oracle = oracle();
    let trajs: Vec<Trajectory> = sample_sentences(&g, 5000, 31)
        .into_iter()
        .map(|s| Trajectory::predict(&oracle, s.tokens().to_vec(), None).unwrap())
        .collect();
    let scan = scan_peaks(&trajs, 1.0).unwrap();
    let intensifiers = ["so", "really", "extremely", "incredibly"];
    let (mut planted, mut found) = (0, 0);
    for (s, tr) in trajs.iter().enumerate() {
        for (p, tok) in tr.tokens.iter().enumerate() {
            if intensifiers.contains(&tok.as_str()) {
                planted += 1;
                found += scan.peaks.iter().any(|pk| pk.sentence == s && pk.position == p) as usize;
            }
        }
    }
    assert!(planted >= 10, "{planted}");
    assert!(found as f64 >= 0.8 * planted as f64, "{found}/{planted}");
    for pk in &scan.peaks {
        let v = trajs[pk.sentence].variance_series();
        assert!(v[pk.position] > v[pk.position - 1] && v[pk.position] > v[pk.position + 1]);
    }
}

#[test]
fn oracle_median_reverses_at_but() {
    let g = reference_grammar(&SynthOptions::default()).unwrap();
    let oracle = oracle();
    let trajs: Vec<Trajectory> = sample_sentences(&g, 3000, 32)
        .into_iter()
        .filter(|s| s.tokens().iter().any(|t| t == "but"))
        .map(|s| Trajectory::predict(&oracle, s.tokens().to_vec(), None).unwrap())
        .collect();
    let marginal = oracle.end_distribution::<&str>(&[]).unwrap().quantile(0.5);
    let positive: Vec<_> = transitions(&trajs, "but", marginal).into_iter().filter(|t| t.before > 0.0).collect();
    assert!(positive.len() > 100);
    let dropped = positive.iter().filter(|t| t.at < t.before).count();
    assert!(dropped as f64 >= 0.9 * positive.len() as f64, "{dropped}/{}", positive.len());
}

#[test]
fn pivot_free_sentences_contribute_nothing() {
    let flat = |w: &str| Trajectory::new(words(w), vec![set(vec![0.1; 10]); words(w).len()], None).unwrap();
    let trajs = vec![flat("it is fine ."), flat("but it is fine .")];
    let t = transitions(&trajs, "but", -0.25);
    assert_eq!(t.len(), 1);
    assert_eq!((t[0].sentence, t[0].position, t[0].before), (1, 0, -0.25));
    assert_eq!(summarize_transitions(&t).count, 1);
    assert!(transitions(&trajs[..1], "but", 0.0).is_empty());
}
