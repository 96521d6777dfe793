use proptest::prelude::*;
use qaff_core::calib::{forecaster_calibration, prefix_compare, CalibrationCurve};
use qaff_core::corpus::{reference_grammar, reference_lexicon, sample_sentences, GrammarOracle, ScoreRange, SynthOptions};
use qaff_core::quantile::{QuantileLevels, QuantileSet};

fn scored(n: usize, seed: u64) -> Vec<(Vec<String>, f64)> {
    let g = reference_grammar(&SynthOptions::default()).unwrap();
    let s = reference_lexicon();
    sample_sentences(&g, n, seed)
        .into_iter()
        .map(|seq| (seq.tokens().to_vec(), s.score(seq.tokens())))
        .collect()
}

fn oracle() -> GrammarOracle {
    GrammarOracle::new(&reference_grammar(&SynthOptions::default()).unwrap(), &reference_lexicon())
}

#[test]
fn oracle_quantiles_are_calibrated_within_binomial_noise() {
    let oracle = oracle();
    let levels = QuantileLevels::standard();
    // With atoms the exact below-fraction of a true quantile is
    // P(y < q) + P(y = q) / 2 rather than the level itself.
    let mut curve = CalibrationCurve::new(levels.clone(), 32);
    let mut expected = vec![0.0; levels.len()];
    let mut variance = vec![0.0; levels.len()];
    let mut kept = 0usize;
    for (tokens, y) in scored(3000, 21) {
        for p in 0..tokens.len() {
            let dist = oracle.end_distribution(&tokens[..=p]).unwrap();
            if dist.max_atom() >= 1.0 - 1e-12 {
                continue;
            }
            let set = dist.quantile_set(&levels, ScoreRange::SIGNED);
            for (i, &q) in set.values().iter().enumerate() {
                let e = dist.cdf_below(q) + 0.5 * dist.mass_at(q);
                expected[i] += e;
                variance[i] += e * (1.0 - e);
            }
            curve.add(p + 1, &set, y);
            kept += 1;
        }
    }
    assert!(kept > 10_000, "{kept} kept positions");
    for (i, &a) in levels.values().iter().enumerate() {
        let observed = curve.overall_fraction(i).unwrap() * kept as f64;
        assert!((observed - expected[i]).abs() <= 3.0 * variance[i].sqrt(), "level {a}: {observed} vs {}", expected[i]);
        assert!((expected[i] / kept as f64 - a).abs() <= 0.1, "level {a}: {}", expected[i] / kept as f64);
    }
}

#[test]
fn median_everywhere_gives_one_half_at_every_level() {
    let validation = scored(5000, 22);
    let marginal = oracle().end_distribution::<&str>(&[]).unwrap();
    let m = marginal.quantile(0.5);
    let expected = marginal.cdf_below(m) + 0.5 * marginal.mass_at(m);
    let levels = QuantileLevels::standard();
    let set = QuantileSet::new(levels.clone(), vec![m; levels.len()], ScoreRange::SIGNED);
    let mut curve = CalibrationCurve::new(levels.clone(), 32);
    for (tokens, y) in &validation {
        curve.add_trajectory(&vec![set.clone(); tokens.len()], *y);
    }
    let sigma = (0.25 / validation.len() as f64).sqrt();
    for i in 0..levels.len() {
        for p in 1..=3 {
            let f = curve.fraction(i, p).unwrap();
            assert!((f - expected).abs() <= 3.0 * sigma, "{f} vs {expected}");
            assert!((f - 0.5).abs() <= 0.05);
        }
    }
}

#[test]
fn empirical_prefix_quantiles_approach_the_oracle() {
    let oracle = oracle();
    let dev = |n| prefix_compare(&oracle, &scored(n, 23), 20).unwrap().1;
    let devs = [dev(500), dev(5000), dev(50_000)];
    assert!(devs[0] > devs[1] && devs[1] > devs[2], "{devs:?}");
    assert!(devs[2] <= 0.1, "{devs:?}");
}

#[test]
fn counts_fall_with_position() {
    let curve = forecaster_calibration(&oracle(), &scored(300, 24)).unwrap();
    for p in 1..32 {
        assert!(curve.count(p + 1) <= curve.count(p));
    }
    for c in curve.cells() {
        assert!((0.0..=1.0).contains(&c.fraction));
    }
}

proptest! {
    #[test]
    fn below_fraction_is_monotone_in_level(
        rows in proptest::collection::vec((proptest::collection::vec(-1.0f64..1.0, 10), -1.0f64..1.0), 1..40)
    ) {
        let levels = QuantileLevels::standard();
        let mut curve = CalibrationCurve::new(levels.clone(), 1);
        for (values, y) in &rows {
            curve.add(1, &QuantileSet::new(levels.clone(), values.clone(), ScoreRange::SIGNED), *y);
        }
        for i in 1..levels.len() {
            prop_assert!(curve.fraction(i, 1).unwrap() >= curve.fraction(i - 1, 1).unwrap());
        }
    }
}
