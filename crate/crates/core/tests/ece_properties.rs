use proptest::prelude::*;
use xlcons::calibration::{compute_ece, parse_reliability_csv, reliability_csv, PredictionRecord};

/// Reference binning: bin `i` (1-based) is the first with `conf <= i/M`.
fn oracle_ece(records: &[PredictionRecord], m: usize) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let mut bins: Vec<Vec<&PredictionRecord>> = vec![Vec::new(); m];
    for r in records {
        let i = (1..=m).find(|&i| r.confidence <= i as f64 / m as f64).unwrap();
        bins[i - 1].push(r);
    }
    let n = records.len() as f64;
    bins.iter()
        .filter(|b| !b.is_empty())
        .map(|b| {
            let k = b.len() as f64;
            let acc = b.iter().filter(|r| r.predicted == r.actual).count() as f64 / k;
            let conf = b.iter().map(|r| r.confidence).sum::<f64>() / k;
            k / n * (acc - conf).abs()
        })
        .sum()
}

fn record(m: usize) -> impl Strategy<Value = PredictionRecord> {
    let confidence = prop_oneof![
        // Exact bin edges i/M.
        (1..=m).prop_map(move |i| i as f64 / m as f64),
        // Just above an edge (including 0).
        (0..m).prop_map(move |i| i as f64 / m as f64 + 1e-15),
        (1e-6f64..=1.0),
    ];
    (confidence, 0usize..3, 0usize..3).prop_map(|(confidence, predicted, actual)| PredictionRecord {
        confidence,
        predicted,
        actual,
    })
}

fn records() -> impl Strategy<Value = (usize, Vec<PredictionRecord>)> {
    (1usize..=25).prop_flat_map(|m| (Just(m), prop::collection::vec(record(m), 0..60)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn matches_brute_force_oracle((m, recs) in records()) {
        let got = compute_ece(&recs, m).unwrap();
        let want = oracle_ece(&recs, m);
        prop_assert!((got.ece - want).abs() <= 1e-12, "{} vs {}", got.ece, want);
        prop_assert_eq!(got.bins.iter().map(|b| b.count).sum::<usize>(), recs.len());
    }

    #[test]
    fn ece_in_unit_interval_and_permutation_invariant((m, recs) in records(), seed in any::<u64>()) {
        let a = compute_ece(&recs, m).unwrap().ece;
        prop_assert!((0.0..=1.0).contains(&a));
        let mut shuffled = recs.clone();
        // Deterministic Fisher-Yates driven by the proptest seed.
        let mut state = seed | 1;
        for i in (1..shuffled.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            shuffled.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let b = compute_ece(&shuffled, m).unwrap().ece;
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn reliability_csv_round_trips((m, recs) in records()) {
        let report = compute_ece(&recs, m).unwrap();
        let bins = parse_reliability_csv(&reliability_csv(&report)).unwrap();
        if recs.is_empty() {
            prop_assert!(bins.is_empty());
        } else {
            prop_assert_eq!(bins, report.bins);
        }
    }
}

#[test]
fn worked_example_is_zero_point_four() {
    let r = |confidence: f64, correct: bool| PredictionRecord {
        confidence,
        predicted: 0,
        actual: usize::from(!correct),
    };
    let recs = [r(0.9, true), r(0.9, false), r(0.6, true), r(0.6, true)];
    assert!((compute_ece(&recs, 20).unwrap().ece - 0.4).abs() < 1e-12);
    assert!((oracle_ece(&recs, 20) - 0.4).abs() < 1e-12);
}
