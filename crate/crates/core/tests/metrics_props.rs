use fedfall_core::eval::{
    compute_metrics, read_predictions, write_predictions, ConfusionCounts, MetricsReport, PredictionRecord,
    ReportHeader, Scenario,
};
use proptest::prelude::*;

fn header() -> ReportHeader {
    ReportHeader {
        scenario: Scenario::EpflSwa,
        seed: 3,
        config_fingerprint: "abc".into(),
        threshold: 0.3,
    }
}

fn records_strategy() -> impl Strategy<Value = Vec<PredictionRecord>> {
    prop::collection::vec((0usize..4, 0u8..2, 0u8..2, 0.0f64..1.0), 1..300).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (c, label, prediction, probability))| PredictionRecord {
                client: format!("{}", (b'A' + c as u8) as char),
                sequence: format!("{}05", (b'A' + c as u8) as char),
                start: i,
                label,
                probability,
                prediction,
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn report_matches_brute_force_recount(records in records_strategy()) {
        let r = MetricsReport::from_predictions(&header(), &records).unwrap();
        let count = |p: u8, l: u8| records.iter().filter(|x| x.prediction == p && x.label == l).count() as f64;
        let (tp, tn, fp, fn_) = (count(1, 1), count(0, 0), count(1, 0), count(0, 1));
        prop_assert_eq!(r.accuracy, (tp + tn) / records.len() as f64);
        if tp + fp > 0.0 { prop_assert_eq!(r.precision, tp / (tp + fp)); } else { prop_assert_eq!(r.precision, 0.0); }
        if tp + fn_ > 0.0 { prop_assert_eq!(r.recall, tp / (tp + fn_)); } else { prop_assert_eq!(r.recall, 0.0); }
        if r.precision + r.recall > 0.0 {
            prop_assert_eq!(r.f1, 2.0 * r.precision * r.recall / (r.precision + r.recall));
        } else {
            prop_assert!(r.degenerate.contains(&"f1".to_string()));
        }
        prop_assert_eq!(r.counts.total() as usize, records.len());
    }

    #[test]
    fn global_recall_is_positive_weighted_client_recall(records in records_strategy()) {
        let r = MetricsReport::from_predictions(&header(), &records).unwrap();
        let positives: u64 = r.per_client.values().map(|c| c.positives).sum();
        prop_assume!(positives > 0);
        let weighted: f64 = r.per_client.values()
            .filter_map(|c| c.recall.map(|v| v * c.positives as f64))
            .sum::<f64>() / positives as f64;
        prop_assert!((weighted - r.recall).abs() < 1e-12);
    }

    #[test]
    fn prediction_files_reproduce_reports(records in records_strategy()) {
        let mut buf = Vec::new();
        write_predictions(&mut buf, &header(), &records).unwrap();
        let (h, back) = read_predictions(buf.as_slice()).unwrap();
        prop_assert_eq!(&h, &header());
        prop_assert_eq!(&back, &records);
        let a = MetricsReport::from_predictions(&header(), &records).unwrap();
        let b = MetricsReport::from_predictions(&h, &back).unwrap();
        prop_assert!(a.same_metrics(&b));
    }
}

#[test]
fn empty_counts_are_rejected() {
    assert!(compute_metrics(&ConfusionCounts::default()).is_err());
}

#[test]
fn client_without_falls_has_undefined_recall() {
    let records = vec![
        PredictionRecord { client: "A".into(), sequence: "A05".into(), start: 0, label: 0, probability: 0.1, prediction: 0 },
        PredictionRecord { client: "B".into(), sequence: "B05".into(), start: 0, label: 1, probability: 0.9, prediction: 1 },
    ];
    let r = MetricsReport::from_predictions(&header(), &records).unwrap();
    assert_eq!(r.per_client["A"].recall, None);
    assert_eq!(r.per_client["B"].recall, Some(1.0));
    assert_eq!(r.recall_spread, Some(0.0));
}
