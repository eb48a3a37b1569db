//! Cross-module invariants checked on random inputs through the public API.

use annokit::aggregation::{dawid_skene_fit, glad_fit};
use annokit::calibration::{brier, fit_isotonic, fit_temperature, scaled_nll, scaled_probabilities};
use annokit::stats::bradley_terry::bradley_terry_fit_from;
use annokit::stats::{bradley_terry_fit, cohen_kappa, fleiss_kappa, PairwiseWins};
use proptest::prelude::*;

fn paired_labels() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
    (2usize..60).prop_flat_map(|n| (prop::collection::vec(0u8..4, n), prop::collection::vec(0u8..4, n)))
}

fn label_matrix(k: usize) -> impl Strategy<Value = Vec<Vec<Option<usize>>>> {
    (3usize..5, 8usize..40).prop_flat_map(move |(raters, items)| {
        prop::collection::vec(prop::collection::vec(prop::option::weighted(0.9, 0usize..k), raters), items)
            .prop_filter("every item needs a label", |rows| rows.iter().all(|r| r.iter().any(Option::is_some)))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kappa_is_symmetric_and_label_blind((a, b) in paired_labels(), shift in 1u8..4) {
        let ab = cohen_kappa(&a, &b).unwrap().value;
        let ba = cohen_kappa(&b, &a).unwrap().value;
        let rename = |xs: &[u8]| xs.iter().map(|x| (x + shift) % 4).collect::<Vec<_>>();
        let renamed = cohen_kappa(&rename(&a), &rename(&b)).unwrap().value;
        match (ab, ba, renamed) {
            (Some(x), Some(y), Some(z)) => {
                prop_assert!((x - y).abs() < 1e-12 && (x - z).abs() < 1e-12);
                prop_assert!((-1.0..=1.0 + 1e-12).contains(&x));
            }
            (x, y, z) => prop_assert!(x.is_none() && y.is_none() && z.is_none()),
        }
    }

    #[test]
    fn perfect_agreement_gives_one((a, _) in paired_labels()) {
        prop_assume!(a.iter().any(|x| *x != a[0]));
        prop_assert!((cohen_kappa(&a, &a).unwrap().value.unwrap() - 1.0).abs() < 1e-12);
        let rows: Vec<Vec<u8>> = a.iter().map(|x| vec![*x; 3]).collect();
        prop_assert!((fleiss_kappa(&rows).unwrap().value.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn em_traces_never_decrease(labels in label_matrix(3), binary in label_matrix(2)) {
        let ds = dawid_skene_fit(&labels, 3, 200, 1e-8).unwrap();
        prop_assert!(ds.loglik_trace.windows(2).all(|w| w[1] >= w[0] - 1e-9));
        for q in &ds.posteriors {
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        for rater in &ds.confusion {
            for row in rater {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        let glad = glad_fit(&binary, 200, 1e-8).unwrap();
        prop_assert!(glad.loglik_trace.windows(2).all(|w| w[1] >= w[0] - 1e-9));
        prop_assert!(glad.posteriors.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn unanimous_raters_are_absorbed(truth in prop::collection::vec(0usize..2, 6..30), raters in 2usize..5) {
        prop_assume!(truth.contains(&0) && truth.contains(&1));
        let labels: Vec<Vec<Option<usize>>> = truth.iter().map(|&t| vec![Some(t); raters]).collect();
        let ds = dawid_skene_fit(&labels, 2, 500, 1e-10).unwrap();
        prop_assert_eq!(ds.map_labels(), truth.clone());
        let glad = glad_fit(&labels, 500, 1e-10).unwrap();
        prop_assert_eq!(glad.map_labels(), truth);
    }

    #[test]
    fn pav_is_monotone_and_mean_preserving(data in prop::collection::vec((0u8..=10, any::<bool>()), 1..40)) {
        let p: Vec<f64> = data.iter().map(|(x, _)| f64::from(*x) / 10.0).collect();
        let y: Vec<bool> = data.iter().map(|(_, y)| *y).collect();
        let f = fit_isotonic(&p, &y).unwrap();
        prop_assert!(f.values.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        let fitted: f64 = p.iter().map(|&x| f.predict(x)).sum::<f64>() / p.len() as f64;
        let mean = y.iter().filter(|v| **v).count() as f64 / y.len() as f64;
        prop_assert!((fitted - mean).abs() < 1e-9);
    }

    #[test]
    fn temperature_never_worsens_nll(seed_logits in prop::collection::vec(prop::collection::vec(-4f64..4.0, 3), 12..60), labels in prop::collection::vec(0usize..3, 60)) {
        let labels = &labels[..seed_logits.len()];
        let unit = scaled_probabilities(&seed_logits[0], 1.0);
        let z = &seed_logits[0];
        let total: f64 = z.iter().map(|v| v.exp()).sum();
        for (p, v) in unit.iter().zip(z) {
            prop_assert!((p - v.exp() / total).abs() < 1e-12);
        }
        let fit = fit_temperature(&seed_logits, labels, 200).unwrap();
        prop_assert!(fit.nll <= scaled_nll(&seed_logits, labels, 1.0) + 1e-12);
    }

    #[test]
    fn brier_of_a_constant_forecast(p in 0f64..=1.0, y in prop::collection::vec(any::<bool>(), 1..50)) {
        let ybar = y.iter().filter(|v| **v).count() as f64 / y.len() as f64;
        let b = brier(&vec![p; y.len()], &y).unwrap();
        prop_assert!((b - (p * p + (1.0 - 2.0 * p) * ybar)).abs() < 1e-12);
    }

    #[test]
    fn bradley_terry_ignores_count_scale_and_start(wins in prop::collection::vec(1u64..6, 6), scale in 2u64..5, start in prop::collection::vec(0.1f64..1.0, 3)) {
        let build = |mult: u64| {
            let mut w = PairwiseWins::new(3);
            let pairs = [(0, 1), (1, 0), (0, 2), (2, 0), (1, 2), (2, 1)];
            for ((a, b), n) in pairs.iter().zip(&wins) {
                for _ in 0..n * mult {
                    w.record(*a, *b);
                }
            }
            w
        };
        let base = bradley_terry_fit(&build(1), 10_000, 1e-12).unwrap();
        let scaled = bradley_terry_fit(&build(scale), 10_000, 1e-12).unwrap();
        let restarted = bradley_terry_fit_from(&build(1), &start, 10_000, 1e-12).unwrap();
        for i in 0..3 {
            prop_assert!((base.strengths[i] - scaled.strengths[i]).abs() < 1e-6);
            prop_assert!((base.strengths[i] - restarted.strengths[i]).abs() < 1e-6);
        }
        prop_assert!((base.strengths.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
