use annokit_web::{calibrate, kappa_from_table, order_swap, parse_table};

#[test]
fn order_swap_separates_biased_from_unbiased() {
    let biased = order_swap(0.24, 0.8, 200, 12).unwrap();
    assert!(biased.flip_rate > 0.0);
    assert!(biased.p_value.unwrap() < 0.01);
    assert_eq!(biased.a_to_b + biased.b_to_a, (biased.flip_rate * 200.0).round() as u64);

    let clean = order_swap(0.0, 0.8, 200, 12).unwrap();
    assert_eq!(clean.flip_rate, 0.0);
    assert!(clean.p_value.is_none());
    assert!(order_swap(0.1, 0.8, 0, 1).is_err());
}

#[test]
fn kappa_matches_hand_computation() {
    // po = 0.8, pe = 0.5·0.5 + 0.5·0.5 = 0.5 → κ = 0.6
    let r = kappa_from_table("40 10\n10 40", None).unwrap();
    assert_eq!((r.k, r.n), (2, 100));
    assert!((r.observed_agreement - 0.8).abs() < 1e-12);
    assert!((r.kappa.unwrap() - 0.6).abs() < 1e-12);
    assert!(r.drift.is_none());

    // po = 0.7; row marginals (.5,.5), column marginals (.6,.4) → pe = 0.5 → κ = 0.4
    let r = kappa_from_table("40, 10\n20; 30\n", Some(0.48)).unwrap();
    assert!((r.kappa.unwrap() - 0.4).abs() < 1e-12);
    let d = r.drift.unwrap();
    assert!((d.delta + 0.08).abs() < 1e-12);
    assert_eq!(d.decision, "WARNING");
    assert!(kappa_from_table("1 2\n3 4", Some(f64::NAN)).unwrap().drift.is_none());
}

#[test]
fn table_parsing_rejects_bad_shapes() {
    assert_eq!(parse_table(" 1 2 \n\n 3 4 ").unwrap(), vec![vec![1, 2], vec![3, 4]]);
    assert!(parse_table("1 2").is_err());
    assert!(parse_table("1 2\n3").is_err());
    assert!(parse_table("1 -2\n3 4").is_err());
    assert!(kappa_from_table("0 0\n0 0", None).is_err());
}

#[test]
fn calibration_demo_recovers_the_scale() {
    let demo = calibrate(2.5, 20_000, 3).unwrap();
    assert!((demo.temperature - 2.5).abs() < 0.1, "T = {}", demo.temperature);
    assert!(demo.after.nll <= demo.before.nll);
    assert!(demo.after.ece < demo.before.ece);
    assert_eq!(demo.before.bins.iter().map(|b| b.count).sum::<usize>(), 20_000);
    assert!(calibrate(0.0, 100, 1).is_err());
}
