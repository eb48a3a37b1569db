//! Krippendorff's alpha via the coincidence matrix.

use super::report::{AgreementMetric, AgreementReport};
use super::StatsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaMetric {
    Nominal,
    Interval,
}

impl AlphaMetric {
    fn delta2(self, c: f64, k: f64) -> f64 {
        match self {
            AlphaMetric::Nominal => {
                if c == k {
                    0.0
                } else {
                    1.0
                }
            }
            AlphaMetric::Interval => (c - k) * (c - k),
        }
    }
}

/// Krippendorff's alpha over `units x raters` data with missing entries.
///
/// Units with fewer than two values are not pairable and are dropped. The
/// report's `n` is the number of pairable values.
pub fn krippendorff_alpha(units: &[Vec<Option<f64>>], metric: AlphaMetric) -> Result<AgreementReport, StatsError> {
    let mut values: Vec<f64> = units
        .iter()
        .flat_map(|u| u.iter().flatten().copied())
        .collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let index = |x: f64| values.binary_search_by(|v| v.total_cmp(&x)).expect("value indexed");
    let k = values.len();

    let mut coincidence = vec![vec![0.0; k]; k];
    let mut pairable_units = 0usize;
    for unit in units {
        let present: Vec<usize> = unit.iter().flatten().map(|&x| index(x)).collect();
        let m = present.len();
        if m < 2 {
            continue;
        }
        pairable_units += 1;
        let w = 1.0 / (m as f64 - 1.0);
        for (i, &c) in present.iter().enumerate() {
            for (j, &kk) in present.iter().enumerate() {
                if i != j {
                    coincidence[c][kk] += w;
                }
            }
        }
    }
    let marginals: Vec<f64> = coincidence.iter().map(|r| r.iter().sum()).collect();
    let n: f64 = marginals.iter().sum();
    if pairable_units == 0 || n < 2.0 {
        return Err(StatsError::InsufficientPairableData);
    }
    let mut d_obs = 0.0;
    let mut d_exp = 0.0;
    for c in 0..k {
        for kk in 0..k {
            let d = metric.delta2(values[c], values[kk]);
            d_obs += coincidence[c][kk] * d;
            d_exp += marginals[c] * marginals[kk] * d;
        }
    }
    d_obs /= n;
    d_exp /= n * (n - 1.0);
    let n_values = n.round() as usize;
    if d_exp == 0.0 {
        return Ok(AgreementReport::undefined(
            AgreementMetric::KrippendorffAlpha,
            n_values,
            "degenerate: no expected disagreement (single value)",
        ));
    }
    Ok(AgreementReport::new(AgreementMetric::KrippendorffAlpha, Some(1.0 - d_obs / d_exp), n_values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_raters(a: &[f64], b: &[f64]) -> Vec<Vec<Option<f64>>> {
        a.iter().zip(b).map(|(x, y)| vec![Some(*x), Some(*y)]).collect()
    }

    #[test]
    fn perfect_agreement_is_one() {
        let d = two_raters(&[1.0, 2.0, 3.0, 1.0], &[1.0, 2.0, 3.0, 1.0]);
        let r = krippendorff_alpha(&d, AlphaMetric::Nominal).unwrap();
        assert!((r.value.unwrap() - 1.0).abs() < 1e-12);
        let r = krippendorff_alpha(&d, AlphaMetric::Interval).unwrap();
        assert!((r.value.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nominal_two_rater_hand_worked() {
        // 10 units, 3 disagreements.
        let a = [1.0, 1.0, 2.0, 2.0, 3.0, 1.0, 2.0, 3.0, 3.0, 1.0];
        let b = [1.0, 2.0, 2.0, 2.0, 3.0, 1.0, 3.0, 3.0, 1.0, 1.0];
        let alpha = krippendorff_alpha(&two_raters(&a, &b), AlphaMetric::Nominal)
            .unwrap()
            .value
            .unwrap();
        // Hand: value totals n_1 = 8, n_2 = 6, n_3 = 6 over n = 20 pairable values.
        // Off-diagonal coincidences = 2 per disagreeing unit = 6.
        // Sum over c != k of n_c n_k = 20^2 - (64 + 36 + 36) = 264.
        // alpha = 1 - (n - 1) * 6 / 264
        let expected = 1.0 - 19.0 * 6.0 / 264.0;
        assert!((alpha - expected).abs() < 1e-9, "{alpha} vs {expected}");
    }

    #[test]
    fn missing_column_uses_remaining_raters() {
        let d = vec![
            vec![Some(1.0), Some(1.0), None],
            vec![Some(2.0), Some(2.0), None],
            vec![Some(1.0), Some(2.0), None],
            vec![Some(2.0), Some(2.0), None],
        ];
        let r = krippendorff_alpha(&d, AlphaMetric::Nominal).unwrap();
        assert_eq!(r.n, 8);
        let dropped: Vec<Vec<Option<f64>>> = d.iter().map(|u| u[..2].to_vec()).collect();
        assert_eq!(r.value, krippendorff_alpha(&dropped, AlphaMetric::Nominal).unwrap().value);
    }

    #[test]
    fn unpairable_data_is_an_error() {
        let d = vec![vec![Some(1.0), None], vec![None, Some(2.0)]];
        assert!(matches!(
            krippendorff_alpha(&d, AlphaMetric::Nominal),
            Err(StatsError::InsufficientPairableData)
        ));
    }
}
