use super::report::{AgreementMetric, AgreementReport};
use super::StatsError;

/// Midranks (1-based) of `values`; tied values share their average rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn tie_sum(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut t = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let size = (j - i + 1) as f64;
        t += size.powi(3) - size;
        i = j + 1;
    }
    t
}

/// Kendall's coefficient of concordance over a `raters x items` matrix of
/// scores or ranks, with the tie correction applied.
pub fn kendall_w(matrix: &[Vec<f64>]) -> Result<AgreementReport, StatsError> {
    let m = matrix.len();
    let n = matrix.first().map(Vec::len).unwrap_or(0);
    if m < 1 {
        return Err(StatsError::TooFewObservations { needed: 1, got: 0 });
    }
    if matrix.iter().any(|r| r.len() != n) {
        return Err(StatsError::InvalidInput("every rater must rank every item".into()));
    }
    if n < 2 {
        return Err(StatsError::SingleItem);
    }
    let ranks: Vec<Vec<f64>> = matrix.iter().map(|r| midranks(r)).collect();
    let totals: Vec<f64> = (0..n).map(|j| ranks.iter().map(|r| r[j]).sum()).collect();
    let mean = totals.iter().sum::<f64>() / n as f64;
    let s: f64 = totals.iter().map(|t| (t - mean).powi(2)).sum();
    let ties: f64 = matrix.iter().map(|r| tie_sum(r)).sum();
    let (mf, nf) = (m as f64, n as f64);
    let denom = mf * mf * (nf.powi(3) - nf) - mf * ties;
    if denom.abs() < 1e-12 {
        let mut r = AgreementReport::new(AgreementMetric::KendallW, Some(0.0), n);
        r.flags.push("all_tied: concordance set to 0 by convention".into());
        return Ok(r);
    }
    let w = (12.0 * s / denom).clamp(0.0, 1.0);
    let mut r = AgreementReport::new(AgreementMetric::KendallW, Some(w), n);
    if ties > 0.0 {
        r.flags.push("tie_corrected".into());
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_rankings() {
        let m = vec![vec![1.0, 2.0, 3.0, 4.0]; 3];
        assert!((kendall_w(&m).unwrap().value.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reversed_pair_is_zero() {
        let m = vec![vec![1.0, 2.0, 3.0], vec![3.0, 2.0, 1.0]];
        assert_eq!(kendall_w(&m).unwrap().value.unwrap(), 0.0);
    }

    #[test]
    fn all_tied_convention() {
        let m = vec![vec![5.0, 5.0, 5.0], vec![1.0, 1.0, 1.0]];
        let r = kendall_w(&m).unwrap();
        assert_eq!(r.value, Some(0.0));
        assert!(r.flags[0].starts_with("all_tied"));
    }

    #[test]
    fn single_item_rejected() {
        assert!(matches!(kendall_w(&[vec![1.0], vec![1.0]]), Err(StatsError::SingleItem)));
    }

    #[test]
    fn midranks_average_ties() {
        assert_eq!(midranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn scores_and_ranks_agree() {
        let scores = vec![vec![0.1, 0.9, 0.5, 0.7], vec![0.2, 0.8, 0.3, 0.95]];
        let ranks: Vec<Vec<f64>> = scores.iter().map(|r| midranks(r)).collect();
        assert_eq!(kendall_w(&scores).unwrap().value, kendall_w(&ranks).unwrap().value);
    }
}
