//! Chance-corrected agreement: Cohen's kappa, weighted kappa, Fleiss' kappa.

use std::collections::BTreeMap;

use super::report::{AgreementMetric, AgreementReport};
use super::StatsError;

pub const FLAG_DEGENERATE_MARGINALS: &str = "degenerate_marginals: chance agreement is 1";
pub const FLAG_DEGENERATE_CATEGORIES: &str = "degenerate_categories: a single category was used";

/// Contingency table over the union of observed categories.
#[derive(Debug, Clone)]
pub struct Contingency<L> {
    pub categories: Vec<L>,
    /// counts[row = rater a][col = rater b]
    pub counts: Vec<Vec<u64>>,
    pub n: u64,
}

impl<L: Ord + Clone> Contingency<L> {
    pub fn from_pairs(a: &[L], b: &[L]) -> Self {
        let mut index: BTreeMap<L, usize> = BTreeMap::new();
        for l in a.iter().chain(b) {
            index.entry(l.clone()).or_insert(0);
        }
        for (i, v) in index.values_mut().enumerate() {
            *v = i;
        }
        let k = index.len();
        let mut counts = vec![vec![0u64; k]; k];
        for (x, y) in a.iter().zip(b) {
            counts[index[x]][index[y]] += 1;
        }
        Self {
            categories: index.into_keys().collect(),
            counts,
            n: a.len() as u64,
        }
    }
}

/// Cohen's kappa from raw integer counts. Returns `None` when chance
/// agreement equals one.
pub fn kappa_from_counts(counts: &[Vec<u64>]) -> Option<f64> {
    let k = counts.len();
    let n: u64 = counts.iter().flatten().sum();
    let agree: u64 = (0..k).map(|i| counts[i][i]).sum();
    let rows: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<u64> = (0..k).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
    let chance: i128 = rows.iter().zip(&cols).map(|(&r, &c)| r as i128 * c as i128).sum();
    let n = n as i128;
    let denom = n * n - chance;
    if denom == 0 {
        return None;
    }
    let numer = n * agree as i128 - chance;
    Some(numer as f64 / denom as f64)
}

/// Cohen's kappa for two raters over the same items.
///
/// Observed and chance agreement are combined in exact integer arithmetic
/// before the single final division.
pub fn cohen_kappa<L: Ord + Clone>(a: &[L], b: &[L]) -> Result<AgreementReport, StatsError> {
    check_paired(a.len(), b.len(), 2)?;
    let table = Contingency::from_pairs(a, b);
    Ok(match kappa_from_counts(&table.counts) {
        Some(v) => AgreementReport::new(AgreementMetric::CohenKappa, Some(v), a.len()),
        None => AgreementReport::undefined(AgreementMetric::CohenKappa, a.len(), FLAG_DEGENERATE_MARGINALS),
    })
}

/// Observed proportion of matching pairs.
pub fn percent_agreement<L: PartialEq>(a: &[L], b: &[L]) -> f64 {
    if a.is_empty() {
        return f64::NAN;
    }
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub enum KappaWeights {
    Linear,
    Quadratic,
    /// Explicit disagreement weights, `K x K`, zero on the diagonal.
    Custom(Vec<Vec<f64>>),
}

impl KappaWeights {
    fn matrix(&self, k: usize) -> Vec<Vec<f64>> {
        match self {
            KappaWeights::Custom(w) => w.clone(),
            _ => {
                let span = (k.max(2) - 1) as f64;
                (0..k)
                    .map(|i| {
                        (0..k)
                            .map(|j| {
                                let d = (i as f64 - j as f64).abs() / span;
                                if matches!(self, KappaWeights::Quadratic) {
                                    d * d
                                } else {
                                    d
                                }
                            })
                            .collect()
                    })
                    .collect()
            }
        }
    }
}

/// Weighted kappa for ordinal ratings coded `0..n_levels`.
pub fn weighted_kappa(
    a: &[usize],
    b: &[usize],
    n_levels: usize,
    weights: &KappaWeights,
) -> Result<AgreementReport, StatsError> {
    check_paired(a.len(), b.len(), 2)?;
    if n_levels < 2 {
        return Err(StatsError::InvalidInput("weighted kappa needs at least two levels".into()));
    }
    if let Some(&bad) = a.iter().chain(b).find(|&&x| x >= n_levels) {
        return Err(StatsError::InvalidInput(format!("ordinal level {bad} outside 0..{n_levels}")));
    }
    let w = weights.matrix(n_levels);
    if w.len() != n_levels || w.iter().any(|r| r.len() != n_levels) {
        return Err(StatsError::DimensionMismatch("weight matrix must be K x K".into()));
    }
    let n = a.len() as f64;
    let mut p = vec![vec![0.0; n_levels]; n_levels];
    for (&x, &y) in a.iter().zip(b) {
        p[x][y] += 1.0 / n;
    }
    let rows: Vec<f64> = p.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..n_levels).map(|j| p.iter().map(|r| r[j]).sum()).collect();
    let mut observed = 0.0;
    let mut expected = 0.0;
    for i in 0..n_levels {
        for j in 0..n_levels {
            observed += w[i][j] * p[i][j];
            expected += w[i][j] * rows[i] * cols[j];
        }
    }
    if expected.abs() < 1e-15 {
        return Ok(AgreementReport::undefined(AgreementMetric::WeightedKappa, a.len(), FLAG_DEGENERATE_MARGINALS));
    }
    Ok(AgreementReport::new(AgreementMetric::WeightedKappa, Some(1.0 - observed / expected), a.len()))
}

/// Per-item category counts for a fixed number of raters.
fn category_counts<L: Ord + Clone>(ratings: &[Vec<L>]) -> Result<(Vec<Vec<f64>>, usize), StatsError> {
    let raters = ratings.first().map(Vec::len).unwrap_or(0);
    if raters < 2 {
        return Err(StatsError::InvalidInput("fleiss kappa needs at least two raters per item".into()));
    }
    if ratings.iter().any(|r| r.len() != raters) {
        return Err(StatsError::InvalidInput("fleiss kappa needs a fixed rater count per item".into()));
    }
    let mut index: BTreeMap<&L, usize> = BTreeMap::new();
    for l in ratings.iter().flatten() {
        let next = index.len();
        index.entry(l).or_insert(next);
    }
    let k = index.len();
    let counts = ratings
        .iter()
        .map(|row| {
            let mut c = vec![0.0; k];
            for l in row {
                c[index[l]] += 1.0;
            }
            c
        })
        .collect();
    Ok((counts, raters))
}

/// Fleiss' kappa over `items x raters` nominal ratings.
pub fn fleiss_kappa<L: Ord + Clone>(ratings: &[Vec<L>]) -> Result<AgreementReport, StatsError> {
    if ratings.is_empty() {
        return Err(StatsError::TooFewObservations { needed: 1, got: 0 });
    }
    let (counts, raters) = category_counts(ratings)?;
    let n_items = counts.len() as f64;
    let r = raters as f64;
    let k = counts[0].len();
    if k < 2 {
        return Ok(AgreementReport::undefined(AgreementMetric::FleissKappa, ratings.len(), FLAG_DEGENERATE_CATEGORIES));
    }
    let p_j: Vec<f64> = (0..k)
        .map(|j| counts.iter().map(|c| c[j]).sum::<f64>() / (n_items * r))
        .collect();
    let p_bar = counts
        .iter()
        .map(|c| (c.iter().map(|x| x * x).sum::<f64>() - r) / (r * (r - 1.0)))
        .sum::<f64>()
        / n_items;
    let p_e: f64 = p_j.iter().map(|p| p * p).sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(AgreementReport::undefined(AgreementMetric::FleissKappa, ratings.len(), FLAG_DEGENERATE_CATEGORIES));
    }
    Ok(AgreementReport::new(AgreementMetric::FleissKappa, Some((p_bar - p_e) / (1.0 - p_e)), ratings.len()))
}

/// Item-level chance-corrected agreement: each item's pairwise rater
/// agreement, corrected by the pooled category proportions of the whole
/// table (the per-item terms whose mean is Fleiss' kappa).
///
/// Items may have different rater counts; items with fewer than two
/// ratings map to `None`.
pub fn per_item_kappa<L: Ord + Clone>(ratings: &[Vec<L>]) -> Vec<Option<f64>> {
    let mut totals: BTreeMap<&L, f64> = BTreeMap::new();
    let mut n_total = 0.0;
    for l in ratings.iter().flatten() {
        *totals.entry(l).or_insert(0.0) += 1.0;
        n_total += 1.0;
    }
    let p_e: f64 = totals.values().map(|c| (c / n_total).powi(2)).sum();
    ratings
        .iter()
        .map(|row| {
            if row.len() < 2 || (1.0 - p_e).abs() < 1e-15 {
                return None;
            }
            let r = row.len() as f64;
            let mut counts: BTreeMap<&L, f64> = BTreeMap::new();
            for l in row {
                *counts.entry(l).or_insert(0.0) += 1.0;
            }
            let p_i = (counts.values().map(|c| c * c).sum::<f64>() - r) / (r * (r - 1.0));
            Some((p_i - p_e) / (1.0 - p_e))
        })
        .collect()
}

fn check_paired(a: usize, b: usize, min: usize) -> Result<(), StatsError> {
    if a != b {
        return Err(StatsError::LengthMismatch { left: a, right: b });
    }
    if a < min {
        return Err(StatsError::TooFewObservations { needed: min, got: a });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expand(aa: usize, ab: usize, ba: usize, bb: usize) -> (Vec<char>, Vec<char>) {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (n, x, y) in [(aa, 'A', 'A'), (ab, 'A', 'B'), (ba, 'B', 'A'), (bb, 'B', 'B')] {
            a.extend(std::iter::repeat_n(x, n));
            b.extend(std::iter::repeat_n(y, n));
        }
        (a, b)
    }

    fn round3(x: f64) -> f64 {
        (x * 1000.0).round() / 1000.0
    }

    #[test]
    fn published_pairings() {
        let (a, b) = expand(16, 1, 1, 2);
        assert_eq!(round3(cohen_kappa(&a, &b).unwrap().value.unwrap()), 0.608);
        assert!((percent_agreement(&a, &b) - 0.9).abs() < 1e-12);

        let (a, b) = expand(3, 0, 13, 4);
        assert_eq!(round3(cohen_kappa(&a, &b).unwrap().value.unwrap()), 0.085);
        assert!((percent_agreement(&a, &b) - 0.35).abs() < 1e-12);

        let (a, b) = expand(15, 5, 0, 0);
        let k = cohen_kappa(&a, &b).unwrap().value.unwrap();
        assert_eq!(k, 0.0);
        assert!((percent_agreement(&a, &b) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn degenerate_marginals_are_flagged() {
        let a = vec!['A'; 5];
        let r = cohen_kappa(&a, &a).unwrap();
        assert!(r.value.is_none());
        assert_eq!(r.flags, vec![FLAG_DEGENERATE_MARGINALS.to_string()]);
    }

    #[test]
    fn cohen_preconditions() {
        assert!(matches!(cohen_kappa(&['A'], &['A']), Err(StatsError::TooFewObservations { .. })));
        assert!(matches!(cohen_kappa(&['A', 'B'], &['A']), Err(StatsError::LengthMismatch { .. })));
    }

    #[test]
    fn weighted_perfect_and_reversed() {
        let a = vec![0, 1, 2, 0, 1, 2];
        let r = weighted_kappa(&a, &a, 3, &KappaWeights::Linear).unwrap();
        assert!((r.value.unwrap() - 1.0).abs() < 1e-12);
        // always k vs K+1-k with uniform marginals
        let b: Vec<usize> = a.iter().map(|&x| 2 - x).collect();
        let lin = weighted_kappa(&a, &b, 3, &KappaWeights::Linear).unwrap().value.unwrap();
        // observed: 4 of 6 pairs at distance 1 (weight 1), 2 at distance 0
        // expected: uniform marginals, mean |i-j|/2 over 9 cells = 8/18
        let expected = 1.0 - (4.0 / 6.0) / (8.0 / 18.0);
        assert!((lin - expected).abs() < 1e-12);
        assert!(lin < 0.0);
    }

    #[test]
    fn fleiss_unanimous_and_scott_pi() {
        let unanimous = vec![vec!['A'; 4], vec!['B'; 4], vec!['A'; 4]];
        assert!((fleiss_kappa(&unanimous).unwrap().value.unwrap() - 1.0).abs() < 1e-12);

        // two raters: Fleiss coincides with Scott's pi from pooled marginals
        let a = ['A', 'A', 'B', 'B', 'A', 'C', 'C', 'A', 'B', 'A'];
        let b = ['A', 'B', 'B', 'B', 'A', 'C', 'A', 'A', 'C', 'A'];
        let rows: Vec<Vec<char>> = a.iter().zip(&b).map(|(x, y)| vec![*x, *y]).collect();
        let fleiss = fleiss_kappa(&rows).unwrap().value.unwrap();
        let n = a.len() as f64;
        let po = percent_agreement(&a, &b);
        let mut pe = 0.0;
        for c in ['A', 'B', 'C'] {
            let pooled = (a.iter().filter(|&&x| x == c).count() + b.iter().filter(|&&x| x == c).count()) as f64
                / (2.0 * n);
            pe += pooled * pooled;
        }
        let scott = (po - pe) / (1.0 - pe);
        assert!((fleiss - scott).abs() < 1e-12);
    }

    #[test]
    fn fleiss_single_category_undefined() {
        let rows = vec![vec![1, 1], vec![1, 1]];
        assert!(fleiss_kappa(&rows).unwrap().value.is_none());
    }

    #[test]
    fn per_item_terms_average_to_fleiss() {
        let rows = vec![
            vec!['A', 'A', 'B'],
            vec!['B', 'B', 'B'],
            vec!['A', 'B', 'C'],
            vec!['C', 'C', 'A'],
        ];
        let per: Vec<f64> = per_item_kappa(&rows).into_iter().map(Option::unwrap).collect();
        let mean = per.iter().sum::<f64>() / per.len() as f64;
        assert!((mean - fleiss_kappa(&rows).unwrap().value.unwrap()).abs() < 1e-12);
        assert!(per[1] > per[0] && per[0] > per[2]);
    }
}
