//! Welch's t, one-way ANOVA, McNemar, and Holm-adjusted pairwise Welch tests.

use serde::{Deserialize, Serialize};

use super::report::{DegreesOfFreedom, TestKind, TestResult};
use super::special::{chi_square_upper_tail, f_upper_tail, student_t_two_sided};
use super::StatsError;

pub const FLAG_ZERO_VARIANCE: &str = "degenerate_variances: p set by convention";

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Welch's unequal-variance t test, two-sided.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(StatsError::TooFewObservations { needed: 2, got: s.len() });
        }
    }
    let (m1, v1) = mean_var(a);
    let (m2, v2) = mean_var(b);
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let se1 = v1 / n1;
    let se2 = v2 / n2;
    if se1 + se2 == 0.0 {
        let equal = m1 == m2;
        return Ok(TestResult {
            test: TestKind::WelchT,
            statistic: if equal { 0.0 } else { f64::INFINITY.copysign(m1 - m2) },
            df: DegreesOfFreedom::One(n1 + n2 - 2.0),
            p_value: if equal { 1.0 } else { 0.0 },
            flags: vec![FLAG_ZERO_VARIANCE.into()],
        });
    }
    let t = (m1 - m2) / (se1 + se2).sqrt();
    let df = (se1 + se2).powi(2) / (se1 * se1 / (n1 - 1.0) + se2 * se2 / (n2 - 1.0));
    Ok(TestResult {
        test: TestKind::WelchT,
        statistic: t,
        df: DegreesOfFreedom::One(df),
        p_value: student_t_two_sided(t, df),
        flags: Vec::new(),
    })
}

/// Student's pooled-variance t statistic and its degrees of freedom.
pub fn pooled_t(a: &[f64], b: &[f64]) -> Result<(f64, f64), StatsError> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(StatsError::TooFewObservations { needed: 2, got: s.len() });
        }
    }
    let (m1, v1) = mean_var(a);
    let (m2, v2) = mean_var(b);
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let df = n1 + n2 - 2.0;
    let sp2 = ((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / df;
    Ok(((m1 - m2) / (sp2 * (1.0 / n1 + 1.0 / n2)).sqrt(), df))
}

/// One-way ANOVA omnibus F test.
pub fn oneway_anova(groups: &[Vec<f64>]) -> Result<TestResult, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewObservations { needed: 2, got: groups.len() });
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(StatsError::TooFewObservations { needed: 2, got: g.len() });
    }
    let k = groups.len() as f64;
    let n: f64 = groups.iter().map(|g| g.len() as f64).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let m = g.iter().sum::<f64>() / g.len() as f64;
        ss_between += g.len() as f64 * (m - grand).powi(2);
        ss_within += g.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    }
    let (d1, d2) = (k - 1.0, n - k);
    let df = DegreesOfFreedom::Two(d1, d2);
    let ms_between = ss_between / d1;
    if ss_within == 0.0 {
        let equal = ss_between == 0.0;
        return Ok(TestResult {
            test: TestKind::OnewayAnova,
            statistic: if equal { 0.0 } else { f64::INFINITY },
            df,
            p_value: if equal { 1.0 } else { 0.0 },
            flags: vec![FLAG_ZERO_VARIANCE.into()],
        });
    }
    let f = ms_between / (ss_within / d2);
    Ok(TestResult {
        test: TestKind::OnewayAnova,
        statistic: f,
        df,
        p_value: f_upper_tail(f, d1, d2),
        flags: Vec::new(),
    })
}

/// McNemar's chi-square (no continuity correction) on discordant counts.
/// Returns `None` when there are no discordant pairs.
pub fn mcnemar(b: u64, c: u64) -> Option<TestResult> {
    if b + c == 0 {
        return None;
    }
    let diff = b as f64 - c as f64;
    let stat = diff * diff / (b + c) as f64;
    Some(TestResult {
        test: TestKind::Mcnemar,
        statistic: stat,
        df: DegreesOfFreedom::One(1.0),
        p_value: chi_square_upper_tail(stat, 1.0),
        flags: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipDiagnostic {
    pub flip_rate: f64,
    pub n: usize,
    /// Items moving from the first label to the second under the swap.
    pub discordant_b: u64,
    /// Items moving from the second label to the first.
    pub discordant_c: u64,
    /// `None` when no item changed label (test not applicable).
    pub test: Option<TestResult>,
}

/// Order-swap diagnostic: share of items whose (aligned) label changed when
/// option order was swapped, with McNemar's test on the discordant cells.
///
/// Labels must already be aligned to content (not position). The label set
/// across both vectors may contain at most two values; the first in sort
/// order is treated as the reference label for the discordant counts.
pub fn flip_rate_and_mcnemar<L: Ord + Clone>(original: &[L], swapped: &[L]) -> Result<FlipDiagnostic, StatsError> {
    if original.len() != swapped.len() {
        return Err(StatsError::LengthMismatch { left: original.len(), right: swapped.len() });
    }
    if original.is_empty() {
        return Err(StatsError::TooFewObservations { needed: 1, got: 0 });
    }
    let mut labels: Vec<&L> = original.iter().chain(swapped).collect();
    labels.sort();
    labels.dedup();
    if labels.len() > 2 {
        return Err(StatsError::InvalidInput("McNemar's test needs binary labels".into()));
    }
    let first = labels[0];
    let mut b = 0u64;
    let mut c = 0u64;
    for (x, y) in original.iter().zip(swapped) {
        if x != y {
            if x == first {
                b += 1;
            } else {
                c += 1;
            }
        }
    }
    Ok(FlipDiagnostic {
        flip_rate: (b + c) as f64 / original.len() as f64,
        n: original.len(),
        discordant_b: b,
        discordant_c: c,
        test: mcnemar(b, c),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub group_a: usize,
    pub group_b: usize,
    pub result: TestResult,
    /// Holm step-down adjusted p-value.
    pub p_adjusted: f64,
    pub reject: bool,
}

/// All pairwise Welch tests between groups with Holm's step-down correction
/// at family-wise level `alpha`.
pub fn pairwise_welch_holm(groups: &[Vec<f64>], alpha: f64) -> Result<Vec<PairwiseComparison>, StatsError> {
    let mut out = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let result = welch_t(&groups[i], &groups[j])?;
            out.push(PairwiseComparison {
                group_a: i,
                group_b: j,
                p_adjusted: result.p_value,
                result,
                reject: false,
            });
        }
    }
    let m = out.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| out[a].result.p_value.total_cmp(&out[b].result.p_value));
    let mut running = 0.0_f64;
    for (rank, &idx) in order.iter().enumerate() {
        let adj = ((m - rank) as f64 * out[idx].result.p_value).min(1.0);
        running = running.max(adj);
        out[idx].p_adjusted = running;
        out[idx].reject = running <= alpha;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = welch_t(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shifted_samples_closed_form() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b: Vec<f64> = a.iter().map(|x| x + 10.0).collect();
        let r = welch_t(&a, &b).unwrap();
        // equal variances 2.5, n = 5: t = -10 / sqrt(1.0), df = 8
        assert!((r.statistic + 10.0).abs() < 1e-12);
        let DegreesOfFreedom::One(df) = r.df else { panic!() };
        assert!((df - 8.0).abs() < 1e-12);
        // P(|T_8| > 10) = 8.4881815e-6 (closed-form t tail)
        assert!((r.p_value - 8.488_181_527_628_5e-6).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_conventions() {
        let r = welch_t(&[2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(r.p_value, 1.0);
        let r = welch_t(&[2.0, 2.0], &[3.0, 3.0]).unwrap();
        assert_eq!(r.p_value, 0.0);
        assert_eq!(r.flags, vec![FLAG_ZERO_VARIANCE.to_string()]);
    }

    #[test]
    fn anova_identical_groups_and_pooled_t_identity() {
        let g = vec![vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0], vec![3.0, 1.0, 2.0]];
        let r = oneway_anova(&g).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);

        let a = vec![2.1, 3.4, 1.9, 5.5, 4.0];
        let b = vec![6.2, 4.4, 7.1, 5.0];
        let f = oneway_anova(&[a.clone(), b.clone()]).unwrap().statistic;
        let (t, _) = pooled_t(&a, &b).unwrap();
        assert!((f - t * t).abs() < 1e-9);
    }

    #[test]
    fn anova_shifted_group() {
        let g = vec![
            vec![1.0, 1.2, 0.9, 1.1, 1.05],
            vec![0.95, 1.1, 1.0, 1.02, 0.98],
            vec![9.0, 9.1, 8.9, 9.05, 9.2],
        ];
        assert!(oneway_anova(&g).unwrap().p_value < 1e-6);
    }

    #[test]
    fn mcnemar_discordant_example() {
        let r = mcnemar(6, 2).unwrap();
        assert!((r.statistic - 2.0).abs() < 1e-15);
        assert!(mcnemar(0, 0).is_none());
    }

    #[test]
    fn flip_rate_counts() {
        let orig: Vec<char> = (0..100).map(|i| if i % 2 == 0 { 'A' } else { 'B' }).collect();
        let mut swapped = orig.clone();
        for x in swapped.iter_mut().take(12) {
            *x = if *x == 'A' { 'B' } else { 'A' };
        }
        let d = flip_rate_and_mcnemar(&orig, &swapped).unwrap();
        assert!((d.flip_rate - 0.12).abs() < 1e-15);
        assert_eq!((d.discordant_b, d.discordant_c), (6, 6));

        let d = flip_rate_and_mcnemar(&orig, &orig).unwrap();
        assert_eq!(d.flip_rate, 0.0);
        assert!(d.test.is_none());
    }

    #[test]
    fn holm_is_monotone_and_bounded() {
        let groups = vec![
            vec![1.0, 1.1, 0.9, 1.05],
            vec![1.02, 0.97, 1.1, 1.0],
            vec![3.0, 3.1, 2.9, 3.2],
        ];
        let cmp = pairwise_welch_holm(&groups, 0.05).unwrap();
        assert_eq!(cmp.len(), 3);
        for c in &cmp {
            assert!(c.p_adjusted >= c.result.p_value && c.p_adjusted <= 1.0);
        }
        assert!(!cmp[0].reject);
        assert!(cmp[1].reject && cmp[2].reject);
    }
}
