//! Intraclass correlation from the two-way ANOVA decomposition.

use super::report::{AgreementMetric, AgreementReport};
use super::StatsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IccForm {
    /// Two-way random effects, absolute agreement, single rater.
    Icc21,
    /// Two-way mixed effects, consistency, mean of k raters.
    Icc3k,
}

/// Mean squares of the two-way layout without replication.
#[derive(Debug, Clone, Copy)]
pub struct TwoWayMeanSquares {
    pub rows: f64,
    pub cols: f64,
    pub error: f64,
    pub n: usize,
    pub k: usize,
}

pub fn two_way_mean_squares(matrix: &[Vec<f64>]) -> Result<TwoWayMeanSquares, StatsError> {
    let n = matrix.len();
    let k = matrix.first().map(Vec::len).unwrap_or(0);
    if n < 2 || k < 2 {
        return Err(StatsError::TooFewObservations { needed: 2, got: n.min(k) });
    }
    if matrix.iter().any(|r| r.len() != k || r.iter().any(|x| !x.is_finite())) {
        return Err(StatsError::IncompleteMatrix);
    }
    let (nf, kf) = (n as f64, k as f64);
    let grand = matrix.iter().flatten().sum::<f64>() / (nf * kf);
    let row_means: Vec<f64> = matrix.iter().map(|r| r.iter().sum::<f64>() / kf).collect();
    let col_means: Vec<f64> = (0..k).map(|j| matrix.iter().map(|r| r[j]).sum::<f64>() / nf).collect();
    let ss_total: f64 = matrix.iter().flatten().map(|x| (x - grand).powi(2)).sum();
    let ss_rows = kf * row_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_cols = nf * col_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_error = (ss_total - ss_rows - ss_cols).max(0.0);
    Ok(TwoWayMeanSquares {
        rows: ss_rows / (nf - 1.0),
        cols: ss_cols / (kf - 1.0),
        error: ss_error / ((nf - 1.0) * (kf - 1.0)),
        n,
        k,
    })
}

/// ICC over a complete `items x raters` matrix.
pub fn icc(matrix: &[Vec<f64>], form: IccForm) -> Result<AgreementReport, StatsError> {
    let ms = two_way_mean_squares(matrix)?;
    let (n, k) = (ms.n as f64, ms.k as f64);
    let (metric, denom) = match form {
        IccForm::Icc21 => (
            AgreementMetric::Icc21,
            ms.rows + (k - 1.0) * ms.error + k * (ms.cols - ms.error) / n,
        ),
        IccForm::Icc3k => (AgreementMetric::Icc3k, ms.rows),
    };
    if denom.abs() < 1e-300 {
        return Ok(AgreementReport::undefined(metric, ms.n, "degenerate: zero between-item variance"));
    }
    Ok(AgreementReport::new(metric, Some((ms.rows - ms.error) / denom), ms.n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_columns() {
        let m: Vec<Vec<f64>> = [1.0, 4.0, 2.0, 7.0].iter().map(|&x| vec![x, x, x]).collect();
        for form in [IccForm::Icc21, IccForm::Icc3k] {
            assert!((icc(&m, form).unwrap().value.unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn consistency_ignores_rater_offsets() {
        let m: Vec<Vec<f64>> = [1.0, 4.0, 2.0, 7.0].iter().map(|&x| vec![x, x + 3.0, x - 1.5]).collect();
        assert!((icc(&m, IccForm::Icc3k).unwrap().value.unwrap() - 1.0).abs() < 1e-12);
        assert!(icc(&m, IccForm::Icc21).unwrap().value.unwrap() < 1.0);
    }

    #[test]
    fn matches_residual_anova_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..3).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect())
            .collect();
        // From-scratch ANOVA: explicit interaction residuals.
        let (n, k) = (20.0, 3.0);
        let g = m.iter().flatten().sum::<f64>() / 60.0;
        let rm: Vec<f64> = m.iter().map(|r| r.iter().sum::<f64>() / k).collect();
        let cm: Vec<f64> = (0..3).map(|j| m.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let mut sse = 0.0;
        for i in 0..20 {
            for j in 0..3 {
                sse += (m[i][j] - rm[i] - cm[j] + g).powi(2);
            }
        }
        let msr = rm.iter().map(|x| (x - g).powi(2)).sum::<f64>() * k / (n - 1.0);
        let msc = cm.iter().map(|x| (x - g).powi(2)).sum::<f64>() * n / (k - 1.0);
        let mse = sse / ((n - 1.0) * (k - 1.0));
        let icc21 = (msr - mse) / (msr + (k - 1.0) * mse + k * (msc - mse) / n);
        let icc3k = (msr - mse) / msr;
        assert!((icc(&m, IccForm::Icc21).unwrap().value.unwrap() - icc21).abs() < 1e-9);
        assert!((icc(&m, IccForm::Icc3k).unwrap().value.unwrap() - icc3k).abs() < 1e-9);
    }

    #[test]
    fn incomplete_matrix_rejected() {
        let m = vec![vec![1.0, 2.0], vec![1.0, f64::NAN]];
        assert!(matches!(icc(&m, IccForm::Icc21), Err(StatsError::IncompleteMatrix)));
        let ragged = vec![vec![1.0, 2.0], vec![1.0]];
        assert!(matches!(icc(&ragged, IccForm::Icc21), Err(StatsError::IncompleteMatrix)));
    }
}
