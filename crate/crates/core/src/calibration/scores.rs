//! Proper scoring rules and reliability binning.

use serde::{Deserialize, Serialize};

use super::CalibrationError;

pub const LOG_LOSS_CLIP: f64 = 1e-12;
pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    #[default]
    EqualWidth,
    EqualMass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub mean_confidence: f64,
    pub empirical_accuracy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EceResult {
    pub ece: f64,
    pub bins: Vec<ReliabilityBin>,
}

pub(crate) fn check_inputs(p: &[f64], y: &[bool]) -> Result<(), CalibrationError> {
    if p.len() != y.len() {
        return Err(CalibrationError::LengthMismatch { left: p.len(), right: y.len() });
    }
    if let Some(bad) = p.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(CalibrationError::ProbabilityOutOfRange(*bad));
    }
    Ok(())
}

fn outcome(y: bool) -> f64 {
    if y {
        1.0
    } else {
        0.0
    }
}

/// Mean squared difference between probability and binary outcome.
pub fn brier(p: &[f64], y: &[bool]) -> Result<f64, CalibrationError> {
    check_inputs(p, y)?;
    if p.is_empty() {
        return Ok(0.0);
    }
    Ok(p.iter().zip(y).map(|(p, &y)| (p - outcome(y)).powi(2)).sum::<f64>() / p.len() as f64)
}

/// Mean negative Bernoulli log-likelihood with probabilities clipped to
/// `[1e-12, 1 - 1e-12]`.
pub fn log_loss(p: &[f64], y: &[bool]) -> Result<f64, CalibrationError> {
    check_inputs(p, y)?;
    if p.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(LOG_LOSS_CLIP, 1.0 - LOG_LOSS_CLIP);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / p.len() as f64)
}

/// Per-bin (confidence, accuracy, count); empty bins are omitted.
pub fn reliability_curve(p: &[f64], y: &[bool], n_bins: usize, binning: Binning) -> Result<Vec<ReliabilityBin>, CalibrationError> {
    check_inputs(p, y)?;
    if n_bins == 0 {
        return Err(CalibrationError::InvalidInput("n_bins must be at least 1".into()));
    }
    if p.is_empty() {
        return Ok(Vec::new());
    }
    let assignment: Vec<usize> = match binning {
        Binning::EqualWidth => p
            .iter()
            .map(|&x| ((x * n_bins as f64).floor() as usize).min(n_bins - 1))
            .collect(),
        Binning::EqualMass => {
            let mut order: Vec<usize> = (0..p.len()).collect();
            order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
            let mut a = vec![0; p.len()];
            for (rank, &i) in order.iter().enumerate() {
                a[i] = (rank * n_bins / p.len()).min(n_bins - 1);
            }
            a
        }
    };
    let mut sums = vec![(0.0, 0.0, 0usize); n_bins];
    for ((&pi, &yi), &b) in p.iter().zip(y).zip(&assignment) {
        sums[b].0 += pi;
        sums[b].1 += outcome(yi);
        sums[b].2 += 1;
    }
    Ok(sums
        .into_iter()
        .filter(|s| s.2 > 0)
        .map(|(conf, acc, count)| ReliabilityBin {
            mean_confidence: conf / count as f64,
            empirical_accuracy: acc / count as f64,
            count,
        })
        .collect())
}

/// Expected calibration error: count-weighted mean |accuracy - confidence|.
pub fn ece(p: &[f64], y: &[bool], n_bins: usize, binning: Binning) -> Result<EceResult, CalibrationError> {
    let bins = reliability_curve(p, y, n_bins, binning)?;
    let n = p.len() as f64;
    let ece = bins
        .iter()
        .map(|b| b.count as f64 / n * (b.empirical_accuracy - b.mean_confidence).abs())
        .sum();
    Ok(EceResult { ece, bins })
}
