//! Proper scoring rules, reliability binning, and post-hoc calibration
//! (temperature, Platt, isotonic). Fits are made on one split and
//! evaluated on another; the "validation" and "held-out" sets are the
//! same split here.

pub mod isotonic;
pub mod platt;
pub mod scores;
pub mod split;
pub mod temperature;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use isotonic::{fit_isotonic, IsotonicFunction};
pub use platt::{fit_platt, PlattFit};
pub use scores::{brier, ece, log_loss, reliability_curve, Binning, EceResult, ReliabilityBin, DEFAULT_BINS};
pub use split::{held_out_split, DEFAULT_HOLDOUT_FRACTION};
pub use temperature::{fit_temperature, scaled_nll, scaled_probabilities, TemperatureFit};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("inputs differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("only one class present in labels")]
    DegenerateLabels,
    #[error("need at least {needed} examples, got {got}")]
    TooFewExamples { needed: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub brier: f64,
    pub log_loss: f64,
    pub ece: f64,
}

impl MetricSet {
    pub fn compute(p: &[f64], y: &[bool], n_bins: usize) -> Result<Self, CalibrationError> {
        Ok(Self {
            brier: brier(p, y)?,
            log_loss: log_loss(p, y)?,
            ece: ece(p, y, n_bins, Binning::EqualWidth)?.ece,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedCalibrator {
    Temperature { temperature: f64 },
    Platt { a: f64, b: f64 },
    Isotonic(IsotonicFunction),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrePost {
    pub pre: MetricSet,
    pub post: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub n: usize,
    pub brier: f64,
    pub log_loss: f64,
    pub ece: f64,
    pub bins: Vec<ReliabilityBin>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fitted: Option<FittedCalibrator>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pre_post: Option<PrePost>,
}

impl CalibrationReport {
    pub fn from_scores(p: &[f64], y: &[bool], n_bins: usize) -> Result<Self, CalibrationError> {
        let e = ece(p, y, n_bins, Binning::EqualWidth)?;
        Ok(Self {
            n: p.len(),
            brier: brier(p, y)?,
            log_loss: log_loss(p, y)?,
            ece: e.ece,
            bins: e.bins,
            fitted: None,
            pre_post: None,
        })
    }

    /// Report on `post` probabilities, recording the fit and the metrics
    /// of the unfitted `pre` probabilities on the same examples.
    pub fn with_fit(pre: &[f64], post: &[f64], y: &[bool], n_bins: usize, fitted: FittedCalibrator) -> Result<Self, CalibrationError> {
        let mut report = Self::from_scores(post, y, n_bins)?;
        report.pre_post = Some(PrePost {
            pre: MetricSet::compute(pre, y, n_bins)?,
            post: MetricSet::compute(post, y, n_bins)?,
        });
        report.fitted = Some(fitted);
        Ok(report)
    }

    /// Reliability points as CSV for external plotting.
    pub fn bins_csv(&self) -> String {
        let mut out = String::from("mean_confidence,empirical_accuracy,count\n");
        for b in &self.bins {
            out.push_str(&format!("{},{},{}\n", b.mean_confidence, b.empirical_accuracy, b.count));
        }
        out
    }
}
