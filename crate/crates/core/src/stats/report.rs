use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementMetric {
    CohenKappa,
    WeightedKappa,
    FleissKappa,
    KrippendorffAlpha,
    #[serde(rename = "icc_2_1")]
    Icc21,
    #[serde(rename = "icc_3_k")]
    Icc3k,
    KendallW,
    ExactMatch,
    F1,
}

impl AgreementMetric {
    pub fn name(self) -> &'static str {
        match self {
            AgreementMetric::CohenKappa => "cohen_kappa",
            AgreementMetric::WeightedKappa => "weighted_kappa",
            AgreementMetric::FleissKappa => "fleiss_kappa",
            AgreementMetric::KrippendorffAlpha => "krippendorff_alpha",
            AgreementMetric::Icc21 => "icc_2_1",
            AgreementMetric::Icc3k => "icc_3_k",
            AgreementMetric::KendallW => "kendall_w",
            AgreementMetric::ExactMatch => "exact_match",
            AgreementMetric::F1 => "f1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportUnit {
    Item,
    Pair,
    Cluster,
}

/// Percentile bootstrap interval attached to a point estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
}

/// One agreement statistic with its uncertainty and audit flags.
///
/// `value` is `None` when the statistic is undefined on the data (for
/// example kappa with chance agreement of one); the reason is recorded in
/// `flags` instead of a conventional number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub metric: AgreementMetric,
    pub value: Option<f64>,
    pub ci: Option<ConfidenceInterval>,
    pub resamples: usize,
    pub unit: ReportUnit,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub notes: String,
}

impl AgreementReport {
    pub fn new(metric: AgreementMetric, value: Option<f64>, n: usize) -> Self {
        Self {
            metric,
            value,
            ci: None,
            resamples: 0,
            unit: ReportUnit::Item,
            n,
            flags: Vec::new(),
            notes: String::new(),
        }
    }

    pub fn undefined(metric: AgreementMetric, n: usize, flag: impl Into<String>) -> Self {
        let mut r = Self::new(metric, None, n);
        r.flags.push(flag.into());
        r
    }

    pub fn with_flag(mut self, flag: impl Into<String>) -> Self {
        self.flags.push(flag.into());
        self
    }

    pub fn is_defined(&self) -> bool {
        self.value.is_some()
    }

    /// Attach a bootstrap interval. A percentile interval need not contain the
    /// point estimate; when it does not, the interval is extended to the
    /// estimate and the report is flagged.
    pub fn attach_ci(&mut self, lo: f64, hi: f64, level: f64, resamples: usize) {
        let (mut lo, mut hi) = (lo, hi);
        if let Some(v) = self.value {
            if v < lo || v > hi {
                lo = lo.min(v);
                hi = hi.max(v);
                self.flags.push("ci_extended_to_point_estimate".into());
            }
        }
        self.ci = Some(ConfidenceInterval { lo, hi, level });
        self.resamples = resamples;
        if self.notes.is_empty() {
            self.notes = "percentile bootstrap".into();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    WelchT,
    OnewayAnova,
    Mcnemar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DegreesOfFreedom {
    One(f64),
    Two(f64, f64),
}

/// Outcome of a hypothesis test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: TestKind,
    pub statistic: f64,
    pub df: DegreesOfFreedom,
    pub p_value: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}
