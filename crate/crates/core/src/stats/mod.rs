//! Agreement, hypothesis-test, distance, bootstrap and ranking statistics.

pub mod bootstrap;
pub mod bradley_terry;
pub mod hypothesis;
pub mod icc;
pub mod kappa;
pub mod kendall;
pub mod krippendorff;
pub mod overlap;
pub mod report;
pub mod special;
pub mod wasserstein;

use thiserror::Error;

pub use bootstrap::{bootstrap_ci, cluster_bootstrap_ci, BootstrapConfig, BootstrapInterval};
pub use bradley_terry::{bradley_terry_fit, BradleyTerryModel, PairwiseWins};
pub use hypothesis::{flip_rate_and_mcnemar, oneway_anova, pairwise_welch_holm, welch_t, FlipDiagnostic};
pub use icc::{icc, IccForm};
pub use kappa::{cohen_kappa, fleiss_kappa, per_item_kappa, percent_agreement, weighted_kappa, KappaWeights};
pub use kendall::kendall_w;
pub use krippendorff::{krippendorff_alpha, AlphaMetric};
pub use overlap::{exact_match_f1, SpanCase};
pub use report::{AgreementMetric, AgreementReport, ConfidenceInterval, ReportUnit, TestKind, TestResult};
pub use wasserstein::wasserstein1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("paired inputs differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no pairable values")]
    InsufficientPairableData,
    #[error("matrix has missing or non-finite cells")]
    IncompleteMatrix,
    #[error("need at least two items to rank")]
    SingleItem,
    #[error("statistic undefined on every resample ({undefined} skipped)")]
    StatisticUndefinedOnResample { undefined: usize },
    #[error("comparison graph is disconnected: {components:?}")]
    DisconnectedGraph { components: Vec<Vec<usize>> },
}
