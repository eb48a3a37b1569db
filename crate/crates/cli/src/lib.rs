//! The `annokit` command line: validate → collect → aggregate → report →
//! audit → export, plus audit-set freezing and human-review triage.
//!
//! Every command returns an exit code following [`error`]'s contract, so the
//! pipeline can be scripted and tested in-process through [`run`].

pub mod audit;
pub mod bundle;
pub mod context;
pub mod error;
pub mod methods;
pub mod pipeline;
pub mod report;
pub mod triage;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::context::GatewayKind;
use crate::error::{CmdResult, EXIT_OK};

#[derive(Debug, Parser)]
#[command(name = "annokit", version, about = "Variance-aware annotation pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Project manifest (YAML).
    #[arg(long, global = true, default_value = "manifest.yaml")]
    pub manifest: PathBuf,
    /// Use this run id instead of the manifest's.
    #[arg(long, global = true)]
    pub run_id: Option<String>,
    /// Replace the collection seed; refused once the run is sealed.
    #[arg(long, global = true)]
    pub seed_override: Option<u64>,
    /// Resolve output paths under this directory instead of the manifest's.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pre-flight check of the manifest and every referenced artifact.
    Validate,
    /// Freeze the audit set from the corpus and write it with its hash.
    FreezeAudit(FreezeArgs),
    /// Execute the sampling plan and seal the raw logs.
    Collect(CollectArgs),
    /// Build the staged aggregate table.
    Aggregate(AggregateArgs),
    /// Agreement, calibration and diagnostics reports plus the methods table.
    Report(ReportArgs),
    /// Compare the audit-set metric with a baseline run and log the drift decision.
    Audit(AuditArgs),
    /// Route items to human review, or merge adjudicated reviews.
    Triage(TriageArgs),
    /// Write the materials bundle.
    Export,
}

#[derive(Debug, Clone, Args)]
pub struct FreezeArgs {
    #[arg(long, default_value_t = annokit::workspace::audit::DEFAULT_AUDIT_SIZE)]
    pub size: usize,
    /// Metadata key to stratify on.
    #[arg(long, requires = "proportions")]
    pub strata_key: Option<String>,
    /// Stratum shares, e.g. `proto=0.6,boundary=0.3,edge=0.1`.
    #[arg(long)]
    pub proportions: Option<String>,
    /// Store gold labels of the selected items as consensus labels.
    #[arg(long)]
    pub with_consensus: bool,
    /// Creation timestamp (RFC 3339); defaults to now.
    #[arg(long)]
    pub created: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct CollectArgs {
    #[arg(long, value_enum, default_value_t = GatewayKind::Auto)]
    pub gateway: GatewayKind,
    /// Complete only the cells missing from an interrupted run.
    #[arg(long)]
    pub resume: bool,
    /// Collect the final pass (one draw at the final temperature) instead.
    #[arg(long = "final")]
    pub final_pass: bool,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct AggregateArgs {
    /// baseline (majority/median), ds, or glad.
    #[arg(long, default_value = "baseline")]
    pub mode: String,
    /// Standardize numeric slots within each (prompt, model).
    #[arg(long)]
    pub zscore: bool,
    /// Trimmed mean with this per-tail fraction instead of the median.
    #[arg(long)]
    pub trim: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Bootstrap resamples for every interval.
    #[arg(long, default_value_t = annokit::stats::bootstrap::DEFAULT_RESAMPLES)]
    pub resamples: usize,
}

#[derive(Debug, Clone, Args)]
pub struct AuditArgs {
    /// Run id of the pinned baseline.
    #[arg(long)]
    pub baseline: String,
    /// What changed, recorded in the drift log.
    #[arg(long, default_value = "scheduled audit")]
    pub trigger: String,
    /// Audit date (YYYY-MM-DD); defaults to today.
    #[arg(long)]
    pub date: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct TriageArgs {
    /// Slot to triage; defaults to the first categorical slot.
    #[arg(long)]
    pub slot: Option<String>,
    /// Merge adjudicated reviews from this CSV instead of detecting escalations.
    #[arg(long)]
    pub merge: Option<PathBuf>,
}

/// Run one command and return its exit code; errors are printed to stderr.
pub fn run(cli: Cli) -> u8 {
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

fn dispatch(cli: &Cli) -> CmdResult<u8> {
    let g = &cli.global;
    match &cli.command {
        Command::Validate => pipeline::validate(g),
        Command::FreezeAudit(a) => pipeline::freeze_audit(g, a).map(|_| EXIT_OK),
        Command::Collect(a) => pipeline::collect(g, a).map(|_| EXIT_OK),
        Command::Aggregate(a) => pipeline::aggregate(g, a).map(|_| EXIT_OK),
        Command::Report(a) => report::report(g, a).map(|_| EXIT_OK),
        Command::Audit(a) => audit::audit(g, a),
        Command::Triage(a) => triage::triage(g, a).map(|_| EXIT_OK),
        Command::Export => bundle::export(g).map(|_| EXIT_OK),
    }
}
