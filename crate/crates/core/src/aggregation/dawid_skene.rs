//! Dawid–Skene latent-class model fitted by EM.
//!
//! Confusion matrices are stored row-stochastic with the *true* label on
//! the row: `confusion[m][k][j] = p(rater m says j | truth k)`. The M-step
//! adds a small pseudo-count to every cell, which is exactly MAP estimation
//! under a flat-plus-epsilon Dirichlet prior; `loglik_trace` therefore
//! records the penalized objective, the quantity EM provably never
//! decreases. The plain log-likelihood at the final iterate is reported
//! separately.

use serde::{Deserialize, Serialize};

use super::AggregationError;

pub const CONFUSION_SMOOTHING: f64 = 1e-6;
pub const VOTE_SHARE_SMOOTHING: f64 = 1e-3;
pub const DEFAULT_MAX_ITER: usize = 500;
pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DawidSkeneModel {
    pub k: usize,
    pub priors: Vec<f64>,
    pub confusion: Vec<Vec<Vec<f64>>>,
    pub posteriors: Vec<Vec<f64>>,
    pub loglik_trace: Vec<f64>,
    /// Unpenalized log-likelihood of the data at the returned parameters.
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl DawidSkeneModel {
    /// MAP label per item (lowest index wins exact ties).
    pub fn map_labels(&self) -> Vec<usize> {
        self.posteriors.iter().map(|q| argmax(q)).collect()
    }
}

pub(crate) fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Check shape, label range, and that every item carries a label.
pub(crate) fn check_matrix(labels: &[Vec<Option<usize>>], k: usize) -> Result<usize, AggregationError> {
    if labels.is_empty() {
        return Err(AggregationError::DegenerateInput("no items".into()));
    }
    let raters = labels[0].len();
    for (i, row) in labels.iter().enumerate() {
        if row.len() != raters {
            return Err(AggregationError::DegenerateInput(format!("item {i} has {} raters, expected {raters}", row.len())));
        }
        if row.iter().all(Option::is_none) {
            return Err(AggregationError::DegenerateInput(format!("item {i} has no labels")));
        }
        if let Some(bad) = row.iter().flatten().find(|&&z| z >= k) {
            return Err(AggregationError::DegenerateInput(format!("label index {bad} outside 0..{k}")));
        }
    }
    Ok(raters)
}

/// Per-item vote shares with a small additive smoothing.
pub(crate) fn vote_shares(labels: &[Vec<Option<usize>>], k: usize) -> Vec<Vec<f64>> {
    labels
        .iter()
        .map(|row| {
            let mut q = vec![VOTE_SHARE_SMOOTHING; k];
            row.iter().flatten().for_each(|&z| q[z] += 1.0);
            let total: f64 = q.iter().sum();
            q.iter().map(|x| x / total).collect()
        })
        .collect()
}

struct Params {
    priors: Vec<f64>,
    confusion: Vec<Vec<Vec<f64>>>,
}

fn m_step(labels: &[Vec<Option<usize>>], q: &[Vec<f64>], k: usize, raters: usize) -> Params {
    let n = labels.len() as f64;
    let priors = (0..k).map(|c| q.iter().map(|qi| qi[c]).sum::<f64>() / n).collect();
    let confusion = (0..raters)
        .map(|m| {
            let mut counts = vec![vec![CONFUSION_SMOOTHING; k]; k];
            for (row, qi) in labels.iter().zip(q) {
                if let Some(z) = row[m] {
                    for c in 0..k {
                        counts[c][z] += qi[c];
                    }
                }
            }
            counts
                .into_iter()
                .map(|r| {
                    let t: f64 = r.iter().sum();
                    r.into_iter().map(|x| x / t).collect()
                })
                .collect()
        })
        .collect();
    Params { priors, confusion }
}

/// Posteriors and the data log-likelihood under `p`.
fn e_step(labels: &[Vec<Option<usize>>], p: &Params, k: usize) -> (Vec<Vec<f64>>, f64) {
    let log_pi: Vec<f64> = p.priors.iter().map(|x| x.ln()).collect();
    let log_theta: Vec<Vec<Vec<f64>>> = p.confusion.iter().map(|t| t.iter().map(|r| r.iter().map(|x| x.ln()).collect()).collect()).collect();
    let mut ll = 0.0;
    let q = labels
        .iter()
        .map(|row| {
            let joint: Vec<f64> = (0..k)
                .map(|c| log_pi[c] + row.iter().enumerate().filter_map(|(m, z)| z.map(|z| log_theta[m][c][z])).sum::<f64>())
                .collect();
            let z = log_sum_exp(&joint);
            ll += z;
            joint.iter().map(|j| (j - z).exp()).collect()
        })
        .collect();
    (q, ll)
}

fn penalty(p: &Params) -> f64 {
    CONFUSION_SMOOTHING * p.confusion.iter().flatten().flatten().map(|x| x.ln()).sum::<f64>()
}

/// Fit by EM from vote-share posteriors; stops when the objective gains
/// less than `tol` or after `max_iter` E/M rounds.
pub fn dawid_skene_fit(labels: &[Vec<Option<usize>>], k: usize, max_iter: usize, tol: f64) -> Result<DawidSkeneModel, AggregationError> {
    if k < 2 {
        return Err(AggregationError::DegenerateInput(format!("need K ≥ 2 classes, got {k}")));
    }
    let raters = check_matrix(labels, k)?;
    let mut q = vote_shares(labels, k);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut params = m_step(labels, &q, k, raters);
    let mut ll = f64::NEG_INFINITY;
    for iter in 0..max_iter.max(1) {
        if iter > 0 {
            params = m_step(labels, &q, k, raters);
        }
        let (q_next, ll_next) = e_step(labels, &params, k);
        let objective = ll_next + penalty(&params);
        q = q_next;
        ll = ll_next;
        let gain = trace.last().map(|prev| objective - prev);
        trace.push(objective);
        if gain.is_some_and(|g: f64| g < tol) {
            converged = true;
            break;
        }
    }
    Ok(DawidSkeneModel {
        k,
        priors: params.priors,
        confusion: params.confusion,
        posteriors: q,
        iterations: trace.len(),
        loglik_trace: trace,
        log_likelihood: ll,
        converged,
    })
}

/// Plain majority vote per item over a label matrix (ties → lowest index).
pub fn majority_labels(labels: &[Vec<Option<usize>>], k: usize) -> Vec<usize> {
    vote_shares(labels, k).iter().map(|q| argmax(q)).collect()
}
