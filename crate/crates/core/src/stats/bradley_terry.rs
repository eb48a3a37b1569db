//! Bradley–Terry strengths by minorization–maximization.

use serde::{Deserialize, Serialize};

use super::StatsError;

pub const ZERO_WIN_PSEUDO_COUNT: f64 = 1e-9;

/// `wins[i][j]` is the number of times item `i` beat item `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseWins {
    wins: Vec<Vec<u64>>,
}

impl PairwiseWins {
    pub fn new(n_items: usize) -> Self {
        Self { wins: vec![vec![0; n_items]; n_items] }
    }

    pub fn from_matrix(wins: Vec<Vec<u64>>) -> Result<Self, StatsError> {
        let n = wins.len();
        if wins.iter().any(|r| r.len() != n) {
            return Err(StatsError::DimensionMismatch("win matrix must be square".into()));
        }
        if (0..n).any(|i| wins[i][i] != 0) {
            return Err(StatsError::InvalidInput("win matrix diagonal must be zero".into()));
        }
        Ok(Self { wins })
    }

    pub fn record(&mut self, winner: usize, loser: usize) {
        assert_ne!(winner, loser, "an item cannot beat itself");
        self.wins[winner][loser] += 1;
    }

    pub fn n_items(&self) -> usize {
        self.wins.len()
    }

    pub fn wins(&self, i: usize, j: usize) -> u64 {
        self.wins[i][j]
    }

    fn comparisons(&self, i: usize, j: usize) -> u64 {
        self.wins[i][j] + self.wins[j][i]
    }

    /// Connected components of the comparison graph, each sorted.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.n_items();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut stack = vec![start];
            let mut comp = Vec::new();
            seen[start] = true;
            while let Some(i) = stack.pop() {
                comp.push(i);
                for j in 0..n {
                    if !seen[j] && self.comparisons(i, j) > 0 {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BradleyTerryModel {
    /// Positive strengths summing to one.
    pub strengths: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Items that received the zero-win pseudo-count.
    pub smoothed_items: Vec<usize>,
}

impl BradleyTerryModel {
    /// Probability that `i` beats `j`.
    pub fn win_probability(&self, i: usize, j: usize) -> f64 {
        self.strengths[i] / (self.strengths[i] + self.strengths[j])
    }

    /// Item indices from strongest to weakest.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.strengths.len()).collect();
        idx.sort_by(|&a, &b| self.strengths[b].total_cmp(&self.strengths[a]));
        idx
    }
}

pub fn bradley_terry_fit(wins: &PairwiseWins, max_iter: usize, tol: f64) -> Result<BradleyTerryModel, StatsError> {
    let n = wins.n_items();
    bradley_terry_fit_from(wins, &vec![1.0 / n.max(1) as f64; n], max_iter, tol)
}

/// MM iteration from an explicit positive starting point.
pub fn bradley_terry_fit_from(
    wins: &PairwiseWins,
    start: &[f64],
    max_iter: usize,
    tol: f64,
) -> Result<BradleyTerryModel, StatsError> {
    let n = wins.n_items();
    if n == 0 {
        return Err(StatsError::TooFewObservations { needed: 1, got: 0 });
    }
    if start.len() != n || start.iter().any(|&s| !(s > 0.0)) {
        return Err(StatsError::InvalidInput("starting strengths must be positive, one per item".into()));
    }
    let components = wins.components();
    if components.len() > 1 {
        return Err(StatsError::DisconnectedGraph { components });
    }
    let mut smoothed_items = Vec::new();
    let totals: Vec<f64> = (0..n)
        .map(|i| {
            let w: u64 = (0..n).map(|j| wins.wins(i, j)).sum();
            if w == 0 {
                smoothed_items.push(i);
                ZERO_WIN_PSEUDO_COUNT
            } else {
                w as f64
            }
        })
        .collect();

    let sum: f64 = start.iter().sum();
    let mut pi: Vec<f64> = start.iter().map(|s| s / sum).collect();
    let mut converged = n == 1;
    let mut iterations = 0;
    while !converged && iterations < max_iter {
        iterations += 1;
        let mut next: Vec<f64> = (0..n)
            .map(|i| {
                let denom: f64 = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| wins.comparisons(i, j) as f64 / (pi[i] + pi[j]))
                    .sum();
                totals[i] / denom
            })
            .collect();
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= s);
        let delta = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        pi = next;
        converged = delta < tol;
    }
    Ok(BradleyTerryModel {
        strengths: pi,
        iterations,
        converged,
        smoothed_items,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_item_fixed_point() {
        let w = PairwiseWins::from_matrix(vec![vec![0, 3], vec![1, 0]]).unwrap();
        let m = bradley_terry_fit(&w, 1000, 1e-10).unwrap();
        assert!((m.strengths[0] / m.strengths[1] - 3.0).abs() < 1e-6);
        assert!(m.converged);
    }

    #[test]
    fn symmetric_is_uniform() {
        let w = PairwiseWins::from_matrix(vec![vec![0, 2, 2], vec![2, 0, 2], vec![2, 2, 0]]).unwrap();
        let m = bradley_terry_fit(&w, 1000, 1e-10).unwrap();
        for s in m.strengths {
            assert!((s - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn disconnected_graph_names_components() {
        let w = PairwiseWins::from_matrix(vec![
            vec![0, 1, 0, 0],
            vec![1, 0, 0, 0],
            vec![0, 0, 0, 2],
            vec![0, 0, 1, 0],
        ])
        .unwrap();
        match bradley_terry_fit(&w, 100, 1e-10) {
            Err(StatsError::DisconnectedGraph { components }) => {
                assert_eq!(components, vec![vec![0, 1], vec![2, 3]]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_win_item_is_smoothed() {
        let w = PairwiseWins::from_matrix(vec![vec![0, 4], vec![0, 0]]).unwrap();
        let m = bradley_terry_fit(&w, 200, 1e-12).unwrap();
        assert_eq!(m.smoothed_items, vec![1]);
        assert!(m.strengths.iter().all(|&s| s > 0.0));
        assert!(m.strengths[0] > m.strengths[1]);
    }

    #[test]
    fn scaling_and_start_invariance() {
        let base = vec![vec![0, 5, 7], vec![3, 0, 6], vec![2, 4, 0]];
        let scaled: Vec<Vec<u64>> = base.iter().map(|r| r.iter().map(|x| x * 3).collect()).collect();
        let a = bradley_terry_fit(&PairwiseWins::from_matrix(base.clone()).unwrap(), 5000, 1e-13).unwrap();
        let b = bradley_terry_fit(&PairwiseWins::from_matrix(scaled).unwrap(), 5000, 1e-13).unwrap();
        for (x, y) in a.strengths.iter().zip(&b.strengths) {
            assert!((x - y).abs() < 1e-9);
        }
        let w = PairwiseWins::from_matrix(base).unwrap();
        for start in [[0.7, 0.2, 0.1], [0.1, 0.1, 0.8], [1.0, 5.0, 2.0], [3.0, 3.0, 1.0], [0.01, 0.5, 0.49]] {
            let m = bradley_terry_fit_from(&w, &start, 5000, 1e-13).unwrap();
            assert_eq!(m.ranking(), a.ranking());
        }
    }
}
