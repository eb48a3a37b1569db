//! Isotonic calibration via pool-adjacent-violators.

use serde::{Deserialize, Serialize};

use super::CalibrationError;

/// Nondecreasing step function. `values[k]` applies from `breakpoints[k]`
/// up to the next breakpoint; inputs outside the range clamp to the ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicFunction {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl IsotonicFunction {
    pub fn predict(&self, x: f64) -> f64 {
        let k = self.breakpoints.partition_point(|&b| b <= x);
        self.values[k.saturating_sub(1)]
    }
}

struct Block {
    start: f64,
    sum: f64,
    weight: f64,
}

impl Block {
    fn mean(&self) -> f64 {
        self.sum / self.weight
    }
}

/// Least-squares monotone fit of binary outcomes on predictions.
pub fn fit_isotonic(predicted: &[f64], outcomes: &[bool]) -> Result<IsotonicFunction, CalibrationError> {
    super::scores::check_inputs(predicted, outcomes)?;
    if predicted.is_empty() {
        return Err(CalibrationError::TooFewExamples { needed: 1, got: 0 });
    }
    let mut order: Vec<usize> = (0..predicted.len()).collect();
    order.sort_by(|&a, &b| predicted[a].total_cmp(&predicted[b]));

    // tied predictions must share a value, so they start out as one block
    let mut blocks: Vec<Block> = Vec::new();
    for &i in &order {
        let y = if outcomes[i] { 1.0 } else { 0.0 };
        match blocks.last_mut() {
            Some(last) if last.start == predicted[i] => {
                last.sum += y;
                last.weight += 1.0;
            }
            _ => blocks.push(Block { start: predicted[i], sum: y, weight: 1.0 }),
        }
    }
    let mut pooled: Vec<Block> = Vec::with_capacity(blocks.len());
    for block in blocks {
        pooled.push(block);
        while pooled.len() > 1 && pooled[pooled.len() - 2].mean() > pooled[pooled.len() - 1].mean() {
            let top = pooled.pop().unwrap();
            let below = pooled.last_mut().unwrap();
            below.sum += top.sum;
            below.weight += top.weight;
        }
    }
    Ok(IsotonicFunction {
        breakpoints: pooled.iter().map(|b| b.start).collect(),
        values: pooled.iter().map(Block::mean).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mse(f: &IsotonicFunction, p: &[f64], y: &[bool]) -> f64 {
        p.iter()
            .zip(y)
            .map(|(&p, &y)| (f.predict(p) - if y { 1.0 } else { 0.0 }).powi(2))
            .sum::<f64>()
            / p.len() as f64
    }

    #[test]
    fn single_violation_pools() {
        let f = fit_isotonic(&[0.2, 0.8], &[true, false]).unwrap();
        assert_eq!(f.values, vec![0.5]);
        assert_eq!(f.predict(0.2), 0.5);
        assert_eq!(f.predict(0.8), 0.5);
    }

    #[test]
    fn monotone_outcomes_are_reproduced() {
        let p = [0.1, 0.3, 0.5, 0.9];
        let y = [false, false, true, true];
        let f = fit_isotonic(&p, &y).unwrap();
        for (&p, &y) in p.iter().zip(&y) {
            assert_eq!(f.predict(p), if y { 1.0 } else { 0.0 });
        }
        assert_eq!(f.predict(0.0), 0.0);
        assert_eq!(f.predict(1.0), 1.0);
    }

    #[test]
    fn pooling_preserves_mean() {
        let p = [0.9, 0.1, 0.4, 0.4, 0.6, 0.2, 0.7];
        let y = [false, true, true, false, false, true, true];
        let f = fit_isotonic(&p, &y).unwrap();
        let fitted: f64 = p.iter().map(|&x| f.predict(x)).sum();
        let observed = y.iter().filter(|&&v| v).count() as f64;
        assert!((fitted - observed).abs() < 1e-12);
        assert!(f.values.windows(2).all(|w| w[0] <= w[1]));
    }

    /// Minimum MSE over all contiguous partitions of the distinct sorted
    /// predictions whose block means are nondecreasing.
    fn brute_force(p: &[f64], y: &[bool]) -> f64 {
        let mut groups: Vec<(f64, f64, f64)> = Vec::new();
        let mut idx: Vec<usize> = (0..p.len()).collect();
        idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
        for i in idx {
            let v = if y[i] { 1.0 } else { 0.0 };
            match groups.last_mut() {
                Some(g) if g.0 == p[i] => {
                    g.1 += v;
                    g.2 += 1.0;
                }
                _ => groups.push((p[i], v, 1.0)),
            }
        }
        let g = groups.len();
        let mut best = f64::INFINITY;
        for cuts in 0u32..(1 << (g - 1)) {
            let mut means = Vec::new();
            let (mut s, mut w) = (0.0, 0.0);
            for (k, grp) in groups.iter().enumerate() {
                s += grp.1;
                w += grp.2;
                if k == g - 1 || cuts & (1 << k) != 0 {
                    means.push((s / w, s, w));
                    s = 0.0;
                    w = 0.0;
                }
            }
            if means.windows(2).any(|m| m[0].0 > m[1].0) {
                continue;
            }
            // squared error of binary values around each block mean
            let sse: f64 = means.iter().map(|&(m, s, w)| s * (1.0 - m).powi(2) + (w - s) * m * m).sum();
            best = best.min(sse / p.len() as f64);
        }
        best
    }

    fn multisets(n: usize, grid: &[f64], start: usize, cur: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for k in start..grid.len() {
            cur.push(grid[k]);
            multisets(n, grid, k, cur, out);
            cur.pop();
        }
    }

    #[test]
    fn exhaustive_small_datasets_match_brute_force() {
        let grid: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        let mut checked = 0usize;
        for n in 1..=6 {
            let mut sets = Vec::new();
            multisets(n, &grid, 0, &mut Vec::new(), &mut sets);
            for p in &sets {
                for pattern in 0u32..(1 << n) {
                    let y: Vec<bool> = (0..n).map(|k| pattern & (1 << k) != 0).collect();
                    let f = fit_isotonic(p, &y).unwrap();
                    let got = mse(&f, p, &y);
                    let want = brute_force(p, &y);
                    assert!((got - want).abs() < 1e-9, "p={p:?} y={y:?}: {got} vs {want}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 500_000);
    }
}
