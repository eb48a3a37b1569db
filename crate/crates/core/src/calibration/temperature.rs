//! Single-parameter temperature scaling fitted by golden-section search.

use serde::{Deserialize, Serialize};

use super::CalibrationError;

pub const MIN_TEMPERATURE: f64 = 0.05;
pub const MAX_TEMPERATURE: f64 = 20.0;
const MIN_EXAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub temperature: f64,
    pub nll: f64,
    /// Mean NLL of the unscaled logits (T = 1).
    pub nll_unscaled: f64,
    pub iterations: usize,
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Mean negative log-likelihood of `softmax(logits / t)`.
pub fn scaled_nll(logits: &[Vec<f64>], labels: &[usize], t: f64) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(z, &y)| log_sum_exp(z.iter().map(|v| v / t)) - z[y] / t)
        .sum();
    total / logits.len() as f64
}

/// Softmax of `logits / t`.
pub fn scaled_probabilities(logits: &[f64], t: f64) -> Vec<f64> {
    let lse = log_sum_exp(logits.iter().map(|v| v / t));
    logits.iter().map(|v| (v / t - lse).exp()).collect()
}

/// Fit the temperature minimizing mean NLL over `log T` in
/// `[ln 0.05, ln 20]`. Log-probabilities are valid logits.
pub fn fit_temperature(logits: &[Vec<f64>], labels: &[usize], max_iter: usize) -> Result<TemperatureFit, CalibrationError> {
    if logits.len() != labels.len() {
        return Err(CalibrationError::LengthMismatch { left: logits.len(), right: labels.len() });
    }
    if logits.len() < MIN_EXAMPLES {
        return Err(CalibrationError::TooFewExamples { needed: MIN_EXAMPLES, got: logits.len() });
    }
    let k = logits[0].len();
    if k < 2 || logits.iter().any(|z| z.len() != k) {
        return Err(CalibrationError::InvalidInput("logits need a fixed class count of at least 2".into()));
    }
    if logits.iter().flatten().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(CalibrationError::InvalidInput("logits must not be NaN or +inf".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(CalibrationError::InvalidInput(format!("label {bad} outside 0..{k}")));
    }
    if labels.iter().all(|&y| y == labels[0]) {
        return Err(CalibrationError::DegenerateLabels);
    }

    let f = |log_t: f64| scaled_nll(logits, labels, log_t.exp());
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (MIN_TEMPERATURE.ln(), MAX_TEMPERATURE.ln());
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut iterations = 0;
    while iterations < max_iter && (b - a) > 1e-12 {
        iterations += 1;
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    let (mut log_t, mut nll) = if fc <= fd { (c, fc) } else { (d, fd) };
    let mid = (a + b) / 2.0;
    let f_mid = f(mid);
    if f_mid < nll {
        log_t = mid;
        nll = f_mid;
    }
    let nll_unscaled = f(0.0);
    // the unit temperature lies inside the bracket; never report worse than it
    if nll_unscaled < nll {
        log_t = 0.0;
        nll = nll_unscaled;
    }
    Ok(TemperatureFit {
        temperature: log_t.exp(),
        nll,
        nll_unscaled,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Logits with labels drawn from their own softmax.
    fn calibrated(n: usize, k: usize, scale: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, scale).unwrap();
        let mut logits = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let z: Vec<f64> = (0..k).map(|_| normal.sample(&mut rng)).collect();
            let p = scaled_probabilities(&z, 1.0);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut y = k - 1;
            for (j, pj) in p.iter().enumerate() {
                acc += pj;
                if u < acc {
                    y = j;
                    break;
                }
            }
            logits.push(z);
            labels.push(y);
        }
        (logits, labels)
    }

    #[test]
    fn calibrated_logits_fit_near_one() {
        let (z, y) = calibrated(20_000, 3, 2.0, 1);
        let fit = fit_temperature(&z, &y, 200).unwrap();
        assert!((0.95..=1.05).contains(&fit.temperature), "{}", fit.temperature);
        assert!(fit.nll <= fit.nll_unscaled + 1e-12);
    }

    #[test]
    fn recovers_inverse_scaling() {
        let (z, y) = calibrated(20_000, 3, 2.0, 2);
        let hot: Vec<Vec<f64>> = z.iter().map(|r| r.iter().map(|v| v * 2.5).collect()).collect();
        let fit = fit_temperature(&hot, &y, 200).unwrap();
        assert!((2.45..=2.55).contains(&fit.temperature), "{}", fit.temperature);
    }

    #[test]
    fn unit_temperature_is_raw_nll() {
        let z = vec![vec![0.3, -1.2], vec![2.0, 0.5]];
        let y = vec![0, 1];
        let direct: f64 = z
            .iter()
            .zip(&y)
            .map(|(z, &y)| {
                let p: Vec<f64> = z.iter().map(|v: &f64| v.exp()).collect();
                -(p[y] / p.iter().sum::<f64>()).ln()
            })
            .sum::<f64>()
            / 2.0;
        assert!((scaled_nll(&z, &y, 1.0) - direct).abs() < 1e-14);
        let p = scaled_probabilities(&z[0], 1.0);
        assert!((p[0] - z[0][0].exp() / (z[0][0].exp() + z[0][1].exp())).abs() < 1e-15);
    }

    #[test]
    fn degenerate_labels() {
        let z = vec![vec![0.0, 1.0]; 12];
        assert!(matches!(fit_temperature(&z, &[1; 12], 200), Err(CalibrationError::DegenerateLabels)));
        assert!(matches!(fit_temperature(&z[..3], &[0, 1, 0], 200), Err(CalibrationError::TooFewExamples { .. })));
    }
}
