//! Platt scaling: a two-parameter logistic fit on top of scores.

use serde::{Deserialize, Serialize};

use super::CalibrationError;

pub const SEPARATION_SLOPE_CAP: f64 = 50.0;
const GRADIENT_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattFit {
    pub a: f64,
    pub b: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    /// The classes are perfectly separable by score; the slope was capped.
    pub perfect_separation: bool,
}

impl PlattFit {
    pub fn predict(&self, score: f64) -> f64 {
        sigmoid(self.a * score + self.b)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn log_likelihood(z: &[f64], y: &[bool], a: f64, b: f64) -> f64 {
    z.iter()
        .zip(y)
        .map(|(&z, &y)| {
            let eta = a * z + b;
            if y {
                -softplus(-eta)
            } else {
                -softplus(eta)
            }
        })
        .sum()
}

fn separable(z: &[f64], y: &[bool]) -> bool {
    let range = |class: bool| {
        z.iter()
            .zip(y)
            .filter(|(_, &l)| l == class)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&v, _)| (lo.min(v), hi.max(v)))
    };
    let (lo1, hi1) = range(true);
    let (lo0, hi0) = range(false);
    hi0 < lo1 || hi1 < lo0
}

/// Newton iterations with step halving on the Bernoulli log-likelihood,
/// starting from `a = 0`, `b = logit(base rate)`.
pub fn fit_platt(scores: &[f64], labels: &[bool], max_iter: usize) -> Result<PlattFit, CalibrationError> {
    if scores.len() != labels.len() {
        return Err(CalibrationError::LengthMismatch { left: scores.len(), right: labels.len() });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(CalibrationError::InvalidInput("scores must be finite".into()));
    }
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 || positives == labels.len() {
        return Err(CalibrationError::DegenerateLabels);
    }
    let perfect_separation = separable(scores, labels);
    let rate = positives as f64 / labels.len() as f64;
    let (mut a, mut b) = (0.0, (rate / (1.0 - rate)).ln());
    let mut ll = log_likelihood(scores, labels, a, b);
    let mut iterations = 0;
    let mut gradient_norm;

    loop {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&z, &y) in scores.iter().zip(labels) {
            let p = sigmoid(a * z + b);
            let r = if y { 1.0 } else { 0.0 } - p;
            let w = p * (1.0 - p);
            ga += r * z;
            gb += r;
            haa += w * z * z;
            hab += w * z;
            hbb += w;
        }
        gradient_norm = (ga * ga + gb * gb).sqrt();
        if gradient_norm < GRADIENT_TOLERANCE || iterations >= max_iter {
            break;
        }
        iterations += 1;
        // solve the 2x2 system (negated Hessian) * step = gradient
        let ridge = 1e-12 * (1.0 + haa + hbb);
        let (haa, hbb) = (haa + ridge, hbb + ridge);
        let det = haa * hbb - hab * hab;
        let (da, db) = ((hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det);
        // near the optimum likelihood differences drown in rounding, so a
        // step only has to avoid a decrease beyond that noise
        let noise = 1e-12 * (1.0 + ll.abs());
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let na = (a + t * da).clamp(-SEPARATION_SLOPE_CAP, SEPARATION_SLOPE_CAP);
            let nb = b + t * db;
            let next = log_likelihood(scores, labels, na, nb);
            if next >= ll - noise {
                accepted = (na, nb) != (a, b);
                a = na;
                b = nb;
                ll = ll.max(next);
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(PlattFit {
        a,
        b,
        iterations,
        converged: gradient_norm < GRADIENT_TOLERANCE,
        gradient_norm,
        perfect_separation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn true_log_odds_recover_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = Normal::new(0.0, 1.5).unwrap();
        let z: Vec<f64> = (0..2_000).map(|_| normal.sample(&mut rng)).collect();
        let y: Vec<bool> = z.iter().map(|&s| rng.random::<f64>() < sigmoid(s)).collect();
        let fit = fit_platt(&z, &y, 100).unwrap();
        assert!((fit.a - 1.0).abs() < 0.1, "a = {}", fit.a);
        assert!(fit.b.abs() < 0.1, "b = {}", fit.b);
        assert!(fit.converged && fit.gradient_norm < 1e-8);
        assert!(!fit.perfect_separation);
    }

    #[test]
    fn uninformative_scores_predict_base_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let z: Vec<f64> = (0..4_000).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let y: Vec<bool> = (0..4_000).map(|_| rng.random::<f64>() < 0.3).collect();
        let fit = fit_platt(&z, &y, 100).unwrap();
        let rate = y.iter().filter(|&&v| v).count() as f64 / y.len() as f64;
        assert!(fit.a.abs() < 0.1, "a = {}", fit.a);
        assert!((fit.predict(0.0) - rate).abs() < 0.02);
        // at the optimum the mean prediction matches the base rate exactly
        let mean: f64 = z.iter().map(|&s| fit.predict(s)).sum::<f64>() / z.len() as f64;
        assert!((mean - rate).abs() < 1e-9);
    }

    #[test]
    fn separable_pair_is_flagged_and_capped() {
        let fit = fit_platt(&[-1.0, 1.0], &[false, true], 100).unwrap();
        assert!(fit.perfect_separation);
        assert!(fit.a.abs() <= SEPARATION_SLOPE_CAP);
        assert!(fit.predict(1.0) > 0.99 && fit.predict(-1.0) < 0.01);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(matches!(fit_platt(&[0.1, 0.2], &[true, true], 100), Err(CalibrationError::DegenerateLabels)));
    }
}
