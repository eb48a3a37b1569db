//! Seeded percentile bootstrap, with optional whole-cluster resampling.
//!
//! Every resample draws from its own ChaCha stream (`seed`, stream = resample
//! index), so intervals do not depend on the number of worker threads.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::StatsError;

pub const DEFAULT_RESAMPLES: usize = 10_000;
pub const DEFAULT_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: DEFAULT_RESAMPLES,
            level: DEFAULT_LEVEL,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub resamples: usize,
    /// Resamples on which the statistic was undefined and therefore skipped.
    pub undefined: usize,
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn collect_interval(mut values: Vec<Option<f64>>, config: &BootstrapConfig) -> Result<BootstrapInterval, StatsError> {
    let undefined = values.iter().filter(|v| v.is_none()).count();
    let mut defined: Vec<f64> = values.drain(..).flatten().collect();
    if defined.is_empty() {
        return Err(StatsError::StatisticUndefinedOnResample { undefined });
    }
    defined.sort_by(f64::total_cmp);
    let tail = (1.0 - config.level) / 2.0;
    Ok(BootstrapInterval {
        lo: quantile_sorted(&defined, tail),
        hi: quantile_sorted(&defined, 1.0 - tail),
        level: config.level,
        resamples: config.resamples,
        undefined,
    })
}

fn run_resamples<F>(count: usize, one: F) -> Vec<Option<f64>>
where
    F: Fn(usize) -> Option<f64> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..count).into_par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(one).collect()
    }
}

fn resample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn check_config(config: &BootstrapConfig) -> Result<(), StatsError> {
    if config.resamples == 0 {
        return Err(StatsError::InvalidInput("bootstrap needs at least one resample".into()));
    }
    if !(config.level > 0.0 && config.level < 1.0) {
        return Err(StatsError::InvalidInput(format!("confidence level {} not in (0, 1)", config.level)));
    }
    Ok(())
}

/// Percentile bootstrap interval of `statistic` over units resampled with
/// replacement.
pub fn bootstrap_ci<T, F>(data: &[T], statistic: F, config: &BootstrapConfig) -> Result<BootstrapInterval, StatsError>
where
    T: Clone + Sync,
    F: Fn(&[T]) -> Option<f64> + Sync,
{
    if data.is_empty() {
        return Err(StatsError::TooFewObservations { needed: 1, got: 0 });
    }
    check_config(config)?;
    let n = data.len();
    let values = run_resamples(config.resamples, |b| {
        let mut rng = resample_rng(config.seed, b);
        let sample: Vec<T> = (0..n).map(|_| data[rng.random_range(0..n)].clone()).collect();
        statistic(&sample)
    });
    collect_interval(values, config)
}

/// Cluster bootstrap: whole clusters (grouped by `cluster_key`) are drawn
/// with replacement and their members concatenated.
pub fn cluster_bootstrap_ci<T, K, G, F>(
    data: &[T],
    cluster_key: G,
    statistic: F,
    config: &BootstrapConfig,
) -> Result<BootstrapInterval, StatsError>
where
    T: Clone + Sync,
    K: Ord,
    G: Fn(&T) -> K,
    F: Fn(&[T]) -> Option<f64> + Sync,
{
    if data.is_empty() {
        return Err(StatsError::TooFewObservations { needed: 1, got: 0 });
    }
    check_config(config)?;
    let mut groups: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, x) in data.iter().enumerate() {
        groups.entry(cluster_key(x)).or_default().push(i);
    }
    let clusters: Vec<Vec<usize>> = groups.into_values().collect();
    let c = clusters.len();
    let values = run_resamples(config.resamples, |b| {
        let mut rng = resample_rng(config.seed, b);
        let mut sample = Vec::with_capacity(data.len());
        for _ in 0..c {
            for &i in &clusters[rng.random_range(0..c)] {
                sample.push(data[i].clone());
            }
        }
        statistic(&sample)
    });
    collect_interval(values, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean(xs: &[f64]) -> Option<f64> {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }

    #[test]
    fn constant_statistic_collapses() {
        let data = vec![1.0, 2.0, 3.0];
        let ci = bootstrap_ci(&data, |_| Some(4.2), &BootstrapConfig { resamples: 200, ..Default::default() }).unwrap();
        assert_eq!((ci.lo, ci.hi), (4.2, 4.2));
    }

    #[test]
    fn seeded_determinism() {
        let data: Vec<f64> = (0..40).map(|i| (i * 7 % 13) as f64).collect();
        let cfg = BootstrapConfig { resamples: 2_000, level: 0.9, seed: 99 };
        let a = bootstrap_ci(&data, mean, &cfg).unwrap();
        let b = bootstrap_ci(&data, mean, &cfg).unwrap();
        assert_eq!(a, b);
        let other = bootstrap_ci(&data, mean, &BootstrapConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn undefined_resamples_are_counted() {
        let data = vec![0.0, 1.0];
        // undefined whenever the resample is constant
        let stat = |xs: &[f64]| if xs[0] == xs[1] { None } else { Some(0.5) };
        let ci = bootstrap_ci(&data, stat, &BootstrapConfig { resamples: 1_000, ..Default::default() }).unwrap();
        assert!(ci.undefined > 350 && ci.undefined < 650, "{}", ci.undefined);
        assert_eq!(ci.lo, 0.5);
    }

    #[test]
    fn all_undefined_is_an_error() {
        let r = bootstrap_ci(&[1.0], |_| None, &BootstrapConfig { resamples: 10, ..Default::default() });
        assert!(matches!(r, Err(StatsError::StatisticUndefinedOnResample { undefined: 10 })));
    }

    #[test]
    fn cluster_resampling_keeps_clusters_whole() {
        // two clusters with constant values; every resample mean is 0, 0.5 or 1
        let data: Vec<(u8, f64)> = (0..10).map(|i| if i < 5 { (0, 0.0) } else { (1, 1.0) }).collect();
        let cfg = BootstrapConfig { resamples: 500, level: 0.5, seed: 3 };
        let ci = cluster_bootstrap_ci(&data, |x| x.0, |xs| mean(&xs.iter().map(|x| x.1).collect::<Vec<_>>()), &cfg)
            .unwrap();
        for v in [ci.lo, ci.hi] {
            assert!([0.0, 0.5, 1.0].iter().any(|&c| (v - c).abs() < 1e-12) || (0.0..=1.0).contains(&v));
        }
        assert!(ci.lo <= 0.5 && ci.hi >= 0.5);
    }

    #[test]
    fn quantiles_interpolate() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
        assert!((quantile_sorted(&s, 0.5) - 2.5).abs() < 1e-15);
    }
}
