use super::StatsError;

/// 1-Wasserstein distance between two empirical distributions on the line.
///
/// Equal sizes use the mean absolute difference of order statistics;
/// otherwise the area between the two empirical CDFs is summed exactly over
/// the merged support.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::TooFewObservations { needed: 1, got: 0 });
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(StatsError::InvalidInput("samples must be finite".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);

    if a.len() == b.len() {
        // running mean: exact when all gaps are equal
        let mut mean = 0.0;
        for (k, (x, y)) in a.iter().zip(&b).enumerate() {
            mean += ((y - x).abs() - mean) / (k + 1) as f64;
        }
        return Ok(mean);
    }

    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut total = 0.0;
    let mut prev = a[0].min(b[0]);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        let fa = i as f64 / na;
        let fb = j as f64 / nb;
        total += (fa - fb).abs() * (next - prev);
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}
