//! Deterministic confusion-matrix annotator for offline runs.
//!
//! The emission distribution for true label `k` is built in three steps:
//! start from row `θ[k]`, tilt by the prompt's per-label logit offsets, then
//! move mass `δ` onto whichever option was listed first. Decoding
//! temperature is applied last (`T = 0` is argmax). The label is drawn by
//! inverse CDF over the label set in its canonical order — not the shown
//! order — from a generator seeded by the request, so two requests that
//! differ only in option order share their random number and differ in
//! outcome only through the bias term.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotationRequest, AnnotatorError, AnnotatorGateway, ProviderStatus, RawResponse};
use crate::workspace::LabelMap;

const ROW_TOLERANCE: f64 = 1e-12;
/// Emitted when the annotator is configured to produce off-schema output.
pub const INVALID_TOKEN: &str = "???";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticAnnotator {
    /// Row = true label, column = emitted label.
    pub confusion: Vec<Vec<f64>>,
    #[serde(default)]
    pub position_bias: f64,
    /// Per-prompt additive logit offsets, one per label.
    #[serde(default)]
    pub prompt_offsets: BTreeMap<String, Vec<f64>>,
    /// Probability of emitting an unmappable token instead of a label.
    #[serde(default)]
    pub invalid_rate: f64,
    /// Width of uniform log-probability noise applied before argmax at
    /// temperature 0; emulates hardware nondeterminism. Off by default.
    #[serde(default)]
    pub jitter: Option<f64>,
}

impl SyntheticAnnotator {
    pub fn new(confusion: Vec<Vec<f64>>) -> Result<Self, AnnotatorError> {
        let a = Self { confusion, position_bias: 0.0, prompt_offsets: BTreeMap::new(), invalid_rate: 0.0, jitter: None };
        a.check()?;
        Ok(a)
    }

    /// K-label annotator that emits the true label with probability
    /// `accuracy` and spreads the rest evenly.
    pub fn symmetric(k: usize, accuracy: f64) -> Result<Self, AnnotatorError> {
        let off = (1.0 - accuracy) / (k as f64 - 1.0);
        Self::new((0..k).map(|i| (0..k).map(|j| if i == j { accuracy } else { off }).collect()).collect())
    }

    pub fn with_position_bias(mut self, delta: f64) -> Result<Self, AnnotatorError> {
        self.position_bias = delta;
        self.check()?;
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.confusion.len()
    }

    pub fn check(&self) -> Result<(), AnnotatorError> {
        let k = self.k();
        if k < 2 {
            return Err(AnnotatorError::InvalidAnnotator("need at least two labels".into()));
        }
        for (i, row) in self.confusion.iter().enumerate() {
            if row.len() != k {
                return Err(AnnotatorError::DimensionMismatch(format!("row {i} has {} entries, expected {k}", row.len())));
            }
            if row.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (row.iter().sum::<f64>() - 1.0).abs() > ROW_TOLERANCE {
                return Err(AnnotatorError::InvalidAnnotator(format!("row {i} is not a probability vector")));
            }
        }
        if !(0.0..1.0).contains(&self.position_bias) {
            return Err(AnnotatorError::InvalidAnnotator("position bias must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.invalid_rate) {
            return Err(AnnotatorError::InvalidAnnotator("invalid_rate must lie in [0, 1]".into()));
        }
        for (id, off) in &self.prompt_offsets {
            if off.len() != k || off.iter().any(|x| !x.is_finite()) {
                return Err(AnnotatorError::DimensionMismatch(format!("offsets for prompt `{id}` need {k} finite values")));
            }
        }
        Ok(())
    }

    /// Emission distribution before temperature, in canonical label order.
    pub fn emission_distribution(&self, true_label: usize, prompt_id: &str, permutation: &[usize]) -> Result<Vec<f64>, AnnotatorError> {
        let k = self.k();
        if true_label >= k {
            return Err(AnnotatorError::DimensionMismatch(format!("true label {true_label} outside 0..{k}")));
        }
        let mut sorted = permutation.to_vec();
        sorted.sort_unstable();
        if sorted != (0..k).collect::<Vec<_>>() {
            return Err(AnnotatorError::DimensionMismatch(format!("permutation {permutation:?} is not over {k} labels")));
        }
        let mut p = self.confusion[true_label].clone();
        if let Some(off) = self.prompt_offsets.get(prompt_id) {
            let tilted: Vec<f64> = p.iter().zip(off).map(|(p, o)| p * o.exp()).collect();
            let z: f64 = tilted.iter().sum();
            p = tilted.into_iter().map(|x| x / z).collect();
        }
        let delta = self.position_bias;
        if delta > 0.0 {
            p.iter_mut().for_each(|x| *x *= 1.0 - delta);
            p[permutation[0]] += delta;
        }
        Ok(p)
    }
}

/// Apply decoding temperature: `T = 0` puts all mass on the first mode.
fn temper(p: &[f64], t: f64) -> Vec<f64> {
    if t <= 0.0 {
        let best = p.iter().enumerate().fold(0, |b, (i, &x)| if x > p[b] { i } else { b });
        return (0..p.len()).map(|i| if i == best { 1.0 } else { 0.0 }).collect();
    }
    if (t - 1.0).abs() < f64::EPSILON {
        return p.to_vec();
    }
    let w: Vec<f64> = p.iter().map(|&x| if x > 0.0 { x.powf(1.0 / t) } else { 0.0 }).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// One synthetic annotation for an item whose true label is `true_label`.
pub fn synth_annotate(
    annotator: &SyntheticAnnotator,
    request: &AnnotationRequest,
    true_label: usize,
    labels: &LabelMap,
) -> Result<RawResponse, AnnotatorError> {
    if labels.k() != annotator.k() {
        return Err(AnnotatorError::DimensionMismatch(format!("annotator has {} labels, label map {}", annotator.k(), labels.k())));
    }
    let base = annotator.emission_distribution(true_label, &request.prompt_id, &request.option_permutation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(request.seed);
    let u: f64 = rng.random();
    let invalid_draw: f64 = rng.random();

    let t = request.decoding.temperature;
    let mut p = temper(&base, t);
    if let (Some(sd), true) = (annotator.jitter, t <= 0.0) {
        // perturb the pre-argmax scores, then take the argmax again
        let noisy: Vec<f64> = base
            .iter()
            .map(|&x| {
                let n: f64 = rng.random::<f64>() - 0.5;
                if x > 0.0 {
                    x.ln() + sd * n
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let best = noisy.iter().enumerate().fold(0, |b, (i, &x)| if x > noisy[b] { i } else { b });
        p = (0..p.len()).map(|i| if i == best { 1.0 } else { 0.0 }).collect();
    }

    let mut acc = 0.0;
    let mut drawn = p.iter().rposition(|&x| x > 0.0).unwrap_or(0);
    for (j, &pj) in p.iter().enumerate() {
        acc += pj;
        if u < acc {
            drawn = j;
            break;
        }
    }
    let logprobs: BTreeMap<String, f64> = p
        .iter()
        .enumerate()
        .filter(|(_, &x)| x > 0.0)
        .map(|(j, &x)| (labels.label(j).to_string(), x.ln()))
        .collect();
    let text = if invalid_draw < annotator.invalid_rate { INVALID_TOKEN.to_string() } else { labels.canonical_token(drawn).to_string() };
    Ok(RawResponse { text, label_logprobs: Some(logprobs), provider_status: ProviderStatus::Ok, latency_ms: 0 })
}

/// `θ' = (1 − f)·θ + f·uniform`.
pub fn perturbed_copy(annotator: &SyntheticAnnotator, flip_mass: f64) -> Result<SyntheticAnnotator, AnnotatorError> {
    if !(0.0..1.0).contains(&flip_mass) {
        return Err(AnnotatorError::InvalidAnnotator("flip mass must lie in [0, 1)".into()));
    }
    let k = annotator.k() as f64;
    let mut out = annotator.clone();
    for row in &mut out.confusion {
        for x in row.iter_mut() {
            *x = (1.0 - flip_mass) * *x + flip_mass / k;
        }
        // keep rows exactly stochastic after rounding
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= s);
    }
    Ok(out)
}

/// Gateway wrapping a synthetic annotator and the ground truth it simulates.
pub struct SyntheticGateway {
    pub name: String,
    pub annotator: SyntheticAnnotator,
    labels: LabelMap,
    truth: HashMap<String, usize>,
}

impl SyntheticGateway {
    pub fn new(name: impl Into<String>, annotator: SyntheticAnnotator, labels: LabelMap, truth: HashMap<String, usize>) -> Result<Self, AnnotatorError> {
        annotator.check()?;
        if labels.k() != annotator.k() {
            return Err(AnnotatorError::DimensionMismatch(format!("annotator has {} labels, label map {}", annotator.k(), labels.k())));
        }
        Ok(Self { name: name.into(), annotator, labels, truth })
    }
}

impl AnnotatorGateway for SyntheticGateway {
    fn annotate(&self, request: &AnnotationRequest) -> RawResponse {
        let start = Instant::now();
        let Some(&truth) = self.truth.get(&request.item_id) else {
            return RawResponse::failure(ProviderStatus::PermanentError, format!("no simulated truth for item `{}`", request.item_id));
        };
        match synth_annotate(&self.annotator, request, truth, &self.labels) {
            Ok(mut r) => {
                r.latency_ms = start.elapsed().as_millis() as u64;
                r
            }
            Err(e) => RawResponse::failure(ProviderStatus::PermanentError, e.to_string()),
        }
    }

    fn describe(&self) -> String {
        format!("synthetic:{}", self.name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotators::DecodingParams;
    use crate::stats::special::chi_square_upper_tail;

    fn request(seed: u64, perm: Vec<usize>) -> AnnotationRequest {
        AnnotationRequest {
            item_id: "i".into(),
            prompt_id: "p1".into(),
            prompt_index: 0,
            model_index: 0,
            sample_index: 0,
            rendered_sequence: String::new(),
            option_permutation: perm,
            decoding: DecodingParams { temperature: 1.0, top_p: 1.0, max_tokens: 1 },
            seed,
        }
    }

    #[test]
    fn noiseless_annotator() {
        let labels = LabelMap::simple(&["A", "B", "C"]).unwrap();
        let a = SyntheticAnnotator::new(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        for seed in 0..50 {
            let r = synth_annotate(&a, &request(seed, vec![2, 0, 1]), 1, &labels).unwrap();
            assert_eq!(r.text, "B");
            let lp = r.label_logprobs.unwrap();
            assert_eq!(lp.len(), 1);
            assert_eq!(lp["B"], 0.0);
        }
    }

    #[test]
    fn uniform_rows_pass_goodness_of_fit() {
        let k = 4;
        let labels = LabelMap::simple(&["A", "B", "C", "D"]).unwrap();
        let a = SyntheticAnnotator::new(vec![vec![0.25; k]; k]).unwrap();
        let n = 10_000;
        let mut counts = vec![0usize; k];
        for seed in 0..n {
            let r = synth_annotate(&a, &request(seed as u64, vec![0, 1, 2, 3]), 2, &labels).unwrap();
            counts[labels.lookup(&r.text).unwrap()] += 1;
        }
        let expected = n as f64 / k as f64;
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for &c in &counts {
            assert!((c as f64 - expected).abs() < 3.0 * sigma, "{counts:?}");
        }
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi_square_upper_tail(chi2, (k - 1) as f64) > 0.001, "chi2 = {chi2}");
    }

    #[test]
    fn skewed_binary_marginal() {
        // a rater whose answers are 85% A regardless of the item
        let labels = LabelMap::simple(&["A", "B"]).unwrap();
        let a = SyntheticAnnotator::new(vec![vec![0.85, 0.15], vec![0.85, 0.15]]).unwrap();
        let r = synth_annotate(&a, &request(0, vec![0, 1]), 0, &labels).unwrap();
        assert!((r.label_logprobs.unwrap()["A"].exp() - 0.85).abs() < 1e-15);
        let a_count = (0..20)
            .filter(|&s| synth_annotate(&a, &request(1000 + s, vec![0, 1]), s as usize % 2, &labels).unwrap().text == "A")
            .count();
        // 20 draws: mean 17, sd 1.6
        assert!((12..=20).contains(&a_count), "{a_count}");
    }

    #[test]
    fn determinism_and_bias_reallocation() {
        let labels = LabelMap::simple(&["A", "B"]).unwrap();
        let a = SyntheticAnnotator::new(vec![vec![0.7, 0.3], vec![0.2, 0.8]]).unwrap().with_position_bias(0.24).unwrap();
        let x = synth_annotate(&a, &request(77, vec![1, 0]), 0, &labels).unwrap();
        let y = synth_annotate(&a, &request(77, vec![1, 0]), 0, &labels).unwrap();
        assert_eq!(x, y);
        let ab = a.emission_distribution(0, "p1", &[0, 1]).unwrap();
        let ba = a.emission_distribution(0, "p1", &[1, 0]).unwrap();
        // moving the first slot from A to B shifts exactly δ of mass
        assert!((ab[0] - ba[0] - 0.24).abs() < 1e-15);
        assert!((ab[0] - (0.76 * 0.7 + 0.24)).abs() < 1e-15);
    }

    #[test]
    fn prompt_offsets_and_temperature() {
        let labels = LabelMap::simple(&["A", "B"]).unwrap();
        let mut a = SyntheticAnnotator::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        a.prompt_offsets.insert("p1".into(), vec![2f64.ln(), 0.0]);
        let p = a.emission_distribution(0, "p1", &[0, 1]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(a.emission_distribution(0, "p2", &[0, 1]).unwrap(), vec![0.5, 0.5]);
        let mut req = request(3, vec![0, 1]);
        req.decoding.temperature = 0.0;
        let r = synth_annotate(&a, &req, 0, &labels).unwrap();
        assert_eq!(r.text, "A");
        assert_eq!(r.label_logprobs.unwrap().len(), 1);
        let sharp = temper(&[0.2, 0.8], 0.5);
        assert!((sharp[0] - 0.04 / 0.68).abs() < 1e-15 && (sharp[1] - 0.64 / 0.68).abs() < 1e-15);
    }

    #[test]
    fn perturbation() {
        let id = SyntheticAnnotator::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(perturbed_copy(&id, 0.0).unwrap(), id);
        let p = perturbed_copy(&id, 0.2).unwrap();
        assert!((p.confusion[0][0] - 0.9).abs() < 1e-15);
        let near = perturbed_copy(&id, 1.0 - 1e-12).unwrap();
        assert!(near.confusion.iter().flatten().all(|&x| (x - 0.5).abs() < 1e-11));
        assert!(perturbed_copy(&id, 1.0).is_err());
    }

    #[test]
    fn dimension_checks() {
        assert!(matches!(SyntheticAnnotator::new(vec![vec![1.0, 0.0], vec![1.0]]), Err(AnnotatorError::DimensionMismatch(_))));
        let labels = LabelMap::simple(&["A", "B", "C"]).unwrap();
        let a = SyntheticAnnotator::symmetric(2, 0.9).unwrap();
        assert!(matches!(synth_annotate(&a, &request(0, vec![0, 1]), 0, &labels), Err(AnnotatorError::DimensionMismatch(_))));
    }

    #[test]
    fn invalid_output_rate() {
        let labels = LabelMap::simple(&["A", "B"]).unwrap();
        let mut a = SyntheticAnnotator::symmetric(2, 0.9).unwrap();
        a.invalid_rate = 1.0;
        let r = synth_annotate(&a, &request(0, vec![0, 1]), 0, &labels).unwrap();
        assert_eq!(r.text, INVALID_TOKEN);
    }
}
