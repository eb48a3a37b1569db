//! Browser demo for annokit.
//!
//! Three operations, each a plain Rust function returning a serializable
//! result (so they are testable natively) plus a `wasm_bindgen` export that
//! hands the page a JSON string:
//!
//! - [`order_swap`]: simulate a position-biased annotator on original and
//!   option-swapped presentations, report the flip rate and McNemar test;
//! - [`kappa_from_table`]: Cohen's κ from a pasted K×K contingency table,
//!   optionally classified as a drift decision against a baseline κ;
//! - [`calibrate`]: fit a temperature to miscalibrated synthetic logits and
//!   compare NLL, ECE and reliability bins before and after.

use annokit::annotators::{synth_annotate, AnnotationRequest, DecodingParams, SyntheticAnnotator};
use annokit::calibration::{ece, fit_temperature, scaled_probabilities, Binning, ReliabilityBin};
use annokit::governance::{classify_delta, DriftThresholds};
use annokit::stats::{cohen_kappa, flip_rate_and_mcnemar};
use annokit::workspace::LabelMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Upper bound on simulated items / examples, to keep the page responsive.
pub const MAX_N: usize = 100_000;
/// Upper bound on the total count in a pasted table (it is expanded to pairs).
pub const MAX_TABLE_TOTAL: u64 = 1_000_000;
const BINS: usize = 10;

#[derive(Debug, Clone, Serialize)]
pub struct OrderSwap {
    pub n: usize,
    pub flip_rate: f64,
    /// Items labelled A originally and B after the swap.
    pub a_to_b: u64,
    pub b_to_a: u64,
    pub mcnemar_chi2: Option<f64>,
    pub p_value: Option<f64>,
}

/// Label `n` random binary items twice with the same seed, once with the
/// options in order and once reversed.
pub fn order_swap(delta: f64, accuracy: f64, n: usize, seed: u64) -> Result<OrderSwap, String> {
    if n == 0 || n > MAX_N {
        return Err(format!("n must be between 1 and {MAX_N}"));
    }
    let labels = LabelMap::simple(&["A", "B"]).map_err(|e| e.to_string())?;
    let annotator = SyntheticAnnotator::symmetric(2, accuracy).and_then(|a| a.with_position_bias(delta)).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut original = Vec::with_capacity(n);
    let mut swapped = Vec::with_capacity(n);
    for i in 0..n {
        let truth = rng.random_range(0..2usize);
        let draw_seed: u64 = rng.random();
        for (perm, out) in [(vec![0, 1], &mut original), (vec![1, 0], &mut swapped)] {
            let request = AnnotationRequest {
                item_id: format!("item-{i}"),
                prompt_id: "demo".into(),
                prompt_index: 1,
                model_index: 1,
                sample_index: 1,
                rendered_sequence: String::new(),
                option_permutation: perm,
                decoding: DecodingParams { temperature: 1.0, top_p: 1.0, max_tokens: 1 },
                seed: draw_seed,
            };
            let response = synth_annotate(&annotator, &request, truth, &labels).map_err(|e| e.to_string())?;
            out.push(labels.lookup(&response.text).ok_or_else(|| format!("unmapped output `{}`", response.text))?);
        }
    }
    let d = flip_rate_and_mcnemar(&original, &swapped).map_err(|e| e.to_string())?;
    Ok(OrderSwap {
        n,
        flip_rate: d.flip_rate,
        a_to_b: d.discordant_b,
        b_to_a: d.discordant_c,
        mcnemar_chi2: d.test.as_ref().map(|t| t.statistic),
        p_value: d.test.as_ref().map(|t| t.p_value),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct KappaResult {
    pub k: usize,
    pub n: u64,
    pub observed_agreement: f64,
    pub kappa: Option<f64>,
    pub drift: Option<Drift>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Drift {
    pub baseline: f64,
    pub delta: f64,
    pub decision: &'static str,
    pub recommendation: &'static str,
}

/// Parse a square table of non-negative integer counts, one row per line,
/// cells separated by whitespace, commas or semicolons.
pub fn parse_table(text: &str) -> Result<Vec<Vec<u64>>, String> {
    let rows: Vec<Vec<u64>> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(r, line)| {
            line.split(|c: char| c.is_whitespace() || c == ',' || c == ';')
                .filter(|c| !c.is_empty())
                .map(|c| c.parse::<u64>().map_err(|_| format!("row {}: `{c}` is not a non-negative integer", r + 1)))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let k = rows.len();
    if k < 2 {
        return Err("the table needs at least two rows".into());
    }
    if let Some((r, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != k) {
        return Err(format!("row {} has {} cells; a {k}×{k} table was expected", r + 1, row.len()));
    }
    Ok(rows)
}

/// Cohen's κ for rater A (rows) against rater B (columns). A finite
/// `baseline` adds the drift decision for `κ − baseline`.
pub fn kappa_from_table(text: &str, baseline: Option<f64>) -> Result<KappaResult, String> {
    let table = parse_table(text)?;
    let n: u64 = table.iter().flatten().sum();
    if n == 0 {
        return Err("the table is empty".into());
    }
    if n > MAX_TABLE_TOTAL {
        return Err(format!("total count {n} exceeds {MAX_TABLE_TOTAL}"));
    }
    let (mut a, mut b) = (Vec::with_capacity(n as usize), Vec::with_capacity(n as usize));
    for (i, row) in table.iter().enumerate() {
        for (j, &count) in row.iter().enumerate() {
            for _ in 0..count {
                a.push(i);
                b.push(j);
            }
        }
    }
    let report = cohen_kappa(&a, &b).map_err(|e| e.to_string())?;
    let agree: u64 = (0..table.len()).map(|i| table[i][i]).sum();
    let drift = match (baseline.filter(|b| b.is_finite()), report.value) {
        (Some(base), Some(kappa)) => {
            let decision = classify_delta(kappa - base, &DriftThresholds::default());
            Some(Drift { baseline: base, delta: kappa - base, decision: decision.as_str(), recommendation: decision.recommendation() })
        }
        _ => None,
    };
    Ok(KappaResult { k: table.len(), n, observed_agreement: agree as f64 / n as f64, kappa: report.value, drift })
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationSide {
    pub nll: f64,
    pub ece: f64,
    pub bins: Vec<ReliabilityBin>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationDemo {
    pub n: usize,
    pub scale: f64,
    pub temperature: f64,
    pub before: CalibrationSide,
    pub after: CalibrationSide,
}

/// Draw `n` four-class examples whose labels follow softmax(z), then scale
/// the logits by `scale` (>1 overconfident, <1 underconfident). The fitted
/// temperature should land near `scale`.
pub fn calibrate(scale: f64, n: usize, seed: u64) -> Result<CalibrationDemo, String> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err("scale must be positive".into());
    }
    if !(10..=MAX_N).contains(&n) {
        return Err(format!("n must be between 10 and {MAX_N}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.5).map_err(|e| e.to_string())?;
    let mut logits = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..4).map(|_| normal.sample(&mut rng)).collect();
        let p = scaled_probabilities(&z, 1.0);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        labels.push(p.iter().position(|&pi| {
            acc += pi;
            u < acc
        }).unwrap_or(p.len() - 1));
        logits.push(z.iter().map(|v| v * scale).collect::<Vec<f64>>());
    }
    let fit = fit_temperature(&logits, &labels, 200).map_err(|e| e.to_string())?;
    let side = |t: f64, nll: f64| -> Result<CalibrationSide, String> {
        let (conf, hit): (Vec<f64>, Vec<bool>) = logits
            .iter()
            .zip(&labels)
            .map(|(z, &y)| {
                let p = scaled_probabilities(z, t);
                let top = (0..p.len()).fold(0, |best, j| if p[j] > p[best] { j } else { best });
                (p[top], top == y)
            })
            .unzip();
        let e = ece(&conf, &hit, BINS, Binning::EqualWidth).map_err(|e| e.to_string())?;
        Ok(CalibrationSide { nll, ece: e.ece, bins: e.bins })
    };
    Ok(CalibrationDemo { n, scale, temperature: fit.temperature, before: side(1.0, fit.nll_unscaled)?, after: side(fit.temperature, fit.nll)? })
}

fn to_js<T: Serialize>(result: Result<T, String>) -> Result<String, JsValue> {
    result.map(|v| serde_json::to_string(&v).expect("serializes")).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = orderSwap)]
pub fn order_swap_js(delta: f64, accuracy: f64, n: usize, seed: u32) -> Result<String, JsValue> {
    to_js(order_swap(delta, accuracy, n, u64::from(seed)))
}

/// `baseline` may be NaN for "no baseline".
#[wasm_bindgen(js_name = kappaFromTable)]
pub fn kappa_from_table_js(text: &str, baseline: f64) -> Result<String, JsValue> {
    to_js(kappa_from_table(text, Some(baseline)))
}

#[wasm_bindgen(js_name = calibrate)]
pub fn calibrate_js(scale: f64, n: usize, seed: u32) -> Result<String, JsValue> {
    to_js(calibrate(scale, n, u64::from(seed)))
}
