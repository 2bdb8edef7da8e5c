//! WebAssembly bindings for the browser demo.
//!
//! Each operation has a plain Rust form returning a serializable value and a
//! `#[wasm_bindgen]` wrapper that hands JSON to the page.

use serde::Serialize;
use wasm_bindgen::prelude::*;
use xlcons::calibration::{compute_ece, reliability_csv, Bin, PredictionRecord};
use xlcons::probcore::{entropy, grad_divergence, kl, softmax, DivergenceKind, Distribution, Logits};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SoftmaxView {
    pub probs: Vec<f64>,
    pub entropy: f64,
    pub argmax: usize,
}

/// Softmax of `logits / temperature`.
pub fn softmax_view(logits: &[f64], temperature: f64) -> Result<SoftmaxView, String> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(format!("temperature must be positive, got {temperature}"));
    }
    let z = Logits::new(logits.iter().map(|v| v / temperature).collect()).map_err(|e| e.to_string())?;
    let p = softmax(&z);
    Ok(SoftmaxView {
        entropy: entropy(&p),
        argmax: p.argmax(),
        probs: p.as_slice().to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceView {
    pub name: String,
    pub value: f64,
    /// Gradient with respect to the logits behind `p`.
    pub grad_p: Vec<f64>,
    /// Gradient with respect to the logits behind `q`.
    pub grad_q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairView {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub kl_qp: f64,
    pub divergences: Vec<DivergenceView>,
}

/// KL, J and JS between `softmax(zp)` and `softmax(zq)`, with logit gradients.
pub fn divergence_view(zp: &[f64], zq: &[f64]) -> Result<PairView, String> {
    if zp.len() != zq.len() {
        return Err(format!("logit vectors differ in length: {} vs {}", zp.len(), zq.len()));
    }
    let to_dist = |z: &[f64]| Logits::new(z.to_vec()).map(|z| softmax(&z)).map_err(|e| e.to_string());
    let (p, q) = (to_dist(zp)?, to_dist(zq)?);
    let divergences = [DivergenceKind::Kl, DivergenceKind::J, DivergenceKind::Js]
        .into_iter()
        .map(|kind| {
            let (grad_p, grad_q) = grad_divergence(kind, &p, &q);
            DivergenceView {
                name: kind.to_string(),
                value: kind.eval(&p, &q),
                grad_p,
                grad_q,
            }
        })
        .collect();
    Ok(PairView {
        kl_qp: kl(&q, &p),
        p: p.as_slice().to_vec(),
        q: q.as_slice().to_vec(),
        divergences,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationView {
    pub ece: f64,
    pub num_records: usize,
    pub bins: Vec<Bin>,
    pub csv: String,
}

/// Parses one record per line. Three fields read as
/// `confidence,predicted,actual`; four or more as class probabilities
/// followed by the true class.
/// Blank lines and lines starting with `#` are skipped.
pub fn parse_records(text: &str) -> Result<Vec<PredictionRecord>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| format!("line {}: {reason}", i + 1);
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 3 {
            return Err(bad(format!("expected at least 3 fields, found {}", fields.len())));
        }
        let (head, last) = fields.split_at(fields.len() - 1);
        let actual: usize = last[0].parse().map_err(|e| bad(format!("class `{}`: {e}", last[0])))?;
        let nums = head
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let record = if head.len() == 2 {
            let predicted: usize = head[1].parse().map_err(|e| bad(format!("class `{}`: {e}", head[1])))?;
            PredictionRecord {
                confidence: nums[0],
                predicted,
                actual,
            }
        } else {
            let p = Distribution::new(nums).map_err(|e| bad(e.to_string()))?;
            if actual >= p.len() {
                return Err(bad(format!("class {actual} out of range for {} classes", p.len())));
            }
            PredictionRecord::from_distribution(&p, actual)
        };
        out.push(record);
    }
    Ok(out)
}

pub fn calibration_view(text: &str, bins: usize) -> Result<CalibrationView, String> {
    let records = parse_records(text)?;
    let report = compute_ece(&records, bins).map_err(|e| e.to_string())?;
    Ok(CalibrationView {
        csv: reliability_csv(&report),
        ece: report.ece,
        num_records: report.num_records,
        bins: report.bins,
    })
}

fn to_js<T: Serialize>(value: Result<T, String>) -> Result<String, JsError> {
    let value = value.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = softmax)]
pub fn softmax_js(logits: &[f64], temperature: f64) -> Result<String, JsError> {
    to_js(softmax_view(logits, temperature))
}

#[wasm_bindgen]
pub fn divergences(zp: &[f64], zq: &[f64]) -> Result<String, JsError> {
    to_js(divergence_view(zp, zq))
}

#[wasm_bindgen]
pub fn calibration(records: &str, bins: usize) -> Result<String, JsError> {
    to_js(calibration_view(records, bins))
}
