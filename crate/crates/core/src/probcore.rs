//! Probability primitives over the verdict simplex.
//!
//! Everything here is measured in nats. Probabilities are clamped below at
//! [`PROB_EPSILON`] before a logarithm is taken, so divergences stay finite
//! when a distribution puts (numerically) zero mass on a class.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of verdict classes (SUP, REF, NEI).
pub const NUM_CLASSES: usize = 3;

/// Lower clamp applied to probabilities before taking logarithms.
pub const PROB_EPSILON: f64 = 1e-12;

const SIMPLEX_TOLERANCE: f64 = 1e-12;

#[inline]
fn ln_clamped(x: f64) -> f64 {
    x.max(PROB_EPSILON).ln()
}

/// Unnormalised class scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Logits(Vec<f64>);

impl Logits {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values)?;
        if values.is_empty() {
            return Err(Error::Empty("logit vector"));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    /// Validates simplex membership: entries in `[0, 1]`, summing to one.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_finite(&probs)?;
        if probs.is_empty() {
            return Err(Error::Empty("distribution"));
        }
        if let Some((i, &v)) = probs.iter().enumerate().find(|(_, &v)| !(0.0..=1.0).contains(&v)) {
            return Err(Error::NotASimplex(format!("entry {i} = {v} outside [0, 1]")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOLERANCE * probs.len() as f64 {
            return Err(Error::NotASimplex(format!("entries sum to {total}")));
        }
        Ok(Self(probs))
    }

    pub fn one_hot(class: usize, len: usize) -> Self {
        assert!(class < len, "class {class} out of range for {len} classes");
        let mut probs = vec![0.0; len];
        probs[class] = 1.0;
        Self(probs)
    }

    pub fn uniform(len: usize) -> Self {
        Self(vec![1.0 / len as f64; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate().skip(1) {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn max(&self) -> f64 {
        self.0[self.argmax()]
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

fn check_same_len(a: &Distribution, b: &Distribution) {
    assert_eq!(a.len(), b.len(), "distributions over different supports");
}

/// Max-shifted softmax.
pub fn softmax(z: &Logits) -> Distribution {
    Distribution(softmax_slice(z.as_slice()))
}

/// Softmax of a raw slice, for callers that already hold finite logits.
pub fn softmax_slice(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// Shannon entropy `H(p) = -sum p ln p`, with `0 ln 0 = 0`.
pub fn entropy(p: &Distribution) -> f64 {
    -p.0
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// Cross-entropy `H(q, p) = -sum q ln p`.
pub fn cross_entropy(q: &Distribution, p: &Distribution) -> f64 {
    check_same_len(q, p);
    -q.0
        .iter()
        .zip(&p.0)
        .filter(|(&qi, _)| qi > 0.0)
        .map(|(&qi, &pi)| qi * ln_clamped(pi))
        .sum::<f64>()
}

/// `KL(p || q)`. Rounding can push a near-zero sum below 0; the result is
/// clamped to the true range.
pub fn kl(p: &Distribution, q: &Distribution) -> f64 {
    check_same_len(p, q);
    p.0.iter()
        .zip(&q.0)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi.ln() - ln_clamped(qi)))
        .sum::<f64>()
        .max(0.0)
}

/// Jeffreys divergence `KL(p || q) + KL(q || p)`.
pub fn j_div(p: &Distribution, q: &Distribution) -> f64 {
    kl(p, q) + kl(q, p)
}

/// Jensen-Shannon divergence through the mixture midpoint, clamped to
/// `[0, ln 2]` against rounding.
pub fn js_div(p: &Distribution, q: &Distribution) -> f64 {
    check_same_len(p, q);
    let mut total = 0.0;
    for (&pi, &qi) in p.0.iter().zip(&q.0) {
        let mi = 0.5 * (pi + qi);
        let ln_m = ln_clamped(mi);
        // Each class contributes symmetrically in (pi, qi).
        let (lo, hi) = if pi <= qi { (pi, qi) } else { (qi, pi) };
        if lo > 0.0 {
            total += 0.5 * lo * (lo.ln() - ln_m);
        }
        if hi > 0.0 {
            total += 0.5 * hi * (hi.ln() - ln_m);
        }
    }
    total.clamp(0.0, std::f64::consts::LN_2)
}

/// Prediction-level divergence family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DivergenceKind {
    Kl,
    J,
    Js,
}

impl DivergenceKind {
    pub fn eval(self, p: &Distribution, q: &Distribution) -> f64 {
        match self {
            Self::Kl => kl(p, q),
            Self::J => j_div(p, q),
            Self::Js => js_div(p, q),
        }
    }
}

impl FromStr for DivergenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kl" => Ok(Self::Kl),
            "j" | "jeffreys" => Ok(Self::J),
            "js" | "jensen-shannon" => Ok(Self::Js),
            other => Err(Error::UnknownDivergence(other.to_string())),
        }
    }
}

impl fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Kl => "KL",
            Self::J => "J",
            Self::Js => "JS",
        })
    }
}

/// Pulls a gradient with respect to probabilities back through softmax:
/// `dz = p * (g - <p, g>)`.
pub fn softmax_vjp(p: &[f64], grad_p: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(grad_p).map(|(a, b)| a * b).sum();
    p.iter().zip(grad_p).map(|(&pi, &gi)| pi * (gi - dot)).collect()
}

/// Gradient of `KL(p || q)` with respect to the logits behind `p` and `q`.
fn kl_logit_grads(p: &[f64], q: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let log_ratio: Vec<f64> = p
        .iter()
        .zip(q)
        .map(|(&pi, &qi)| ln_clamped(pi) - ln_clamped(qi))
        .collect();
    let dp = softmax_vjp(p, &log_ratio);
    let dq = q.iter().zip(p).map(|(&qi, &pi)| qi - pi).collect();
    (dp, dq)
}

/// Analytic gradients of a divergence `R(p, q)` with respect to both logit
/// vectors, where `p = softmax(z_p)` and `q = softmax(z_q)`.
pub fn grad_divergence(
    kind: DivergenceKind,
    p: &Distribution,
    q: &Distribution,
) -> (Vec<f64>, Vec<f64>) {
    check_same_len(p, q);
    let (p, q) = (p.as_slice(), q.as_slice());
    match kind {
        DivergenceKind::Kl => kl_logit_grads(p, q),
        DivergenceKind::J => {
            let (dp_a, dq_a) = kl_logit_grads(p, q);
            let (dq_b, dp_b) = kl_logit_grads(q, p);
            (add(&dp_a, &dp_b), add(&dq_a, &dq_b))
        }
        DivergenceKind::Js => {
            let half_log = |a: &[f64]| -> Vec<f64> {
                a.iter()
                    .zip(p.iter().zip(q))
                    .map(|(&ai, (&pi, &qi))| 0.5 * (ln_clamped(ai) - ln_clamped(0.5 * (pi + qi))))
                    .collect()
            };
            (softmax_vjp(p, &half_log(p)), softmax_vjp(q, &half_log(q)))
        }
    }
}

/// Gradient of `H(p)` with respect to the logits behind `p`.
pub fn grad_entropy(p: &Distribution) -> Vec<f64> {
    let h = entropy(p);
    p.as_slice()
        .iter()
        .map(|&pi| if pi > 0.0 { -pi * (pi.ln() + h) } else { 0.0 })
        .collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}
