//! Training objectives: cross-entropy for single examples, and the paired
//! objective `CE(q, p) + CE(q, p̃) + λ·R` with a prediction-level or
//! representation-level consistency term `R`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};
use crate::model::{ForwardTrace, Upstream};
use crate::probcore::{self, cross_entropy, entropy, Distribution, DivergenceKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    ZeroShot,
    NonParallel,
    Parallel,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::ZeroShot => "zero-shot",
            Scenario::NonParallel => "non-parallel",
            Scenario::Parallel => "parallel",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero-shot" => Ok(Scenario::ZeroShot),
            "non-parallel" => Ok(Scenario::NonParallel),
            "parallel" => Ok(Scenario::Parallel),
            other => Err(Error::InvalidArgument(format!("unknown scenario `{other}`"))),
        }
    }
}

/// Which representation a distance-based regulariser compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepLevel {
    Feature,
    Penultimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regularizer {
    None,
    Kl,
    J,
    Js,
    #[serde(rename = "mse-feat")]
    MseFeature,
    #[serde(rename = "mse-penu")]
    MsePenultimate,
    #[serde(rename = "cos-feat")]
    CosFeature,
    #[serde(rename = "cos-penu")]
    CosPenultimate,
}

impl Regularizer {
    pub const ALL: [Regularizer; 8] = [
        Regularizer::None,
        Regularizer::Kl,
        Regularizer::J,
        Regularizer::Js,
        Regularizer::MseFeature,
        Regularizer::MsePenultimate,
        Regularizer::CosFeature,
        Regularizer::CosPenultimate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Regularizer::None => "none",
            Regularizer::Kl => "kl",
            Regularizer::J => "j",
            Regularizer::Js => "js",
            Regularizer::MseFeature => "mse-feat",
            Regularizer::MsePenultimate => "mse-penu",
            Regularizer::CosFeature => "cos-feat",
            Regularizer::CosPenultimate => "cos-penu",
        }
    }

    pub fn divergence(self) -> Option<DivergenceKind> {
        match self {
            Regularizer::Kl => Some(DivergenceKind::Kl),
            Regularizer::J => Some(DivergenceKind::J),
            Regularizer::Js => Some(DivergenceKind::Js),
            _ => None,
        }
    }

    /// Default strength: 0.25 for J, which penalises harder than the others;
    /// 1 for everything else.
    pub fn default_lambda(self) -> f64 {
        match self {
            Regularizer::J => 0.25,
            _ => 1.0,
        }
    }
}

impl fmt::Display for Regularizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regularizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regularizer::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown regularizer `{s}`")))
    }
}

/// Direction of the KL term between the original (p) and translated (p̃)
/// predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlDirection {
    /// `KL(p ‖ p̃)`: pulls the translated prediction toward the original.
    #[default]
    OriginalToTranslated,
    /// `KL(p̃ ‖ p)`.
    TranslatedToOriginal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegTerm {
    pub regularizer: Regularizer,
    pub lambda: f64,
}

/// Fully determines a training objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub scenario: Scenario,
    pub regularizer: Regularizer,
    pub lambda: f64,
    /// Optional second consistency term, e.g. prediction + representation.
    #[serde(default)]
    pub secondary: Option<RegTerm>,
    #[serde(default)]
    pub kl_direction: KlDirection,
    /// Treat the original prediction as a constant in the KL term.
    #[serde(default)]
    pub stop_gradient_on_p: bool,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self::zero_shot()
    }
}

impl LossSpec {
    pub fn zero_shot() -> Self {
        Self::plain(Scenario::ZeroShot)
    }

    pub fn non_parallel() -> Self {
        Self::plain(Scenario::NonParallel)
    }

    pub fn parallel(regularizer: Regularizer, lambda: f64) -> Self {
        Self {
            regularizer,
            lambda,
            ..Self::plain(Scenario::Parallel)
        }
    }

    /// JS on predictions plus MSE on feature representations, both at λ = 1.
    pub fn combined() -> Self {
        Self {
            secondary: Some(RegTerm {
                regularizer: Regularizer::MseFeature,
                lambda: 1.0,
            }),
            ..Self::parallel(Regularizer::Js, 1.0)
        }
    }

    fn plain(scenario: Scenario) -> Self {
        Self {
            scenario,
            regularizer: Regularizer::None,
            lambda: 1.0,
            secondary: None,
            kl_direction: KlDirection::default(),
            stop_gradient_on_p: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let terms = std::iter::once(RegTerm {
            regularizer: self.regularizer,
            lambda: self.lambda,
        })
        .chain(self.secondary);
        for term in terms {
            if !(term.lambda.is_finite() && term.lambda >= 0.0) {
                return Err(Error::LossSpec(format!("lambda {} must be finite and >= 0", term.lambda)));
            }
            if term.regularizer != Regularizer::None && self.scenario != Scenario::Parallel {
                return Err(Error::LossSpec(format!(
                    "regularizer `{}` requires the parallel scenario, got `{}`",
                    term.regularizer, self.scenario
                )));
            }
        }
        Ok(())
    }

    fn terms(&self) -> impl Iterator<Item = RegTerm> + '_ {
        std::iter::once(RegTerm {
            regularizer: self.regularizer,
            lambda: self.lambda,
        })
        .chain(self.secondary)
        .filter(|t| t.regularizer != Regularizer::None)
    }

    /// Short row name such as `parallel+j(0.25)`.
    pub fn name(&self) -> String {
        let mut name = self.scenario.to_string();
        for t in self.terms() {
            name.push_str(&format!("+{}({})", t.regularizer, t.lambda));
        }
        name
    }
}

/// Parses the row names produced by [`LossSpec::name`]: a scenario followed
/// by up to two `+reg` or `+reg(lambda)` terms. A bare `+reg` uses the
/// regularizer's default strength.
impl FromStr for LossSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split('+');
        let scenario: Scenario = parts.next().unwrap_or_default().parse()?;
        let mut terms = Vec::new();
        for part in parts {
            let (reg, lambda) = match part.split_once('(') {
                Some((reg, rest)) => {
                    let value = rest
                        .strip_suffix(')')
                        .ok_or_else(|| Error::LossSpec(format!("unclosed `(` in `{s}`")))?;
                    let lambda: f64 = value
                        .parse()
                        .map_err(|_| Error::LossSpec(format!("bad lambda `{value}` in `{s}`")))?;
                    (reg.parse::<Regularizer>()?, lambda)
                }
                None => {
                    let reg: Regularizer = part.parse()?;
                    (reg, reg.default_lambda())
                }
            };
            terms.push(RegTerm { regularizer: reg, lambda });
        }
        if terms.len() > 2 {
            return Err(Error::LossSpec(format!("at most two regularizers, got {} in `{s}`", terms.len())));
        }
        let mut spec = LossSpec::plain(scenario);
        if let Some(first) = terms.first() {
            spec.regularizer = first.regularizer;
            spec.lambda = first.lambda;
        }
        spec.secondary = terms.get(1).copied();
        spec.validate()?;
        Ok(spec)
    }
}

/// Loss value and the gradient entering one network pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleLoss {
    pub value: f64,
    pub upstream: Upstream,
}

/// Loss value of a parallel pair and the gradients for both passes.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLoss {
    pub value: f64,
    /// Weighted consistency contribution `Σ λ·R` included in `value`.
    pub regularization: f64,
    pub original: Upstream,
    pub translated: Upstream,
}

fn ce_and_grad(trace: &ForwardTrace, label: Label) -> (f64, Vec<f64>) {
    let k = trace.distribution.len();
    let q = Distribution::one_hot(label.index(), k);
    let value = cross_entropy(&q, &trace.distribution);
    let grad = trace
        .distribution
        .as_slice()
        .iter()
        .zip(q.as_slice())
        .map(|(p, q)| p - q)
        .collect();
    (value, grad)
}

/// Cross-entropy against the one-hot label; gradient at the logits is `p − q`.
pub fn loss_zero_shot(trace: &ForwardTrace, label: Label) -> SingleLoss {
    let (value, grad) = ce_and_grad(trace, label);
    SingleLoss {
        value,
        upstream: Upstream::logits_only(grad),
    }
}

/// `CE(q, p) − λ·H(p)`.
pub fn loss_confidence_penalty(trace: &ForwardTrace, label: Label, lambda: f64) -> Result<SingleLoss> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::LossSpec(format!("lambda {lambda} must be finite and >= 0")));
    }
    let (ce, mut grad) = ce_and_grad(trace, label);
    let h = entropy(&trace.distribution);
    for (g, dh) in grad.iter_mut().zip(probcore::grad_entropy(&trace.distribution)) {
        *g -= lambda * dh;
    }
    Ok(SingleLoss {
        value: ce - lambda * h,
        upstream: Upstream::logits_only(grad),
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Squared Euclidean distance and its gradients with respect to both inputs.
pub fn mse_with_grads(h: &[f64], h_tilde: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let diff: Vec<f64> = h.iter().zip(h_tilde).map(|(a, b)| a - b).collect();
    let value = dot(&diff, &diff);
    let gh: Vec<f64> = diff.iter().map(|d| 2.0 * d).collect();
    let gt = gh.iter().map(|g| -g).collect();
    (value, gh, gt)
}

/// Cosine distance `1 − cos(h, h̃)` and its gradients. A zero vector has
/// cosine 0 (distance 1) and receives zero gradient.
pub fn cosine_distance_with_grads(h: &[f64], h_tilde: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let na = dot(h, h).sqrt();
    let nb = dot(h_tilde, h_tilde).sqrt();
    if na == 0.0 || nb == 0.0 {
        return (1.0, vec![0.0; h.len()], vec![0.0; h_tilde.len()]);
    }
    let cos = dot(h, h_tilde) / (na * nb);
    // d(1 - cos)/dh = -(h̃ / (|h||h̃|) - cos · h / |h|²)
    let grad = |x: &[f64], y: &[f64], nx: f64| -> Vec<f64> {
        x.iter()
            .zip(y)
            .map(|(&xi, &yi)| -(yi / (na * nb) - cos * xi / (nx * nx)))
            .collect()
    };
    (1.0 - cos, grad(h, h_tilde, na), grad(h_tilde, h, nb))
}

/// Value of a single consistency term and its gradients into both passes.
fn regularize(
    term: RegTerm,
    spec: &LossSpec,
    orig: &ForwardTrace,
    trans: &ForwardTrace,
    up_orig: &mut Upstream,
    up_trans: &mut Upstream,
) -> f64 {
    let lambda = term.lambda;
    let add_scaled = |acc: &mut Vec<f64>, g: &[f64]| acc.iter_mut().zip(g).for_each(|(a, gi)| *a += lambda * gi);
    match term.regularizer {
        Regularizer::None => 0.0,
        Regularizer::Kl => {
            let (p, p_tilde) = (&orig.distribution, &trans.distribution);
            let (value, g_orig, g_trans) = match spec.kl_direction {
                KlDirection::OriginalToTranslated => {
                    let (gp, gq) = probcore::grad_divergence(DivergenceKind::Kl, p, p_tilde);
                    (probcore::kl(p, p_tilde), gp, gq)
                }
                KlDirection::TranslatedToOriginal => {
                    let (gq, gp) = probcore::grad_divergence(DivergenceKind::Kl, p_tilde, p);
                    (probcore::kl(p_tilde, p), gp, gq)
                }
            };
            if !spec.stop_gradient_on_p {
                add_scaled(&mut up_orig.logits, &g_orig);
            }
            add_scaled(&mut up_trans.logits, &g_trans);
            lambda * value
        }
        Regularizer::J | Regularizer::Js => {
            let kind = term.regularizer.divergence().expect("prediction-level regularizer");
            let (p, p_tilde) = (&orig.distribution, &trans.distribution);
            let value = kind.eval(p, p_tilde);
            let (gp, gq) = probcore::grad_divergence(kind, p, p_tilde);
            add_scaled(&mut up_orig.logits, &gp);
            add_scaled(&mut up_trans.logits, &gq);
            lambda * value
        }
        Regularizer::MseFeature
        | Regularizer::MsePenultimate
        | Regularizer::CosFeature
        | Regularizer::CosPenultimate => {
            let level = match term.regularizer {
                Regularizer::MseFeature | Regularizer::CosFeature => RepLevel::Feature,
                _ => RepLevel::Penultimate,
            };
            let (h, h_tilde) = match level {
                RepLevel::Feature => (&orig.feature, &trans.feature),
                RepLevel::Penultimate => (&orig.penultimate, &trans.penultimate),
            };
            let (value, gh, gt) = match term.regularizer {
                Regularizer::MseFeature | Regularizer::MsePenultimate => mse_with_grads(h, h_tilde),
                _ => cosine_distance_with_grads(h, h_tilde),
            };
            let scale = |g: Vec<f64>| -> Vec<f64> { g.into_iter().map(|v| lambda * v).collect() };
            let (gh, gt) = (scale(gh), scale(gt));
            match level {
                RepLevel::Feature => {
                    up_orig.add_feature(&gh);
                    up_trans.add_feature(&gt);
                }
                RepLevel::Penultimate => {
                    up_orig.add_penultimate(&gh);
                    up_trans.add_penultimate(&gt);
                }
            }
            lambda * value
        }
    }
}

/// Paired objective `CE(q, p) + CE(q, p̃) + Σ λ·R(original, translated)`.
pub fn loss_parallel(
    orig: &ForwardTrace,
    trans: &ForwardTrace,
    label: Label,
    translated_label: Label,
    spec: &LossSpec,
) -> Result<PairLoss> {
    spec.validate()?;
    if label != translated_label {
        return Err(Error::PairLabels {
            original: label.to_string(),
            translated: translated_label.to_string(),
        });
    }
    let (ce_orig, g_orig) = ce_and_grad(orig, label);
    let (ce_trans, g_trans) = ce_and_grad(trans, label);
    let mut up_orig = Upstream::logits_only(g_orig);
    let mut up_trans = Upstream::logits_only(g_trans);
    let mut regularization = 0.0;
    for term in spec.terms() {
        regularization += regularize(term, spec, orig, trans, &mut up_orig, &mut up_trans);
    }
    Ok(PairLoss {
        value: ce_orig + ce_trans + regularization,
        regularization,
        original: up_orig,
        translated: up_trans,
    })
}

/// Arithmetic mean of per-example losses.
pub fn batch_average(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("batch"));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}
