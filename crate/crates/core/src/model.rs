//! Bag-of-embeddings encoder with a one-hidden-layer MLP head.
//!
//! ```text
//! pooled      = mean(embedding[ids])
//! feature     = tanh(pooled · W_enc + b_enc)        (encoder output)
//! penultimate = tanh(feature · W_hid + b_hid)       (last layer before logits)
//! logits      = penultimate · W_out + b_out
//! ```
//!
//! Weight matrices are stored row-major as `inputs × outputs`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::probcore::{softmax_slice, Distribution, NUM_CLASSES};

const INIT_SCALE: f64 = 0.05;
const CHECKPOINT_FORMAT: &str = "xlcons-checkpoint/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
}

impl ModelDims {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 64,
            hidden_dim: 64,
            num_classes: NUM_CLASSES,
        }
    }

    fn lengths(&self) -> [usize; 7] {
        let (v, d, h, k) = (self.vocab_size, self.embed_dim, self.hidden_dim, self.num_classes);
        [v * d, d * d, d, d * h, h, h * k, k]
    }
}

/// Every trainable tensor, in a fixed order. Also used for gradients and
/// optimiser state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensors {
    pub embedding: Vec<f64>,
    pub enc_w: Vec<f64>,
    pub enc_b: Vec<f64>,
    pub hid_w: Vec<f64>,
    pub hid_b: Vec<f64>,
    pub out_w: Vec<f64>,
    pub out_b: Vec<f64>,
}

pub const TENSOR_NAMES: [&str; 7] = ["embedding", "enc_w", "enc_b", "hid_w", "hid_b", "out_w", "out_b"];

impl Tensors {
    pub fn zeros(dims: &ModelDims) -> Self {
        let [a, b, c, d, e, f, g] = dims.lengths();
        Self {
            embedding: vec![0.0; a],
            enc_w: vec![0.0; b],
            enc_b: vec![0.0; c],
            hid_w: vec![0.0; d],
            hid_b: vec![0.0; e],
            out_w: vec![0.0; f],
            out_b: vec![0.0; g],
        }
    }

    pub fn slices(&self) -> [&[f64]; 7] {
        [
            &self.embedding,
            &self.enc_w,
            &self.enc_b,
            &self.hid_w,
            &self.hid_b,
            &self.out_w,
            &self.out_b,
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut Vec<f64>; 7] {
        [
            &mut self.embedding,
            &mut self.enc_w,
            &mut self.enc_b,
            &mut self.hid_w,
            &mut self.hid_b,
            &mut self.out_w,
            &mut self.out_b,
        ]
    }

    fn check_dims(&self, dims: &ModelDims) -> std::result::Result<(), String> {
        for ((name, s), expected) in TENSOR_NAMES.iter().zip(self.slices()).zip(dims.lengths()) {
            if s.len() != expected {
                return Err(format!("{name} has {} entries, expected {expected}", s.len()));
            }
            if let Some(i) = s.iter().position(|v| !v.is_finite()) {
                return Err(format!("{name}[{i}] is not finite"));
            }
        }
        Ok(())
    }

    pub fn fill(&mut self, value: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v = value);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn add_assign(&mut self, other: &Tensors) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Parameter gradients; same layout as the parameters.
pub type GradientSet = Tensors;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub seed: u64,
    pub vocab: Option<Vocabulary>,
    pub tensors: Tensors,
}

impl ModelParams {
    /// Uniform(-0.05, 0.05) initialisation from a seeded generator.
    pub fn init(seed: u64, dims: ModelDims) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Tensors::zeros(&dims);
        for s in tensors.slices_mut() {
            for v in s.iter_mut() {
                *v = rng.random_range(-INIT_SCALE..INIT_SCALE);
            }
        }
        Self {
            dims,
            seed,
            vocab: None,
            tensors,
        }
    }

    pub fn with_vocab(mut self, vocab: Vocabulary) -> Result<Self> {
        if vocab.len() != self.dims.vocab_size {
            return Err(Error::VocabularyMismatch(format!(
                "vocabulary has {} tokens, model expects {}",
                vocab.len(),
                self.dims.vocab_size
            )));
        }
        self.vocab = Some(vocab);
        Ok(self)
    }

    pub fn vocab(&self) -> Result<&Vocabulary> {
        self.vocab
            .as_ref()
            .ok_or_else(|| Error::VocabularyMismatch("model has no vocabulary attached".into()))
    }

    pub fn encode(&self, example: &crate::data::Example) -> Result<Vec<u32>> {
        self.vocab()?.encode(example)
    }
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub ids: Vec<u32>,
    pub pooled: Vec<f64>,
    pub feature: Vec<f64>,
    pub penultimate: Vec<f64>,
    pub logits: Vec<f64>,
    pub distribution: Distribution,
}

/// Upstream gradients entering the network. Representation-level terms
/// attach at the feature and penultimate layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Upstream {
    pub logits: Vec<f64>,
    pub feature: Option<Vec<f64>>,
    pub penultimate: Option<Vec<f64>>,
}

impl Upstream {
    pub fn logits_only(logits: Vec<f64>) -> Self {
        Self {
            logits,
            feature: None,
            penultimate: None,
        }
    }

    pub fn zeros(dims: &ModelDims) -> Self {
        Self {
            logits: vec![0.0; dims.num_classes],
            feature: None,
            penultimate: None,
        }
    }

    pub fn add_feature(&mut self, grad: &[f64]) {
        add_into(self.feature.get_or_insert_with(|| vec![0.0; grad.len()]), grad);
    }

    pub fn add_penultimate(&mut self, grad: &[f64]) {
        add_into(self.penultimate.get_or_insert_with(|| vec![0.0; grad.len()]), grad);
    }
}

fn add_into(acc: &mut [f64], grad: &[f64]) {
    acc.iter_mut().zip(grad).for_each(|(a, g)| *a += g);
}

/// `out = x · W + b` for row-major `W` of shape `x.len() × b.len()`.
fn affine(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = b.to_vec();
    let n_out = b.len();
    for (i, &xi) in x.iter().enumerate() {
        let row = &w[i * n_out..(i + 1) * n_out];
        out.iter_mut().zip(row).for_each(|(o, wij)| *o += xi * wij);
    }
    out
}

/// Accumulates `dW += x ⊗ g`, `db += g`, and returns `W · g`.
fn affine_backward(x: &[f64], w: &[f64], g: &[f64], dw: &mut [f64], db: &mut [f64], scale: f64) -> Vec<f64> {
    let n_out = g.len();
    db.iter_mut().zip(g).for_each(|(d, gi)| *d += scale * gi);
    x.iter()
        .enumerate()
        .map(|(i, &xi)| {
            let row = &w[i * n_out..(i + 1) * n_out];
            let drow = &mut dw[i * n_out..(i + 1) * n_out];
            let mut acc = 0.0;
            for ((d, wij), gj) in drow.iter_mut().zip(row).zip(g) {
                *d += scale * xi * gj;
                acc += wij * gj;
            }
            acc
        })
        .collect()
}

/// Runs the network on a token-id sequence (claim ++ separator ++ evidence).
pub fn forward(params: &ModelParams, ids: &[u32]) -> Result<ForwardTrace> {
    let dims = &params.dims;
    if ids.is_empty() {
        return Err(Error::Empty("token sequence"));
    }
    if let Some(position) = ids.iter().position(|&id| id as usize >= dims.vocab_size) {
        return Err(Error::OutOfVocabulary {
            position,
            id: ids[position],
            vocab_size: dims.vocab_size,
        });
    }
    let t = &params.tensors;
    let d = dims.embed_dim;

    // Summed in sorted id order so the pooled vector is bitwise independent
    // of token order.
    let mut sorted = ids.to_vec();
    sorted.sort_unstable();
    let mut pooled = vec![0.0; d];
    for &id in &sorted {
        let row = &t.embedding[id as usize * d..(id as usize + 1) * d];
        pooled.iter_mut().zip(row).for_each(|(p, e)| *p += e);
    }
    let inv_n = 1.0 / ids.len() as f64;
    pooled.iter_mut().for_each(|p| *p *= inv_n);

    let mut feature = affine(&pooled, &t.enc_w, &t.enc_b);
    feature.iter_mut().for_each(|v| *v = v.tanh());
    let mut penultimate = affine(&feature, &t.hid_w, &t.hid_b);
    penultimate.iter_mut().for_each(|v| *v = v.tanh());
    let logits = affine(&penultimate, &t.out_w, &t.out_b);
    let distribution = Distribution::new(softmax_slice(&logits))?;

    Ok(ForwardTrace {
        ids: ids.to_vec(),
        pooled,
        feature,
        penultimate,
        logits,
        distribution,
    })
}

/// Backpropagates `upstream` through the network and returns fresh gradients.
pub fn backward(params: &ModelParams, trace: &ForwardTrace, upstream: &Upstream) -> Result<GradientSet> {
    let mut grads = Tensors::zeros(&params.dims);
    backward_into(params, trace, upstream, 1.0, &mut grads)?;
    Ok(grads)
}

/// Accumulates `scale ×` the parameter gradients into `grads`.
pub fn backward_into(
    params: &ModelParams,
    trace: &ForwardTrace,
    upstream: &Upstream,
    scale: f64,
    grads: &mut GradientSet,
) -> Result<()> {
    let dims = &params.dims;
    let shape = |what: &str, got: usize, want: usize| -> Result<()> {
        if got == want {
            Ok(())
        } else {
            Err(Error::Shape(format!("{what} has length {got}, expected {want}")))
        }
    };
    shape("logit gradient", upstream.logits.len(), dims.num_classes)?;
    if let Some(f) = &upstream.feature {
        shape("feature gradient", f.len(), dims.embed_dim)?;
    }
    if let Some(p) = &upstream.penultimate {
        shape("penultimate gradient", p.len(), dims.hidden_dim)?;
    }
    shape("trace feature", trace.feature.len(), dims.embed_dim)?;
    shape("trace penultimate", trace.penultimate.len(), dims.hidden_dim)?;
    grads
        .check_dims(dims)
        .map_err(|e| Error::Shape(format!("gradient buffer: {e}")))?;

    let t = &params.tensors;
    let mut g_pen = affine_backward(
        &trace.penultimate,
        &t.out_w,
        &upstream.logits,
        &mut grads.out_w,
        &mut grads.out_b,
        scale,
    );
    if let Some(extra) = &upstream.penultimate {
        add_into(&mut g_pen, extra);
    }
    let g_pen_pre: Vec<f64> = g_pen
        .iter()
        .zip(&trace.penultimate)
        .map(|(g, a)| g * (1.0 - a * a))
        .collect();

    let mut g_feat = affine_backward(
        &trace.feature,
        &t.hid_w,
        &g_pen_pre,
        &mut grads.hid_w,
        &mut grads.hid_b,
        scale,
    );
    if let Some(extra) = &upstream.feature {
        add_into(&mut g_feat, extra);
    }
    let g_feat_pre: Vec<f64> = g_feat
        .iter()
        .zip(&trace.feature)
        .map(|(g, a)| g * (1.0 - a * a))
        .collect();

    let g_pooled = affine_backward(
        &trace.pooled,
        &t.enc_w,
        &g_feat_pre,
        &mut grads.enc_w,
        &mut grads.enc_b,
        scale,
    );

    let d = dims.embed_dim;
    let per_token = scale / trace.ids.len() as f64;
    for &id in &trace.ids {
        let row = &mut grads.embedding[id as usize * d..(id as usize + 1) * d];
        row.iter_mut().zip(&g_pooled).for_each(|(r, g)| *r += per_token * g);
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    dims: ModelDims,
    seed: u64,
    vocab: Vec<String>,
    tensors: Tensors,
}

pub fn to_json(params: &ModelParams) -> String {
    let ckpt = Checkpoint {
        format: CHECKPOINT_FORMAT.to_string(),
        dims: params.dims,
        seed: params.seed,
        vocab: params
            .vocab
            .as_ref()
            .map(|v| v.tokens().to_vec())
            .unwrap_or_default(),
        tensors: params.tensors.clone(),
    };
    serde_json::to_string(&ckpt).expect("checkpoint serialization is infallible")
}

pub fn from_json(text: &str, path: &Path) -> Result<ModelParams> {
    let fail = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| fail(e.to_string()))?;
    if ckpt.format != CHECKPOINT_FORMAT {
        return Err(fail(format!("unsupported format `{}`", ckpt.format)));
    }
    if ckpt.dims.num_classes != NUM_CLASSES {
        return Err(fail(format!("expected {NUM_CLASSES} classes, found {}", ckpt.dims.num_classes)));
    }
    ckpt.tensors.check_dims(&ckpt.dims).map_err(fail)?;
    let vocab = if ckpt.vocab.is_empty() {
        None
    } else {
        if ckpt.vocab.len() != ckpt.dims.vocab_size {
            return Err(fail(format!(
                "vocabulary lists {} tokens but dims say {}",
                ckpt.vocab.len(),
                ckpt.dims.vocab_size
            )));
        }
        Some(Vocabulary::from_tokens(ckpt.vocab).map_err(|e| fail(e.to_string()))?)
    };
    Ok(ModelParams {
        dims: ckpt.dims,
        seed: ckpt.seed,
        vocab,
        tensors: ckpt.tensors,
    })
}

/// Writes a self-describing JSON checkpoint.
pub fn save(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_json(params))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    from_json(&text, path)
}
