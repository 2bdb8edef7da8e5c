//! Mini-batch training for the zero-shot, non-parallel and parallel
//! scenarios, with dev-accuracy early stopping.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::data::{draw_targets, epoch_permutation, derive_seed, Example, Label, ParallelGroup, Vocabulary};
use crate::error::{Error, Result};
use crate::losses::{loss_parallel, loss_zero_shot, LossSpec, Scenario};
use crate::model::{backward_into, forward, GradientSet, ModelDims, ModelParams, Tensors};
use crate::probcore::Distribution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Which dev accuracy drives early stopping in multilingual runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DevMetric {
    #[default]
    MacroAverage,
    SourceOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss_spec: LossSpec,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub optimizer: AdamConfig,
    pub seed: u64,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub dev_metric: DevMetric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss_spec: LossSpec::zero_shot(),
            batch_size: 32,
            max_epochs: 10,
            patience: 2,
            learning_rate: 1e-3,
            optimizer: AdamConfig::default(),
            seed: 0,
            embed_dim: 64,
            hidden_dim: 64,
            dev_metric: DevMetric::MacroAverage,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss_spec.validate()?;
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidArgument("batch size and max epochs must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::InvalidArgument("model dimensions must be positive".into()));
        }
        Ok(())
    }

    fn model_dims(&self, vocab_size: usize) -> ModelDims {
        ModelDims {
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            ..ModelDims::new(vocab_size)
        }
    }

    fn optimizer_label(&self) -> String {
        let a = &self.optimizer;
        format!(
            "adam(lr={}, beta1={}, beta2={}, eps={})",
            self.learning_rate, a.beta1, a.beta2, a.epsilon
        )
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Tensors,
    v: Tensors,
    t: i32,
}

impl Adam {
    pub fn new(config: AdamConfig, dims: &ModelDims) -> Self {
        Self {
            config,
            m: Tensors::zeros(dims),
            v: Tensors::zeros(dims),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &GradientSet, lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let step = lr / c1;
        let params_slices = params.tensors.slices_mut();
        let m_slices = self.m.slices_mut();
        let v_slices = self.v.slices_mut();
        for (((p, m), v), g) in params_slices.into_iter().zip(m_slices).zip(v_slices).zip(grads.slices()) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                p[i] -= step * m[i] / ((v[i] / c2).sqrt() + epsilon);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: BTreeMap<String, f64>,
    pub dev_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss_spec: LossSpec,
    pub optimizer: String,
    pub epochs: Vec<EpochStats>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub checkpoint: Option<String>,
}

/// Accuracy of one language group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LangAccuracy {
    pub lang: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub rows: Vec<LangAccuracy>,
    pub macro_average: f64,
    pub warnings: Vec<String>,
}

impl AccuracyTable {
    pub fn get(&self, lang: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.lang == lang).map(|r| r.accuracy)
    }

    /// Mean accuracy over the given languages that are present in the table.
    pub fn mean_over(&self, langs: &[String]) -> Option<f64> {
        let vals: Vec<f64> = langs.iter().filter_map(|l| self.get(l)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// A model prediction next to its gold label.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub distribution: Distribution,
    pub label: Label,
    pub lang: String,
}

impl Prediction {
    pub fn predicted(&self) -> usize {
        self.distribution.argmax()
    }

    pub fn correct(&self) -> bool {
        self.predicted() == self.label.index()
    }
}

struct Encoded {
    ids: Vec<u32>,
    label: Label,
    lang: String,
}

fn encode_all(vocab: &Vocabulary, examples: &[Example]) -> Result<Vec<Encoded>> {
    examples
        .iter()
        .map(|e| {
            Ok(Encoded {
                ids: vocab.encode(e)?,
                label: e.label,
                lang: e.lang.clone(),
            })
        })
        .collect()
}

#[cfg(feature = "parallel")]
fn map_ordered<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_ordered<T, R>(items: &[T], f: impl Fn(&T) -> R) -> Vec<R> {
    items.iter().map(f).collect()
}

fn predict_encoded(params: &ModelParams, data: &[Encoded]) -> Result<Vec<Prediction>> {
    map_ordered(data, |e| {
        forward(params, &e.ids).map(|t| Prediction {
            distribution: t.distribution,
            label: e.label,
            lang: e.lang.clone(),
        })
    })
    .into_iter()
    .collect()
}

/// Predicted distribution for every example, in input order.
pub fn predict(params: &ModelParams, examples: &[Example]) -> Result<Vec<Prediction>> {
    let data = encode_all(params.vocab()?, examples)?;
    predict_encoded(params, &data)
}

/// Per-language accuracy plus macro average over the languages present.
/// Languages appear in order of first occurrence.
pub fn accuracy_table(predictions: &[Prediction], expected: Option<&[String]>) -> AccuracyTable {
    let mut order: Vec<String> = Vec::new();
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for p in predictions {
        let entry = counts.entry(p.lang.clone()).or_insert_with(|| {
            order.push(p.lang.clone());
            (0, 0)
        });
        entry.0 += usize::from(p.correct());
        entry.1 += 1;
    }
    let mut warnings = Vec::new();
    let mut langs = order.clone();
    if let Some(expected) = expected {
        for lang in expected {
            if !counts.contains_key(lang) {
                warnings.push(format!("language `{lang}` has no examples; omitted"));
            }
        }
        for lang in &order {
            if !expected.contains(lang) {
                warnings.push(format!("language `{lang}` is not among the expected languages"));
            }
        }
        langs = expected.iter().filter(|l| counts.contains_key(*l)).cloned().collect();
        langs.extend(order.iter().filter(|l| !expected.contains(l)).cloned());
    }
    for w in &warnings {
        warn!("{w}");
    }
    let rows: Vec<LangAccuracy> = langs
        .into_iter()
        .map(|lang| {
            let (correct, total) = counts[&lang];
            LangAccuracy {
                accuracy: correct as f64 / total as f64,
                lang,
                correct,
                total,
            }
        })
        .collect();
    let macro_average = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.accuracy).sum::<f64>() / rows.len() as f64
    };
    AccuracyTable {
        rows,
        macro_average,
        warnings,
    }
}

/// Accuracy per language of `split`, plus the macro average.
pub fn evaluate(params: &ModelParams, split: &[Example]) -> Result<AccuracyTable> {
    Ok(accuracy_table(&predict(params, split)?, None))
}

/// Like [`evaluate`], but reports languages outside `expected` and omits
/// expected languages that have no examples.
pub fn evaluate_languages(params: &ModelParams, split: &[Example], expected: &[String]) -> Result<AccuracyTable> {
    Ok(accuracy_table(&predict(params, split)?, Some(expected)))
}

const INIT_STREAM: u64 = 0x494E_4954;

fn initial_params(config: &TrainConfig, vocab: &Vocabulary) -> Result<ModelParams> {
    ModelParams::init(derive_seed(config.seed, INIT_STREAM), config.model_dims(vocab.len())).with_vocab(vocab.clone())
}

/// Shared epoch loop: runs `epoch_fn`, scores dev, keeps the best params and
/// stops once dev accuracy has not improved for `patience` epochs.
fn run_epochs(
    config: &TrainConfig,
    mut params: ModelParams,
    dev: &[Encoded],
    source_lang: &str,
    mut epoch_fn: impl FnMut(usize, &mut ModelParams, &mut Adam) -> Result<f64>,
) -> Result<(ModelParams, TrainReport)> {
    let mut adam = Adam::new(config.optimizer, &params.dims);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut epochs = Vec::new();
    let mut stale = 0;
    let mut stopped_early = false;

    for epoch in 0..config.max_epochs {
        let train_loss = epoch_fn(epoch, &mut params, &mut adam)?;
        let table = accuracy_table(&predict_encoded(&params, dev)?, None);
        let metric = match config.dev_metric {
            DevMetric::MacroAverage => table.macro_average,
            DevMetric::SourceOnly => table.get(source_lang).unwrap_or(table.macro_average),
        };
        debug!("epoch {} loss {train_loss:.5} dev {metric:.4}", epoch + 1);
        epochs.push(EpochStats {
            epoch: epoch + 1,
            train_loss,
            dev_accuracy: table.rows.iter().map(|r| (r.lang.clone(), r.accuracy)).collect(),
            dev_metric: metric,
        });
        match &best {
            Some((score, ..)) if metric <= *score => {
                stale += 1;
                if stale >= config.patience && epoch + 1 < config.max_epochs {
                    stopped_early = true;
                    break;
                }
            }
            _ => {
                best = Some((metric, epoch + 1, params.clone()));
                stale = 0;
            }
        }
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch runs");
    let report = TrainReport {
        loss_spec: config.loss_spec.clone(),
        optimizer: config.optimizer_label(),
        epochs_run: epochs.len(),
        epochs,
        best_epoch,
        stopped_early,
        checkpoint: None,
    };
    Ok((best_params, report))
}

fn single_example_epoch(
    config: &TrainConfig,
    train: &[Encoded],
    epoch: usize,
    params: &mut ModelParams,
    adam: &mut Adam,
    grads: &mut GradientSet,
) -> Result<f64> {
    let order = epoch_permutation(train.len(), config.seed, epoch as u64);
    let mut total = 0.0;
    for batch in order.chunks(config.batch_size) {
        let items: Vec<(&[u32], Label)> = batch.iter().map(|&i| (train[i].ids.as_slice(), train[i].label)).collect();
        grads.fill(0.0);
        total += batch.len() as f64 * single_batch_gradient(params, &items, grads)?;
        adam.step(params, grads, config.learning_rate);
    }
    Ok(total / train.len() as f64)
}

/// Mean cross-entropy of a batch of `(token ids, label)`; adds the gradient
/// of that mean into `grads`.
pub fn single_batch_gradient(params: &ModelParams, batch: &[(&[u32], Label)], grads: &mut GradientSet) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for &(ids, label) in batch {
        let trace = forward(params, ids)?;
        let loss = loss_zero_shot(&trace, label);
        total += loss.value;
        backward_into(params, &trace, &loss.upstream, scale, grads)?;
    }
    Ok(total * scale)
}

/// One original/translation pair of a parallel batch.
#[derive(Debug, Clone, Copy)]
pub struct PairItem<'a> {
    pub original: &'a [u32],
    pub translated: &'a [u32],
    pub label: Label,
    pub translated_label: Label,
}

/// Mean paired objective of a batch; adds the gradient of that mean into
/// `grads`.
pub fn pair_batch_gradient(
    params: &ModelParams,
    batch: &[PairItem<'_>],
    spec: &LossSpec,
    grads: &mut GradientSet,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for item in batch {
        let trace_o = forward(params, item.original)?;
        let trace_t = forward(params, item.translated)?;
        let loss = loss_parallel(&trace_o, &trace_t, item.label, item.translated_label, spec)?;
        total += loss.value;
        backward_into(params, &trace_o, &loss.original, scale, grads)?;
        backward_into(params, &trace_t, &loss.translated, scale, grads)?;
    }
    Ok(total * scale)
}

fn train_single(
    config: &TrainConfig,
    vocab: &Vocabulary,
    train: &[Example],
    dev: &[Example],
) -> Result<(ModelParams, TrainReport)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if dev.is_empty() {
        return Err(Error::Empty("dev split"));
    }
    let train = encode_all(vocab, train)?;
    let dev_enc = encode_all(vocab, dev)?;
    let params = initial_params(config, vocab)?;
    let mut grads = Tensors::zeros(&params.dims);
    let source = dev[0].lang.clone();
    run_epochs(config, params, &dev_enc, &source, |epoch, params, adam| {
        single_example_epoch(config, &train, epoch, params, adam, &mut grads)
    })
}

/// Trains on source-language data only.
pub fn train_zero_shot(
    config: &TrainConfig,
    vocab: &Vocabulary,
    source_train: &[Example],
    source_dev: &[Example],
) -> Result<(ModelParams, TrainReport)> {
    expect_scenario(config, Scenario::ZeroShot)?;
    train_single(config, vocab, source_train, source_dev)
}

/// Trains on the pooled source and translated data, reshuffled every epoch.
pub fn train_non_parallel(
    config: &TrainConfig,
    vocab: &Vocabulary,
    pool: &[Example],
    dev: &[Example],
) -> Result<(ModelParams, TrainReport)> {
    expect_scenario(config, Scenario::NonParallel)?;
    train_single(config, vocab, pool, dev)
}

struct EncodedGroup {
    original: Encoded,
    translations: Vec<Encoded>,
}

/// Trains on original/translation pairs with the consistency objective. Each
/// epoch visits every original once, paired with a translation drawn
/// uniformly from the target languages.
pub fn train_parallel(
    config: &TrainConfig,
    vocab: &Vocabulary,
    groups: &[ParallelGroup],
    dev: &[Example],
) -> Result<(ModelParams, TrainReport)> {
    expect_scenario(config, Scenario::Parallel)?;
    config.validate()?;
    if groups.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if dev.is_empty() {
        return Err(Error::Empty("dev split"));
    }
    let num_targets = groups[0].translations.len();
    if num_targets == 0 {
        return Err(Error::InvalidArgument("parallel training needs at least one target language".into()));
    }
    let mut encoded = Vec::with_capacity(groups.len());
    for g in groups {
        if g.translations.len() != num_targets {
            return Err(Error::InvalidArgument(format!(
                "pair_id {} has {} translations, expected {num_targets}",
                g.original.pair_id,
                g.translations.len()
            )));
        }
        for t in &g.translations {
            if t.label != g.original.label {
                return Err(Error::LabelMismatch {
                    pair_id: g.original.pair_id,
                    original: g.original.label.to_string(),
                    translated: t.label.to_string(),
                });
            }
        }
        encoded.push(EncodedGroup {
            original: encode_all(vocab, std::slice::from_ref(&g.original))?.pop().expect("one"),
            translations: encode_all(vocab, &g.translations)?,
        });
    }
    let dev_enc = encode_all(vocab, dev)?;
    let params = initial_params(config, vocab)?;
    let mut grads = Tensors::zeros(&params.dims);
    let source = groups[0].original.lang.clone();

    run_epochs(config, params, &dev_enc, &source, |epoch, params, adam| {
        let order = epoch_permutation(encoded.len(), config.seed, epoch as u64);
        let targets = draw_targets(encoded.len(), num_targets, config.seed, epoch as u64);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let items: Vec<PairItem> = batch
                .iter()
                .map(|&i| {
                    let g = &encoded[i];
                    let t = &g.translations[targets[i]];
                    PairItem {
                        original: &g.original.ids,
                        translated: &t.ids,
                        label: g.original.label,
                        translated_label: t.label,
                    }
                })
                .collect();
            grads.fill(0.0);
            total += batch.len() as f64 * pair_batch_gradient(params, &items, &config.loss_spec, &mut grads)?;
            adam.step(params, &grads, config.learning_rate);
        }
        Ok(total / encoded.len() as f64)
    })
}

fn expect_scenario(config: &TrainConfig, scenario: Scenario) -> Result<()> {
    if config.loss_spec.scenario != scenario {
        return Err(Error::LossSpec(format!(
            "expected a {scenario} loss spec, got {}",
            config.loss_spec.scenario
        )));
    }
    Ok(())
}

/// Renders an accuracy table as aligned text (percent, one decimal).
pub fn render_accuracy(table: &AccuracyTable) -> String {
    let mut out = String::new();
    for r in &table.rows {
        let _ = write!(out, "{:>8}", r.lang);
    }
    let _ = writeln!(out, "{:>8}", "avg");
    for r in &table.rows {
        let _ = write!(out, "{:>8.1}", 100.0 * r.accuracy);
    }
    let _ = writeln!(out, "{:>8.1}", 100.0 * table.macro_average);
    out
}
