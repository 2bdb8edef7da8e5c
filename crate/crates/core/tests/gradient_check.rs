//! End-to-end analytic gradients against central finite differences on
//! 2-example batches, for every scenario and regularizer.

use xlcons::data::Label;
use xlcons::losses::{KlDirection, LossSpec, Regularizer};
use xlcons::model::{GradientSet, ModelDims, ModelParams, Tensors, TENSOR_NAMES};
use xlcons::trainer::{pair_batch_gradient, single_batch_gradient, PairItem};

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;

fn params(seed: u64) -> ModelParams {
    let dims = ModelDims {
        vocab_size: 10,
        embed_dim: 6,
        hidden_dim: 5,
        num_classes: 3,
    };
    let mut p = ModelParams::init(seed, dims);
    // Larger weights than the training init so every layer is exercised
    // away from its linear regime.
    p.tensors.scale(10.0);
    p
}

/// Largest relative error between `analytic` and central differences of `f`.
fn max_relative_error(p: &ModelParams, analytic: &GradientSet, f: impl Fn(&ModelParams) -> f64) -> (f64, String) {
    let mut worst = (0.0, String::new());
    let mut probe = p.clone();
    for t in 0..TENSOR_NAMES.len() {
        let len = probe.tensors.slices()[t].len();
        for i in 0..len {
            let orig = probe.tensors.slices()[t][i];
            probe.tensors.slices_mut()[t][i] = orig + STEP;
            let up = f(&probe);
            probe.tensors.slices_mut()[t][i] = orig - STEP;
            let down = f(&probe);
            probe.tensors.slices_mut()[t][i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic.slices()[t][i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5);
            if err > worst.0 {
                worst = (err, format!("{}[{i}]: analytic {a:e}, numeric {numeric:e}", TENSOR_NAMES[t]));
            }
        }
    }
    worst
}

const ORIG: [&[u32]; 2] = [&[2, 3, 4, 0, 3, 5, 1, 6], &[7, 8, 0, 2, 9, 9]];
const TRANS: [&[u32]; 2] = [&[2, 8, 4, 0, 3, 5, 1, 7], &[6, 8, 0, 2, 9, 4, 5]];
const LABELS: [Label; 2] = [Label::Ref, Label::Nei];

fn check_single(name: &str, batch: &[(&[u32], Label)]) {
    let p = params(3);
    let mut g = Tensors::zeros(&p.dims);
    single_batch_gradient(&p, batch, &mut g).unwrap();
    let f = |q: &ModelParams| {
        let mut scratch = Tensors::zeros(&q.dims);
        single_batch_gradient(q, batch, &mut scratch).unwrap()
    };
    let (err, at) = max_relative_error(&p, &g, f);
    assert!(err < TOLERANCE, "{name}: relative error {err:e} at {at}");
}

fn check_pairs(spec: &LossSpec) {
    let p = params(5);
    let batch: Vec<PairItem> = (0..2)
        .map(|i| PairItem {
            original: ORIG[i],
            translated: TRANS[i],
            label: LABELS[i],
            translated_label: LABELS[i],
        })
        .collect();
    let mut g = Tensors::zeros(&p.dims);
    pair_batch_gradient(&p, &batch, spec, &mut g).unwrap();
    let f = |q: &ModelParams| {
        let mut scratch = Tensors::zeros(&q.dims);
        pair_batch_gradient(q, &batch, spec, &mut scratch).unwrap()
    };
    let (err, at) = max_relative_error(&p, &g, f);
    assert!(err < TOLERANCE, "{}: relative error {err:e} at {at}", spec.name());
}

#[test]
fn zero_shot_batch() {
    check_single("zero-shot", &[(ORIG[0], LABELS[0]), (ORIG[1], LABELS[1])]);
}

#[test]
fn non_parallel_mixed_language_batch() {
    check_single("non-parallel", &[(ORIG[0], LABELS[0]), (TRANS[1], LABELS[1])]);
}

#[test]
fn parallel_every_regularizer() {
    for reg in Regularizer::ALL {
        check_pairs(&LossSpec::parallel(reg, reg.default_lambda()));
    }
}

#[test]
fn parallel_variants() {
    check_pairs(&LossSpec::combined());
    check_pairs(&LossSpec {
        kl_direction: KlDirection::TranslatedToOriginal,
        ..LossSpec::parallel(Regularizer::Kl, 0.7)
    });
    check_pairs(&LossSpec::parallel(Regularizer::J, 3.0));
}

#[test]
fn gradient_is_linear_in_batch_mean() {
    // The batch gradient is the mean of per-example gradients.
    let p = params(9);
    let mut both = Tensors::zeros(&p.dims);
    single_batch_gradient(&p, &[(ORIG[0], LABELS[0]), (ORIG[1], LABELS[1])], &mut both).unwrap();
    let mut sum = Tensors::zeros(&p.dims);
    single_batch_gradient(&p, &[(ORIG[0], LABELS[0])], &mut sum).unwrap();
    single_batch_gradient(&p, &[(ORIG[1], LABELS[1])], &mut sum).unwrap();
    sum.scale(0.5);
    for (a, b) in both.slices().iter().zip(sum.slices()) {
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-14);
        }
    }
}

#[test]
fn checker_rejects_a_wrong_gradient() {
    let p = params(3);
    let batch = [(ORIG[0], LABELS[0]), (ORIG[1], LABELS[1])];
    let mut g = Tensors::zeros(&p.dims);
    single_batch_gradient(&p, &batch, &mut g).unwrap();
    g.hid_w[4] *= 1.001;
    let f = |q: &ModelParams| {
        let mut scratch = Tensors::zeros(&q.dims);
        single_batch_gradient(q, &batch, &mut scratch).unwrap()
    };
    assert!(max_relative_error(&p, &g, f).0 > TOLERANCE);
}
