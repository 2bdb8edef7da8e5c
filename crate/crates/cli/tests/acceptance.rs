//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::fs;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution as _};
use xlcons::calibration::{compute_ece, PredictionRecord};
use xlcons::data::{generate_corpus, label_by_rule, CorpusSpec, Label, Split};
use xlcons::experiment::{experiment_config, run_matrix, ExperimentMatrix, MatrixReport};
use xlcons::losses::{loss_parallel, LossSpec, Regularizer};
use xlcons::model::{forward, GradientSet, ModelDims, ModelParams, Tensors, TENSOR_NAMES};
use xlcons::probcore::{cross_entropy, entropy, j_div, js_div, kl, Distribution};
use xlcons::trainer::{pair_batch_gradient, single_batch_gradient, PairItem};
use xlcons_cli::{cmd_compare, cmd_gendata, CompareArgs, GendataArgs, HyperArgs};

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(n: usize, title: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let o = f();
    println!(
        "[{}] {n}. {title}: {} ({:.1} s)",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        start.elapsed().as_secs_f64()
    );
    o.pass
}

// 1 -------------------------------------------------------------------------

fn divergence_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let ln2 = std::f64::consts::LN_2;
    let mut failures = Vec::new();
    let samples = 10_000;
    for i in 0..samples {
        // Spread concentrations from sparse to nearly uniform.
        let alpha = [0.05, 0.3, 1.0, 4.0][i % 4];
        let dir = Dirichlet::new([alpha; 3]).unwrap();
        let p = Distribution::new(dir.sample(&mut rng).to_vec()).unwrap();
        let q = Distribution::new(dir.sample(&mut rng).to_vec()).unwrap();
        let (k, j, js) = (kl(&p, &q), j_div(&p, &q), js_div(&p, &q));
        let decomposition = cross_entropy(&p, &q) - entropy(&p);
        let ok = k >= 0.0
            && j >= 0.0
            && js >= 0.0
            && j == j_div(&q, &p)
            && js == js_div(&q, &p)
            && js <= ln2
            && (k - decomposition).abs() <= 1e-10 * (1.0 + k)
            && 4.0 * js <= j + 1e-12;
        if !ok {
            failures.push(i);
        }
    }
    let elapsed = start.elapsed();
    Outcome {
        pass: failures.is_empty() && elapsed < Duration::from_secs(5),
        detail: format!("{} failures over {samples} Dirichlet pairs", failures.len()),
    }
}

// 2 -------------------------------------------------------------------------

const STEP: f64 = 1e-5;

/// Largest relative error between analytic and central-difference gradients
/// over every parameter the batch touches.
fn fd_error(p: &ModelParams, analytic: &GradientSet, used_tokens: &[u32], f: &dyn Fn(&ModelParams) -> f64) -> f64 {
    let d = p.dims.embed_dim;
    let mut probe = p.clone();
    let mut worst: f64 = 0.0;
    for t in 0..TENSOR_NAMES.len() {
        let indices: Vec<usize> = if t == 0 {
            used_tokens.iter().flat_map(|&tok| (tok as usize * d)..(tok as usize + 1) * d).collect()
        } else {
            (0..probe.tensors.slices()[t].len()).collect()
        };
        for i in indices {
            let orig = probe.tensors.slices()[t][i];
            probe.tensors.slices_mut()[t][i] = orig + STEP;
            let up = f(&probe);
            probe.tensors.slices_mut()[t][i] = orig - STEP;
            let down = f(&probe);
            probe.tensors.slices_mut()[t][i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic.slices()[t][i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5));
        }
    }
    // Rows of tokens outside the batch must have exactly zero gradient.
    let untouched = (0..p.dims.vocab_size as u32)
        .filter(|tok| !used_tokens.contains(tok))
        .flat_map(|tok| &analytic.embedding[tok as usize * d..(tok as usize + 1) * d])
        .any(|g| *g != 0.0);
    if untouched {
        f64::INFINITY
    } else {
        worst
    }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let corpus = generate_corpus(&CorpusSpec {
        train_size: 30,
        dev_size: 3,
        test_size: 3,
        vocab_size: 40,
        ..CorpusSpec::default()
    })
    .unwrap()
    .corpus;
    let vocab = corpus.vocabulary();
    let mut params = ModelParams::init(17, ModelDims::new(vocab.len()));
    // Weights ten times the training init keep the tanh layers nonlinear.
    params.tensors.scale(10.0);
    let params = params.with_vocab(vocab.clone()).unwrap();
    let groups = corpus.parallel_groups(Split::Train).unwrap();
    let enc = |e| vocab.encode(e).unwrap();
    let originals: Vec<Vec<u32>> = groups[..2].iter().map(|g| enc(&g.original)).collect();
    let translated: Vec<Vec<u32>> = groups[..2].iter().enumerate().map(|(i, g)| enc(&g.translations[i])).collect();
    let labels: Vec<Label> = groups[..2].iter().map(|g| g.original.label).collect();

    let mut results = Vec::new();
    // Zero-shot: two source examples; non-parallel: a mixed-language batch.
    let single_batches: [(&str, Vec<(&[u32], Label)>); 2] = [
        ("zero-shot", vec![(&originals[0], labels[0]), (&originals[1], labels[1])]),
        ("non-parallel", vec![(&originals[0], labels[0]), (&translated[1], labels[1])]),
    ];
    for (name, batch) in &single_batches {
        let used: Vec<u32> = batch.iter().flat_map(|(ids, _)| ids.iter().copied()).collect();
        let mut g = Tensors::zeros(&params.dims);
        single_batch_gradient(&params, batch, &mut g).unwrap();
        let f = |q: &ModelParams| single_batch_gradient(q, batch, &mut Tensors::zeros(&q.dims)).unwrap();
        results.push((name.to_string(), fd_error(&params, &g, &used, &f)));
    }
    let pairs: Vec<PairItem> = (0..2)
        .map(|i| PairItem {
            original: &originals[i],
            translated: &translated[i],
            label: labels[i],
            translated_label: labels[i],
        })
        .collect();
    let used: Vec<u32> = originals.iter().chain(&translated).flatten().copied().collect();
    for reg in Regularizer::ALL {
        let spec = LossSpec::parallel(reg, reg.default_lambda());
        let mut g = Tensors::zeros(&params.dims);
        pair_batch_gradient(&params, &pairs, &spec, &mut g).unwrap();
        let f = |q: &ModelParams| pair_batch_gradient(q, &pairs, &spec, &mut Tensors::zeros(&q.dims)).unwrap();
        results.push((spec.name(), fd_error(&params, &g, &used, &f)));
    }
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let failing: Vec<&str> = results.iter().filter(|r| !(r.1 < 1e-4)).map(|r| r.0.as_str()).collect();
    Outcome {
        pass: results.len() == 10 && failing.is_empty() && start.elapsed() < Duration::from_secs(60),
        detail: format!(
            "{} configurations, worst relative error {worst:.2e}, failing {failing:?}",
            results.len()
        ),
    }
}

// 3 -------------------------------------------------------------------------

fn jeffreys_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst: f64 = 0.0;
    let cases = 1000;
    for case in 0..cases {
        let dims = ModelDims {
            vocab_size: 20,
            embed_dim: 8,
            hidden_dim: 8,
            num_classes: 3,
        };
        let mut p = ModelParams::init(case, dims);
        p.tensors.scale(rng.random_range(1.0..60.0));
        let mut ids = || -> Vec<u32> { (0..rng.random_range(1..15)).map(|_| rng.random_range(0..20)).collect() };
        let (a, b) = (ids(), ids());
        let (o, t) = (forward(&p, &a).unwrap(), forward(&p, &b).unwrap());
        let y = Label::ALL[rng.random_range(0..3)];
        let lambda = rng.random_range(0.0..2.0);
        let value = loss_parallel(&o, &t, y, y, &LossSpec::parallel(Regularizer::J, lambda))
            .unwrap()
            .value;
        let q = Distribution::one_hot(y.index(), 3);
        let (pd, pt) = (&o.distribution, &t.distribution);
        let rearranged = cross_entropy(&q, pd)
            + cross_entropy(&q, pt)
            + lambda * (cross_entropy(pd, pt) + cross_entropy(pt, pd) - entropy(pd) - entropy(pt));
        worst = worst.max((value - rearranged).abs());
    }
    Outcome {
        pass: worst <= 1e-10,
        detail: format!("{cases} random trace pairs, max |difference| {worst:.2e}"),
    }
}

// 4 -------------------------------------------------------------------------

fn oracle_ece(records: &[PredictionRecord], m: usize) -> f64 {
    let n = records.len() as f64;
    (1..=m)
        .map(|i| {
            let lo = (i - 1) as f64 / m as f64;
            let hi = i as f64 / m as f64;
            let bin: Vec<&PredictionRecord> = records
                .iter()
                .filter(|r| r.confidence > lo && r.confidence <= hi)
                .collect();
            if bin.is_empty() {
                return 0.0;
            }
            let k = bin.len() as f64;
            let acc = bin.iter().filter(|r| r.predicted == r.actual).count() as f64 / k;
            let conf = bin.iter().map(|r| r.confidence).sum::<f64>() / k;
            k / n * (acc - conf).abs()
        })
        .sum()
}

fn ece_oracle() -> Outcome {
    let strategy = (1usize..=30).prop_flat_map(|m| {
        let conf = prop_oneof![
            (1..=m).prop_map(move |i| i as f64 / m as f64),
            (0..m).prop_map(move |i| i as f64 / m as f64 + 1e-15),
            1e-9f64..=1.0,
        ];
        (Just(m), prop::collection::vec((conf, 0usize..3, 0usize..3), 1..80))
    });
    let mut runner = TestRunner::new_with_rng(
        Config {
            cases: 1000,
            failure_persistence: None,
            ..Config::default()
        },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    let result = runner.run(&strategy, |(m, raw)| {
        let recs: Vec<PredictionRecord> = raw
            .into_iter()
            .map(|(confidence, predicted, actual)| PredictionRecord {
                confidence,
                predicted,
                actual,
            })
            .collect();
        let got = compute_ece(&recs, m).unwrap().ece;
        let want = oracle_ece(&recs, m);
        prop_assert!((got - want).abs() <= 1e-12, "M={} got {} want {}", m, got, want);
        Ok(())
    });
    let r = |c: f64, ok: bool| PredictionRecord {
        confidence: c,
        predicted: 0,
        actual: usize::from(!ok),
    };
    let worked = compute_ece(&[r(0.9, true), r(0.9, false), r(0.6, true), r(0.6, true)], 20)
        .unwrap()
        .ece;
    Outcome {
        pass: result.is_ok() && (worked - 0.4).abs() < 1e-12,
        detail: format!(
            "1000 random record sets {}, worked example ECE = {worked}",
            if result.is_ok() { "match the oracle" } else { "DIVERGE from the oracle" }
        ),
    }
}

// 5 -------------------------------------------------------------------------

fn label_invariance() -> Outcome {
    let spec = CorpusSpec {
        noise_rate: 0.0,
        ..CorpusSpec::default()
    };
    let corpus = generate_corpus(&spec).unwrap().corpus;
    let (mut checked, mut mismatches) = (0, 0);
    for split in Split::ALL {
        for lang in corpus.targets() {
            for ex in corpus.get(split, lang) {
                checked += 1;
                mismatches += usize::from(label_by_rule(&ex.claim, &ex.evidence) != ex.label);
            }
        }
    }
    Outcome {
        pass: checked > 0 && mismatches == 0,
        detail: format!("{mismatches} mismatches over {checked} translated examples"),
    }
}

// 6, 7 ----------------------------------------------------------------------

const SEEDS: [u64; 3] = [1, 2, 3];

fn target_mean(report: &MatrixReport, cell: &str, targets: &[String]) -> f64 {
    report.cell(cell).unwrap().accuracy.mean_over(targets).unwrap()
}

fn trend_runs() -> (Vec<MatrixReport>, Vec<Duration>, Vec<String>) {
    let corpus = generate_corpus(&CorpusSpec::default()).unwrap().corpus;
    let matrix = ExperimentMatrix::from_specs([
        LossSpec::zero_shot(),
        LossSpec::non_parallel(),
        LossSpec::parallel(Regularizer::None, 1.0),
        LossSpec::parallel(Regularizer::J, 0.25),
        LossSpec::parallel(Regularizer::Js, 1.0),
    ])
    .unwrap();
    let mut reports = Vec::new();
    let mut t1_time = Vec::new();
    for seed in SEEDS {
        let base = experiment_config(seed);
        // Time the two T1 cells on their own so the budget check is honest.
        let t = Instant::now();
        let t1 = ExperimentMatrix {
            cells: matrix.cells[..2].to_vec(),
        };
        let first = run_matrix(&corpus, &t1, &base, 20);
        t1_time.push(t.elapsed());
        let rest = run_matrix(
            &corpus,
            &ExperimentMatrix {
                cells: matrix.cells[2..].to_vec(),
            },
            &base,
            20,
        );
        let mut cells = first.cells;
        cells.extend(rest.cells);
        reports.push(MatrixReport {
            languages: first.languages,
            cells,
        });
    }
    (reports, t1_time, corpus.targets().to_vec())
}

fn trend_t1(reports: &[MatrixReport], times: &[Duration], targets: &[String]) -> Outcome {
    if let Some(f) = reports.iter().flat_map(|r| &r.cells).find(|c| c.outcome.is_err()) {
        return Outcome {
            pass: false,
            detail: format!("cell {} failed", f.name),
        };
    }
    let zs: Vec<f64> = reports.iter().map(|r| target_mean(r, "zero-shot", targets)).collect();
    let np: Vec<f64> = reports.iter().map(|r| target_mean(r, "non-parallel", targets)).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let gap = 100.0 * (mean(&np) - mean(&zs));
    let total: Duration = times.iter().sum();
    let pct = |v: &[f64]| v.iter().map(|x| format!("{:.1}", 100.0 * x)).collect::<Vec<_>>().join("/");
    Outcome {
        pass: gap >= 5.0 && total < Duration::from_secs(600),
        detail: format!(
            "target accuracy non-parallel {} vs zero-shot {} (seeds 1/2/3), mean gap {gap:.1} points, training {:.0} s",
            pct(&np),
            pct(&zs),
            total.as_secs_f64()
        ),
    }
}

fn trend_t2(reports: &[MatrixReport]) -> Outcome {
    let (mut j_wins, mut js_wins) = (0, 0);
    let mut rows = Vec::new();
    for (seed, r) in SEEDS.iter().zip(reports) {
        let ece = |name: &str| r.cell(name).map(|c| c.ece.macro_average);
        let (Some(base), Some(j), Some(js)) = (ece("parallel"), ece("parallel+j(0.25)"), ece("parallel+js(1)")) else {
            rows.push(format!("seed {seed}: a cell failed"));
            continue;
        };
        j_wins += usize::from(j < base);
        js_wins += usize::from(js < base);
        rows.push(format!(
            "seed {seed}: parallel {:.2} / J {:.2} / JS {:.2}",
            100.0 * base,
            100.0 * j,
            100.0 * js
        ));
    }
    Outcome {
        pass: j_wins >= 2 || js_wins >= 2,
        detail: format!(
            "macro ECE below unregularized in J {j_wins}/3, JS {js_wins}/3 seeds [{}]",
            rows.join("; ")
        ),
    }
}

// 8 -------------------------------------------------------------------------

fn identity_trend() -> Outcome {
    let spec = CorpusSpec {
        cognate_ratio: 1.0,
        noise_rate: 0.0,
        train_size: 1000,
        ..CorpusSpec::default()
    };
    let corpus = generate_corpus(&spec).unwrap().corpus;
    let report = run_matrix(&corpus, &ExperimentMatrix::default(), &experiment_config(1), 20);
    let mut unequal = Vec::new();
    for cell in &report.cells {
        match &cell.outcome {
            Ok(o) => {
                let first = o.accuracy.rows[0].accuracy;
                if o.accuracy.rows.len() != 4 || o.accuracy.rows.iter().any(|r| r.accuracy != first) {
                    unequal.push(cell.name.clone());
                }
            }
            Err(_) => unequal.push(format!("{} (failed)", cell.name)),
        }
    }
    Outcome {
        pass: unequal.is_empty(),
        detail: format!("{} cells, rows with unequal languages: {unequal:?}", report.cells.len()),
    }
}

// 9 -------------------------------------------------------------------------

fn compare_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("corpus");
    cmd_gendata(&GendataArgs {
        out: data.clone(),
        languages: None,
        train: Some(300),
        dev: Some(60),
        test: Some(120),
        vocab_size: None,
        topics: None,
        hard_nei_rate: None,
        cognate_ratio: None,
        noise: None,
        seed: Some(5),
    })
    .unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let args = CompareArgs {
            data: data.clone(),
            out: out.clone(),
            cells: None,
            bins: 20,
            hyper: HyperArgs {
                config: None,
                seed: Some(8),
                epochs: Some(3),
                batch_size: None,
                patience: None,
                lr: None,
            },
        };
        cmd_compare(&args).map(|_| out)
    };
    let (a, b) = match (run("a"), run("b")) {
        (Ok(a), Ok(b)) => (a, b),
        (a, b) => {
            return Outcome {
                pass: false,
                detail: format!("compare failed: {:?} / {:?}", a.err(), b.err()),
            }
        }
    };
    let same = |f: &str| fs::read(a.join(f)).unwrap() == fs::read(b.join(f)).unwrap();
    let rows = fs::read_to_string(a.join("accuracy.tsv")).unwrap().lines().count() - 1;
    Outcome {
        pass: same("accuracy.tsv") && same("ece.tsv") && rows == 10,
        detail: format!(
            "{rows}-row matrix rerun: accuracy.tsv identical = {}, ece.tsv identical = {}",
            same("accuracy.tsv"),
            same("ece.tsv")
        ),
    }
}

fn main() {
    let mut results = vec![
        check(1, "divergence properties", divergence_suite),
        check(2, "end-to-end gradients vs finite differences", gradient_suite),
        check(3, "Jeffreys loss entropy rearrangement", jeffreys_identity),
        check(4, "ECE brute-force oracle", ece_oracle),
        check(5, "label invariance of noiseless translations", label_invariance),
    ];
    let start = Instant::now();
    let (reports, times, targets) = trend_runs();
    println!("       (trend training runs: {:.0} s)", start.elapsed().as_secs_f64());
    results.push(check(6, "T1 non-parallel beats zero-shot on targets", || {
        trend_t1(&reports, &times, &targets)
    }));
    results.push(check(7, "T2 J/JS lower parallel ECE", || trend_t2(&reports)));
    results.push(check(8, "T3 identity corpus gives equal columns", identity_trend));
    results.push(check(9, "compare reruns are byte-identical", compare_determinism));

    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
