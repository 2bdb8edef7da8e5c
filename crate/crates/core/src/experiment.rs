//! Scenario × regularizer experiment matrix: trains each cell on a shared
//! corpus and seed, then tabulates per-language test accuracy and ECE.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::{info, warn};
use serde::Serialize;

use crate::calibration::{compute_ece, reliability_csv, CalibrationReport, PredictionRecord};
use crate::data::{Corpus, Split};
use crate::error::{Error, Result};
use crate::losses::{LossSpec, Regularizer, Scenario};
use crate::model::{self, ModelParams};
use crate::trainer::{
    accuracy_table, predict, train_non_parallel, train_parallel, train_zero_shot, AccuracyTable, Prediction,
    TrainConfig, TrainReport,
};

/// Learning rate used for the matrix runs. At the optimizer's default of
/// 1e-3 the synthetic task does not leave its majority-class plateau within
/// ten epochs.
pub const EXPERIMENT_LEARNING_RATE: f64 = 0.02;

/// Trainer defaults with [`EXPERIMENT_LEARNING_RATE`] and the given seed.
pub fn experiment_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: EXPERIMENT_LEARNING_RATE,
        seed,
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub name: String,
    pub spec: LossSpec,
}

impl Cell {
    pub fn new(spec: LossSpec) -> Self {
        Self {
            name: spec.name(),
            spec,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentMatrix {
    pub cells: Vec<Cell>,
}

impl Default for ExperimentMatrix {
    /// Zero-shot, non-parallel, unregularized parallel, then parallel with
    /// each of the seven consistency regularizers at its default strength.
    fn default() -> Self {
        let mut cells = vec![
            Cell::new(LossSpec::zero_shot()),
            Cell::new(LossSpec::non_parallel()),
            Cell::new(LossSpec::parallel(Regularizer::None, 0.0)),
        ];
        cells.extend(
            Regularizer::ALL
                .into_iter()
                .filter(|r| *r != Regularizer::None)
                .map(|r| Cell::new(LossSpec::parallel(r, r.default_lambda()))),
        );
        Self { cells }
    }
}

impl ExperimentMatrix {
    pub fn from_specs(specs: impl IntoIterator<Item = LossSpec>) -> Result<Self> {
        let cells: Vec<Cell> = specs.into_iter().map(Cell::new).collect();
        for c in &cells {
            c.spec.validate()?;
        }
        Ok(Self { cells })
    }
}

/// Dispatches to the trainer matching `config.loss_spec.scenario`.
pub fn train_on_corpus(config: &TrainConfig, corpus: &Corpus) -> Result<(ModelParams, TrainReport)> {
    let vocab = corpus.vocabulary();
    let src = corpus.source();
    match config.loss_spec.scenario {
        Scenario::ZeroShot => train_zero_shot(
            config,
            &vocab,
            corpus.get(Split::Train, src),
            corpus.get(Split::Dev, src),
        ),
        Scenario::NonParallel => train_non_parallel(
            config,
            &vocab,
            &corpus.all_languages(Split::Train),
            &corpus.all_languages(Split::Dev),
        ),
        Scenario::Parallel => train_parallel(
            config,
            &vocab,
            &corpus.parallel_groups(Split::Train)?,
            &corpus.all_languages(Split::Dev),
        ),
    }
}

/// Per-language ECE, their macro average, and the pooled report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EceTable {
    pub rows: Vec<(String, CalibrationReport)>,
    pub macro_average: f64,
    pub pooled: CalibrationReport,
}

impl EceTable {
    pub fn get(&self, lang: &str) -> Option<f64> {
        self.rows.iter().find(|(l, _)| l == lang).map(|(_, r)| r.ece)
    }
}

pub fn records(predictions: &[Prediction]) -> Vec<PredictionRecord> {
    predictions
        .iter()
        .map(|p| PredictionRecord::from_distribution(&p.distribution, p.label.index()))
        .collect()
}

pub fn ece_table(predictions: &[Prediction], languages: &[String], bins: usize) -> Result<EceTable> {
    let mut rows = Vec::new();
    for lang in languages {
        let subset: Vec<Prediction> = predictions.iter().filter(|p| &p.lang == lang).cloned().collect();
        if subset.is_empty() {
            warn!("language `{lang}` has no predictions; omitted from ECE table");
            continue;
        }
        rows.push((lang.clone(), compute_ece(&records(&subset), bins)?));
    }
    let macro_average = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|(_, r)| r.ece).sum::<f64>() / rows.len() as f64
    };
    Ok(EceTable {
        rows,
        macro_average,
        pooled: compute_ece(&records(predictions), bins)?,
    })
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub params: ModelParams,
    pub report: TrainReport,
    pub accuracy: AccuracyTable,
    pub ece: EceTable,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub name: String,
    pub outcome: std::result::Result<CellOutcome, String>,
}

#[derive(Debug, Clone)]
pub struct MatrixReport {
    pub languages: Vec<String>,
    pub cells: Vec<CellResult>,
}

impl MatrixReport {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.outcome.is_err()).count()
    }

    pub fn cell(&self, name: &str) -> Option<&CellOutcome> {
        self.cells
            .iter()
            .find(|c| c.name == name)
            .and_then(|c| c.outcome.as_ref().ok())
    }
}

/// Trains one configuration and scores it on the test split.
pub fn run_cell(config: &TrainConfig, corpus: &Corpus, bins: usize) -> Result<CellOutcome> {
    let (params, report) = train_on_corpus(config, corpus)?;
    let test = corpus.all_languages(Split::Test);
    let predictions = predict(&params, &test)?;
    let accuracy = accuracy_table(&predictions, Some(&corpus.languages));
    let ece = ece_table(&predictions, &corpus.languages, bins)?;
    Ok(CellOutcome {
        params,
        report,
        accuracy,
        ece,
    })
}

#[cfg(feature = "parallel")]
fn map_cells<R: Send>(cells: &[Cell], f: impl Fn(&Cell) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    cells.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_cells<R>(cells: &[Cell], f: impl Fn(&Cell) -> R) -> Vec<R> {
    cells.iter().map(f).collect()
}

/// Trains every cell with `base`'s seed and hyperparameters. A failing cell
/// is recorded and the remaining cells still run.
pub fn run_matrix(corpus: &Corpus, matrix: &ExperimentMatrix, base: &TrainConfig, bins: usize) -> MatrixReport {
    let cells = map_cells(&matrix.cells, |cell| {
        let config = TrainConfig {
            loss_spec: cell.spec.clone(),
            ..base.clone()
        };
        info!("training cell {}", cell.name);
        let outcome = run_cell(&config, corpus, bins).map_err(|e| e.to_string());
        if let Err(e) = &outcome {
            warn!("cell {} failed: {e}", cell.name);
        }
        CellResult {
            name: cell.name.clone(),
            outcome,
        }
    });
    MatrixReport {
        languages: corpus.languages.clone(),
        cells,
    }
}

/// One table row: per-language values (fractions) and the average, or
/// `None` for a failed row.
pub type TableRow = (String, Option<(Vec<Option<f64>>, f64)>);

/// Tab-separated values in percentage points, full precision. Missing
/// values print as `NA`, failed rows as `FAILED` in every column.
pub fn format_tsv(languages: &[String], rows: &[TableRow]) -> String {
    let mut out = String::from("row");
    for l in languages {
        out.push('\t');
        out.push_str(l);
    }
    out.push_str("\tavg\n");
    for (name, values) in rows {
        out.push_str(name);
        match values {
            Some((vals, avg)) => {
                for v in vals {
                    match v {
                        Some(v) => {
                            let _ = write!(out, "\t{}", 100.0 * v);
                        }
                        None => out.push_str("\tNA"),
                    }
                }
                let _ = write!(out, "\t{}", 100.0 * avg);
            }
            None => {
                for _ in 0..=languages.len() {
                    out.push_str("\tFAILED");
                }
            }
        }
        out.push('\n');
    }
    out
}

fn tsv(report: &MatrixReport, value: impl Fn(&CellOutcome, &str) -> Option<f64>, avg: impl Fn(&CellOutcome) -> f64) -> String {
    let rows: Vec<TableRow> = report
        .cells
        .iter()
        .map(|cell| {
            let values = cell.outcome.as_ref().ok().map(|o| {
                let vals = report.languages.iter().map(|l| value(o, l)).collect();
                (vals, avg(o))
            });
            (cell.name.clone(), values)
        })
        .collect();
    format_tsv(&report.languages, &rows)
}

pub fn accuracy_tsv(report: &MatrixReport) -> String {
    tsv(report, |o, l| o.accuracy.get(l), |o| o.accuracy.macro_average)
}

pub fn ece_tsv(report: &MatrixReport) -> String {
    tsv(report, |o, l| o.ece.get(l), |o| o.ece.macro_average)
}

/// Re-renders a TSV table with aligned columns and one decimal place.
pub fn render_tsv(tsv: &str) -> String {
    let rows: Vec<Vec<String>> = tsv
        .lines()
        .enumerate()
        .map(|(i, line)| {
            line.split('\t')
                .enumerate()
                .map(|(j, cell)| {
                    if i == 0 || j == 0 {
                        cell.to_string()
                    } else {
                        cell.parse::<f64>().map(|v| format!("{v:.1}")).unwrap_or_else(|_| cell.to_string())
                    }
                })
                .collect()
        })
        .collect();
    let first_width = rows.iter().map(|r| r[0].len()).max().unwrap_or(0);
    let mut out = String::new();
    for r in &rows {
        let _ = write!(out, "{:<first_width$}", r[0]);
        for c in &r[1..] {
            let _ = write!(out, " {c:>7}");
        }
        out.push('\n');
    }
    out
}

fn markdown_table(tsv: &str) -> String {
    let mut out = String::new();
    for (i, line) in tsv.lines().enumerate() {
        let cells: Vec<String> = line
            .split('\t')
            .enumerate()
            .map(|(j, c)| {
                if i == 0 || j == 0 {
                    c.to_string()
                } else {
                    c.parse::<f64>().map(|v| format!("{v:.1}")).unwrap_or_else(|_| c.to_string())
                }
            })
            .collect();
        let _ = writeln!(out, "| {} |", cells.join(" | "));
        if i == 0 {
            let _ = writeln!(out, "|{}", "---|".repeat(cells.len()));
        }
    }
    out
}

pub fn report_markdown(report: &MatrixReport) -> String {
    let mut out = String::from("# Experiment matrix\n\n## Test accuracy (%)\n\n");
    out.push_str(&markdown_table(&accuracy_tsv(report)));
    out.push_str("\n## Test ECE (%, lower is better)\n\n");
    out.push_str(&markdown_table(&ece_tsv(report)));
    let failed: Vec<&CellResult> = report.cells.iter().filter(|c| c.outcome.is_err()).collect();
    if !failed.is_empty() {
        out.push_str("\n## Failed cells\n\n");
        for c in failed {
            if let Err(e) = &c.outcome {
                let _ = writeln!(out, "- `{}`: {e}", c.name);
            }
        }
    }
    out
}

fn cell_dir_name(index: usize, name: &str) -> String {
    let slug: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '-' })
        .collect();
    format!("{index:02}-{}", slug.trim_matches('-'))
}

/// Writes `accuracy.tsv`, `ece.tsv`, `report.md`, and per-cell
/// `checkpoint.json`, `train_report.json` and `reliability.csv`.
pub fn write_matrix_outputs(report: &MatrixReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("accuracy.tsv"), accuracy_tsv(report))?;
    fs::write(out_dir.join("ece.tsv"), ece_tsv(report))?;
    fs::write(out_dir.join("report.md"), report_markdown(report))?;
    for (i, cell) in report.cells.iter().enumerate() {
        let dir = out_dir.join(cell_dir_name(i, &cell.name));
        fs::create_dir_all(&dir)?;
        match &cell.outcome {
            Ok(o) => {
                let ckpt = dir.join("checkpoint.json");
                model::save(&o.params, &ckpt)?;
                let mut tr = o.report.clone();
                tr.checkpoint = Some(ckpt.to_string_lossy().into_owned());
                fs::write(dir.join("train_report.json"), serde_json::to_string_pretty(&tr)?)?;
                fs::write(dir.join("reliability.csv"), reliability_csv(&o.ece.pooled))?;
            }
            Err(e) => fs::write(dir.join("FAILED"), format!("{e}\n"))?,
        }
    }
    Ok(())
}

/// Parses a TSV produced by [`accuracy_tsv`] or [`ece_tsv`] back into rows.
pub fn parse_tsv(text: &str) -> Result<(Vec<String>, Vec<(String, Vec<Option<f64>>)>)> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or(Error::Empty("table"))?
        .split('\t')
        .skip(1)
        .map(str::to_string)
        .collect();
    let rows = lines
        .enumerate()
        .map(|(i, line)| {
            let mut cells = line.split('\t');
            let name = cells.next().unwrap_or_default().to_string();
            let values: Vec<Option<f64>> = cells.map(|c| c.parse::<f64>().ok()).collect();
            if values.len() != header.len() {
                return Err(Error::Record {
                    line: i + 2,
                    reason: format!("expected {} columns, found {}", header.len(), values.len()),
                });
            }
            Ok((name, values))
        })
        .collect::<Result<_>>()?;
    Ok((header, rows))
}
