//! Expected calibration error over equal-width confidence bins.
//!
//! Bin `i` (1-based) of `M` covers `((i-1)/M, i/M]`, so a confidence equal
//! to a boundary belongs to the lower bin and 1.0 lands in bin `M`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probcore::Distribution;

pub const DEFAULT_BINS: usize = 20;

pub const CSV_HEADER: &str = "bin_low,bin_high,count,mean_confidence,accuracy,gap";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub confidence: f64,
    pub predicted: usize,
    pub actual: usize,
}

impl PredictionRecord {
    /// Confidence is the largest predicted probability; its argmax (lowest
    /// index on ties) is the predicted class.
    pub fn from_distribution(p: &Distribution, actual: usize) -> Self {
        Self {
            confidence: p.max(),
            predicted: p.argmax(),
            actual,
        }
    }

    pub fn correct(&self) -> bool {
        self.predicted == self.actual
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
    /// Zero for empty bins.
    pub mean_confidence: f64,
    /// Zero for empty bins.
    pub accuracy: f64,
}

impl Bin {
    pub fn gap(&self) -> f64 {
        (self.accuracy - self.mean_confidence).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub bins: Vec<Bin>,
    pub ece: f64,
    pub num_records: usize,
}

/// Lower edge of bin `i` (0-based), as `i / M`.
fn edge(i: usize, m: usize) -> f64 {
    i as f64 / m as f64
}

/// 0-based bin index for a confidence in `(0, 1]`.
pub fn bin_index(confidence: f64, m: usize) -> usize {
    // Start from the arithmetic guess, then settle against the exact f64
    // edges so boundary values land in the lower bin.
    let mut k = ((confidence * m as f64).ceil() as usize).clamp(1, m);
    while k > 1 && confidence <= edge(k - 1, m) {
        k -= 1;
    }
    while k < m && confidence > edge(k, m) {
        k += 1;
    }
    k - 1
}

/// `ECE = Σ_i (|B_i| / n) · |acc(B_i) − conf(B_i)|`.
pub fn compute_ece(records: &[PredictionRecord], m: usize) -> Result<CalibrationReport> {
    if m == 0 {
        return Err(Error::InvalidArgument("number of bins must be at least 1".into()));
    }
    let mut counts = vec![0usize; m];
    let mut conf_sum = vec![0.0; m];
    let mut correct = vec![0usize; m];
    for (index, r) in records.iter().enumerate() {
        if !(r.confidence > 0.0 && r.confidence <= 1.0) {
            return Err(Error::Confidence {
                index,
                value: r.confidence,
            });
        }
        let b = bin_index(r.confidence, m);
        counts[b] += 1;
        conf_sum[b] += r.confidence;
        correct[b] += usize::from(r.correct());
    }

    let n = records.len();
    if n == 0 {
        warn!("no prediction records; ECE defined as 0");
    }
    let mut ece = 0.0;
    let bins = (0..m)
        .map(|i| {
            let count = counts[i];
            let (mean_confidence, accuracy) = if count == 0 {
                (0.0, 0.0)
            } else {
                (conf_sum[i] / count as f64, correct[i] as f64 / count as f64)
            };
            let bin = Bin {
                low: edge(i, m),
                high: edge(i + 1, m),
                count,
                mean_confidence,
                accuracy,
            };
            if count > 0 {
                ece += count as f64 / n as f64 * bin.gap();
            }
            bin
        })
        .collect();
    Ok(CalibrationReport {
        bins,
        ece,
        num_records: n,
    })
}

/// Reliability table as CSV. An empty report yields only the header.
pub fn reliability_csv(report: &CalibrationReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    if report.num_records == 0 {
        return out;
    }
    for b in &report.bins {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            b.low,
            b.high,
            b.count,
            b.mean_confidence,
            b.accuracy,
            b.gap()
        );
    }
    out
}

pub fn reliability_dump(report: &CalibrationReport, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, reliability_csv(report))?;
    Ok(())
}

/// Parses the CSV written by [`reliability_csv`].
pub fn parse_reliability_csv(text: &str) -> Result<Vec<Bin>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        _ => {
            return Err(Error::Record {
                line: 1,
                reason: "missing reliability header".into(),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = |reason: String| Error::Record { line: i + 1, reason };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(bad(format!("expected 6 fields, found {}", fields.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
            Ok(Bin {
                low: num(fields[0])?,
                high: num(fields[1])?,
                count: fields[2].parse().map_err(|e| bad(format!("count: {e}")))?,
                mean_confidence: num(fields[3])?,
                accuracy: num(fields[4])?,
            })
        })
        .collect()
}

/// ECE in percentage points, one decimal, as printed in result tables.
pub fn format_percent(value: f64) -> String {
    format!("{:.1}", 100.0 * value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(confidence: f64, correct: bool) -> PredictionRecord {
        PredictionRecord {
            confidence,
            predicted: 0,
            actual: if correct { 0 } else { 1 },
        }
    }

    #[test]
    fn perfect_calibration() {
        let records = vec![rec(1.0, true); 7];
        let r = compute_ece(&records, DEFAULT_BINS).unwrap();
        assert_eq!(r.ece, 0.0);
        assert_eq!(r.bins[19].count, 7);
    }

    #[test]
    fn worked_four_record_example() {
        let records = [rec(0.9, true), rec(0.9, false), rec(0.6, true), rec(0.6, true)];
        let r = compute_ece(&records, 20).unwrap();
        assert!((r.ece - 0.4).abs() < 1e-12, "{}", r.ece);
        // 0.9 is the upper edge of (0.85, 0.9]; 0.6 of (0.55, 0.6].
        assert_eq!(r.bins[17].count, 2);
        assert_eq!(r.bins[11].count, 2);
    }

    #[test]
    fn single_bin_is_global_gap() {
        let records = [rec(0.5, true), rec(0.8, false), rec(0.95, true)];
        let r = compute_ece(&records, 1).unwrap();
        let acc: f64 = 2.0 / 3.0;
        let conf = (0.5 + 0.8 + 0.95) / 3.0;
        assert!((r.ece - (acc - conf).abs()).abs() < 1e-15);
    }

    #[test]
    fn boundaries_belong_to_lower_bin() {
        for m in [1, 3, 7, 10, 20, 33] {
            for i in 1..=m {
                let c = i as f64 / m as f64;
                assert_eq!(bin_index(c, m), i - 1, "m={m} i={i}");
            }
            assert_eq!(bin_index(1e-9, m), 0);
        }
        assert_eq!(bin_index(0.6000000000000001, 20), 12);
    }

    #[test]
    fn invalid_confidence_names_record() {
        let records = [rec(0.5, true), rec(0.0, true)];
        assert!(matches!(
            compute_ece(&records, 20),
            Err(Error::Confidence { index: 1, .. })
        ));
        assert!(compute_ece(&[rec(1.0000001, true)], 20).is_err());
        assert!(compute_ece(&[rec(f64::NAN, true)], 20).is_err());
        assert!(compute_ece(&[], 0).is_err());
    }

    #[test]
    fn empty_records() {
        let r = compute_ece(&[], 20).unwrap();
        assert_eq!(r.ece, 0.0);
        assert_eq!(reliability_csv(&r), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn csv_round_trip_and_edges() {
        let records = [rec(0.9, true), rec(0.42, false), rec(0.7, true)];
        let r = compute_ece(&records, 20).unwrap();
        let text = reliability_csv(&r);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 21);
        assert!(lines[1].starts_with("0,0.05,"));
        assert!(lines[20].starts_with("0.95,1,"));
        assert_eq!(parse_reliability_csv(&text).unwrap(), r.bins);
    }

    #[test]
    fn from_distribution_uses_max_and_argmax() {
        let p = Distribution::new(vec![0.2, 0.5, 0.3]).unwrap();
        let r = PredictionRecord::from_distribution(&p, 1);
        assert_eq!((r.confidence, r.predicted, r.correct()), (0.5, 1, true));
    }

    #[test]
    fn percent_formatting() {
        assert_eq!(format_percent(0.0912), "9.1");
        assert_eq!(format_percent(0.0), "0.0");
    }
}
