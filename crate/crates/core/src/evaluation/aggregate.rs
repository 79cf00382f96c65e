//! Mean and population spread across benchmarks, rendered in a two-block table.

use serde::{Deserialize, Serialize};

use super::report::MetricsReport;
use crate::error::{Error, Result};

/// The three numbers a benchmark contributes to the summary table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub benchmark_id: u32,
    pub ppv: f64,
    pub sensitivity: f64,
    pub map50: f64,
}

impl BenchmarkRow {
    pub fn from_report(benchmark_id: u32, r: &MetricsReport) -> Self {
        BenchmarkRow {
            benchmark_id,
            ppv: r.ppv,
            sensitivity: r.sensitivity,
            map50: r.map50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation (divisor n).
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        // offsets from the first value keep a constant list exactly constant
        let first = values.first().copied().unwrap_or(0.0);
        let mean = first + values.iter().map(|v| v - first).sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }

    /// `0.94 ± 0.02`, or three decimals for the spread when two would show zero.
    pub fn display(&self) -> String {
        if self.std > 0.0 && self.std < 0.005 {
            format!("{:.2} ± {:.3}", self.mean, self.std)
        } else {
            format!("{:.2} ± {:.2}", self.mean, self.std)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub ppv: MeanStd,
    pub sensitivity: MeanStd,
    pub map50: MeanStd,
}

pub fn aggregate_rows(rows: &[BenchmarkRow]) -> Result<Aggregate> {
    if rows.len() < 2 {
        return Err(Error::TooFewReports(rows.len()));
    }
    let col = |f: fn(&BenchmarkRow) -> f64| MeanStd::of(&rows.iter().map(f).collect::<Vec<_>>());
    Ok(Aggregate {
        n: rows.len(),
        ppv: col(|r| r.ppv),
        sensitivity: col(|r| r.sensitivity),
        map50: col(|r| r.map50),
    })
}

/// Aggregates reports numbered 1..=n in the order given.
pub fn aggregate_benchmarks(reports: &[MetricsReport]) -> Result<Aggregate> {
    let rows: Vec<BenchmarkRow> = reports
        .iter()
        .enumerate()
        .map(|(k, r)| BenchmarkRow::from_report(k as u32 + 1, r))
        .collect();
    aggregate_rows(&rows)
}

/// Side-by-side primary and final blocks with an average row. Rows pair up by benchmark id;
/// a benchmark missing from one block shows dashes there, as does an average over fewer than
/// two rows.
pub fn benchmark_table_markdown(primary: &[BenchmarkRow], final_: &[BenchmarkRow]) -> String {
    let mut ids: Vec<u32> = primary.iter().chain(final_).map(|r| r.benchmark_id).collect();
    ids.sort_unstable();
    ids.dedup();
    let cells = |rows: &[BenchmarkRow], id: u32| match rows.iter().find(|r| r.benchmark_id == id) {
        Some(r) => format!("{:.2} | {:.2} | {:.2}", r.ppv, r.sensitivity, r.map50),
        None => "- | - | -".to_string(),
    };
    let mut out = String::new();
    out.push_str("| Benchmark | Primary PPV | Primary sensitivity | Primary mAP@0.5 | Final PPV | Final sensitivity | Final mAP@0.5 |\n");
    out.push_str("|---|---|---|---|---|---|---|\n");
    for id in ids {
        out.push_str(&format!("| {id} | {} | {} |\n", cells(primary, id), cells(final_, id)));
    }
    let avg = |rows: &[BenchmarkRow]| match aggregate_rows(rows) {
        Ok(a) => format!("{} | {} | {}", a.ppv.display(), a.sensitivity.display(), a.map50.display()),
        Err(_) => "- | - | -".to_string(),
    };
    out.push_str(&format!("| Average performance | {} | {} |\n", avg(primary), avg(final_)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(values: &[f64]) -> Vec<BenchmarkRow> {
        values
            .iter()
            .enumerate()
            .map(|(k, &v)| BenchmarkRow {
                benchmark_id: k as u32 + 1,
                ppv: v,
                sensitivity: v,
                map50: v,
            })
            .collect()
    }

    #[test]
    fn constant_list() {
        let a = aggregate_rows(&rows(&[0.9; 10])).unwrap();
        assert_eq!(a.ppv.std, 0.0);
        assert_eq!(a.ppv.mean, 0.9);
    }

    #[test]
    fn population_divisor() {
        let m = MeanStd::of(&[1.0, 3.0]);
        assert_eq!((m.mean, m.std), (2.0, 1.0));
    }

    #[test]
    fn needs_two() {
        assert!(matches!(aggregate_rows(&rows(&[0.5])), Err(Error::TooFewReports(1))));
    }

    #[test]
    fn table_shape() {
        let t = benchmark_table_markdown(&rows(&[0.9, 0.8]), &rows(&[0.95, 0.85]));
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[2], "| 1 | 0.90 | 0.90 | 0.90 | 0.95 | 0.95 | 0.95 |");
        assert_eq!(lines[4], "| Average performance | 0.85 ± 0.05 | 0.85 ± 0.05 | 0.85 ± 0.05 | 0.90 ± 0.05 | 0.90 ± 0.05 | 0.90 ± 0.05 |");
        assert_eq!(MeanStd { mean: 0.98, std: 0.0045 }.display(), "0.98 ± 0.004");
        let partial = benchmark_table_markdown(&rows(&[0.9, 0.8]), &rows(&[0.95])[..]);
        assert!(partial.contains("| 2 | 0.80 | 0.80 | 0.80 | - | - | - |"));
        assert!(partial.ends_with("| - | - | - |\n"));
    }
}
