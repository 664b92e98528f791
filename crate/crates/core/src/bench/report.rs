//! CSV / JSON emission of evaluation and benchmark reports.
//!
//! Column orders:
//!
//! - `summary.csv`: frames, mpjpe_mm, n_mpjpe_mm, p_mpjpe_mm, pck_percent, auc_percent
//! - `per_frame.csv`: frame, mpjpe, n_mpjpe, p_mpjpe, velocity
//! - `velocity_histogram.csv`: bin_low, bin_high, mean_mpjpe, count, cdf
//!   (`mean_mpjpe` is empty for an empty bin)
//! - `bench.csv`: the fields of [`BenchReport`] in declaration order
//!
//! Evaluation reports write each file twice, prefixed `all_` and `key_`.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::throughput::BenchReport;
use crate::error::{Error, Result};
use crate::metrics::{FrameError, MetricsReport, VelocityBin};
use crate::training::EvalReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(Error::Config(format!("unknown report format {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Report<'a> {
    Metrics(&'a MetricsReport),
    Eval(&'a EvalReport),
    Bench(&'a BenchReport),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SummaryRow {
    frames: usize,
    mpjpe_mm: f64,
    n_mpjpe_mm: f64,
    p_mpjpe_mm: f64,
    pck_percent: f64,
    auc_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct HistogramRow {
    bin_low: f64,
    bin_high: f64,
    mean_mpjpe: Option<f64>,
    count: usize,
    cdf: f64,
}

const HISTOGRAM_HEADER: [&str; 5] = ["bin_low", "bin_high", "mean_mpjpe", "count", "cdf"];
const PER_FRAME_HEADER: [&str; 5] = ["frame", "mpjpe", "n_mpjpe", "p_mpjpe", "velocity"];

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

/// Header row is written even when there are no rows.
fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

pub fn write_histogram_csv(bins: &[VelocityBin], path: &Path) -> Result<()> {
    let rows: Vec<HistogramRow> = bins
        .iter()
        .map(|b| HistogramRow {
            bin_low: b.low,
            bin_high: b.high,
            mean_mpjpe: b.mean_mpjpe,
            count: b.count,
            cdf: b.cdf,
        })
        .collect();
    write_rows(path, &HISTOGRAM_HEADER, &rows)
}

pub fn read_histogram_csv(path: &Path) -> Result<Vec<VelocityBin>> {
    Ok(read_rows::<HistogramRow>(path)?
        .into_iter()
        .map(|r| VelocityBin {
            low: r.bin_low,
            high: r.bin_high,
            mean_mpjpe: r.mean_mpjpe,
            count: r.count,
            cdf: r.cdf,
        })
        .collect())
}

fn metrics_paths(dir: &Path, prefix: &str) -> [PathBuf; 3] {
    [
        dir.join(format!("{prefix}summary.csv")),
        dir.join(format!("{prefix}per_frame.csv")),
        dir.join(format!("{prefix}velocity_histogram.csv")),
    ]
}

pub fn write_metrics_csv(r: &MetricsReport, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let [summary, per_frame, hist] = metrics_paths(dir, prefix);
    let row = SummaryRow {
        frames: r.frames,
        mpjpe_mm: r.mpjpe_mm,
        n_mpjpe_mm: r.n_mpjpe_mm,
        p_mpjpe_mm: r.p_mpjpe_mm,
        pck_percent: r.pck_percent,
        auc_percent: r.auc_percent,
    };
    write_rows(
        &summary,
        &["frames", "mpjpe_mm", "n_mpjpe_mm", "p_mpjpe_mm", "pck_percent", "auc_percent"],
        &[row],
    )?;
    write_rows(&per_frame, &PER_FRAME_HEADER, &r.per_frame_errors)?;
    write_histogram_csv(&r.velocity_histogram, &hist)?;
    Ok(vec![summary, per_frame, hist])
}

/// Inverse of [`write_metrics_csv`].
pub fn read_metrics_csv(dir: &Path, prefix: &str) -> Result<MetricsReport> {
    let [summary, per_frame, hist] = metrics_paths(dir, prefix);
    let s: SummaryRow = read_rows(&summary)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Format(format!("{}: no summary row", summary.display())))?;
    let per_frame_errors: Vec<FrameError> = read_rows(&per_frame)?;
    Ok(MetricsReport {
        frames: s.frames,
        mpjpe_mm: s.mpjpe_mm,
        n_mpjpe_mm: s.n_mpjpe_mm,
        p_mpjpe_mm: s.p_mpjpe_mm,
        pck_percent: s.pck_percent,
        auc_percent: s.auc_percent,
        per_frame_errors,
        velocity_histogram: read_histogram_csv(&hist)?,
    })
}

pub fn write_bench_csv(r: &BenchReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.serialize(r).map_err(|e| csv_err(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_bench_csv(path: &Path) -> Result<BenchReport> {
    read_rows(path)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Format(format!("{}: no report row", path.display())))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<PathBuf> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

/// Write `report` into `dir` (created if missing); returns the files written.
pub fn emit_report(report: Report<'_>, dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    match (report, format) {
        (Report::Metrics(m), ReportFormat::Csv) => write_metrics_csv(m, dir, ""),
        (Report::Metrics(m), ReportFormat::Json) => Ok(vec![write_json(m, &dir.join("metrics.json"))?]),
        (Report::Eval(e), ReportFormat::Csv) => {
            let mut files = write_metrics_csv(&e.all_frames, dir, "all_")?;
            files.extend(write_metrics_csv(&e.key_frames, dir, "key_")?);
            Ok(files)
        }
        (Report::Eval(e), ReportFormat::Json) => Ok(vec![write_json(e, &dir.join("eval.json"))?]),
        (Report::Bench(b), ReportFormat::Csv) => {
            let p = dir.join("bench.csv");
            write_bench_csv(b, &p)?;
            Ok(vec![p])
        }
        (Report::Bench(b), ReportFormat::Json) => Ok(vec![write_json(b, &dir.join("bench.json"))?]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_histogram_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        write_histogram_csv(&[], &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "bin_low,bin_high,mean_mpjpe,count,cdf\n");
        assert!(read_histogram_csv(&p).unwrap().is_empty());
    }

    #[test]
    fn metrics_round_trip() {
        let r = MetricsReport {
            frames: 2,
            mpjpe_mm: 1.0 / 3.0,
            n_mpjpe_mm: 0.1,
            p_mpjpe_mm: 0.05,
            pck_percent: 100.0,
            auc_percent: 97.5,
            per_frame_errors: vec![
                FrameError { frame: 0, mpjpe: 0.2, n_mpjpe: 0.1, p_mpjpe: 0.05, velocity: 0.31 },
                FrameError { frame: 1, mpjpe: 0.4666666666666667, n_mpjpe: 0.1, p_mpjpe: 0.05, velocity: 0.31 },
            ],
            velocity_histogram: vec![
                VelocityBin { low: 0.0, high: 0.1, mean_mpjpe: None, count: 0, cdf: 0.0 },
                VelocityBin { low: 0.3, high: 0.4, mean_mpjpe: Some(1.0 / 3.0), count: 2, cdf: 1.0 },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(Report::Metrics(&r), dir.path(), ReportFormat::Csv).unwrap();
        assert_eq!(files.len(), 3);
        assert_eq!(read_metrics_csv(dir.path(), "").unwrap(), r);
        let text = fs::read_to_string(dir.path().join("velocity_histogram.csv")).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "0.0,0.1,,0,0.0");
    }
}
