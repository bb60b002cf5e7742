//! Report files: `results.csv` (one row per estimator and replication),
//! `summary.json` (config echo plus aggregates) and `config.json` (the
//! resolved config, read back by `bench report`).
//!
//! Floats are written as `{:.16e}`, which is 17 significant digits and
//! parses back to the same double.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::value::RawValue;

use crate::config::ExperimentConfig;
use crate::experiment::{Estimator, ExperimentReport, Row};
use crate::BenchError;

pub const CSV_HEADER: [&str; 8] = ["estimator", "rep", "seed", "mse", "bias", "m_star", "wall_ms", "status"];
pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Per-estimator statistics over successful replications.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub estimator: Estimator,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean_mse: Option<f64>,
    pub median_mse: Option<f64>,
    /// Sample standard deviation (denominator `n − 1`).
    pub std_mse: Option<f64>,
    pub mean_bias: Option<f64>,
    pub mean_m_star: Option<f64>,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[h] } else { 0.5 * (v[h - 1] + v[h]) })
}

fn sample_std(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values)?;
    let ss: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
    Some((ss / (values.len() - 1) as f64).sqrt())
}

/// Aggregates rows per estimator, in estimator order. Rows are taken in the
/// order given, so the result is a pure function of the row list.
pub fn aggregate(rows: &[Row]) -> Vec<Aggregate> {
    Estimator::ALL
        .into_iter()
        .filter(|e| rows.iter().any(|r| r.estimator == *e))
        .map(|estimator| {
            let mine: Vec<&Row> = rows.iter().filter(|r| r.estimator == estimator).collect();
            let ok: Vec<&Row> = mine.iter().copied().filter(|r| r.is_ok()).collect();
            let mses: Vec<f64> = ok.iter().filter_map(|r| r.mse).collect();
            let biases: Vec<f64> = ok.iter().filter_map(|r| r.bias).collect();
            let ms: Vec<f64> = ok.iter().filter_map(|r| r.m_star.map(|m| m as f64)).collect();
            Aggregate {
                estimator,
                n_ok: ok.len(),
                n_failed: mine.len() - ok.len(),
                mean_mse: mean(&mses),
                median_mse: median(&mses),
                std_mse: sample_std(&mses),
                mean_bias: mean(&biases),
                mean_m_star: mean(&ms),
            }
        })
        .collect()
}

fn io_error(path: &Path, source: std::io::Error) -> BenchError {
    BenchError::Io { path: path.to_path_buf(), source }
}

fn csv_error(path: &Path, e: csv::Error) -> BenchError {
    BenchError::Report(format!("{}: {e}", path.display()))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_csv(rows: &[Row], path: &Path) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(CSV_HEADER).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record([
            r.estimator.name().to_string(),
            r.rep.to_string(),
            r.seed.to_string(),
            opt(r.mse.map(float)),
            opt(r.bias.map(float)),
            opt(r.m_star),
            opt(r.wall_ms),
            r.status.clone(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<Row>, BenchError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(BenchError::Report(format!("{}: unexpected header {:?}", path.display(), header)));
    }
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let bad = |field: &str| BenchError::Report(format!("{} row {}: bad {field}", path.display(), line + 1));
        fn parse_opt<T: std::str::FromStr>(s: &str) -> Result<Option<T>, ()> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| ())
            }
        }
        rows.push(Row {
            estimator: Estimator::from_name(&record[0]).ok_or_else(|| bad("estimator"))?,
            rep: record[1].parse().map_err(|_| bad("rep"))?,
            seed: record[2].parse().map_err(|_| bad("seed"))?,
            mse: parse_opt(&record[3]).map_err(|_| bad("mse"))?,
            bias: parse_opt(&record[4]).map_err(|_| bad("bias"))?,
            m_star: parse_opt(&record[5]).map_err(|_| bad("m_star"))?,
            wall_ms: parse_opt(&record[6]).map_err(|_| bad("wall_ms"))?,
            status: record[7].to_string(),
        });
    }
    Ok(rows)
}

fn raw(v: Option<f64>) -> Option<Box<RawValue>> {
    v.filter(|x| x.is_finite())
        .map(|x| RawValue::from_string(float(x)).expect("formatted float is a JSON number"))
}

#[derive(Serialize)]
struct AggregateJson {
    estimator: &'static str,
    n_ok: usize,
    n_failed: usize,
    mean_mse: Option<Box<RawValue>>,
    median_mse: Option<Box<RawValue>>,
    std_mse: Option<Box<RawValue>>,
    mean_bias: Option<Box<RawValue>>,
    mean_m_star: Option<Box<RawValue>>,
}

#[derive(Serialize)]
struct Summary<'a> {
    version: &'static str,
    config: &'a ExperimentConfig,
    rows: usize,
    aggregates: Vec<AggregateJson>,
}

/// The JSON summary for `rows` under `config`.
pub fn summary_json(config: &ExperimentConfig, rows: &[Row]) -> String {
    let aggregates = aggregate(rows)
        .into_iter()
        .map(|a| AggregateJson {
            estimator: a.estimator.name(),
            n_ok: a.n_ok,
            n_failed: a.n_failed,
            mean_mse: raw(a.mean_mse),
            median_mse: raw(a.median_mse),
            std_mse: raw(a.std_mse),
            mean_bias: raw(a.mean_bias),
            mean_m_star: raw(a.mean_m_star),
        })
        .collect();
    let summary = Summary {
        version: env!("CARGO_PKG_VERSION"),
        config: &config.echo(),
        rows: rows.len(),
        aggregates,
    };
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    text
}

fn write_text(path: &Path, text: &str) -> Result<(), BenchError> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

/// Writes `results.csv`, `summary.json` and `config.json` into `dir`,
/// creating it if needed.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let results = dir.join(RESULTS_FILE);
    let summary = dir.join(SUMMARY_FILE);
    let config = dir.join(CONFIG_FILE);
    write_csv(&report.rows, &results)?;
    write_text(&summary, &summary_json(&report.config, &report.rows))?;
    let mut echo = serde_json::to_string_pretty(&report.config.echo()).expect("config serializes");
    echo.push('\n');
    write_text(&config, &echo)?;
    Ok(vec![results, summary, config])
}

/// Re-aggregates a report directory from its CSV, rewriting `summary.json`.
pub fn reaggregate(dir: &Path) -> Result<ExperimentReport, BenchError> {
    let config_path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&config_path).map_err(|e| io_error(&config_path, e))?;
    let config = crate::config::parse_config(&text)?;
    let rows = read_csv(&dir.join(RESULTS_FILE))?;
    write_text(&dir.join(SUMMARY_FILE), &summary_json(&config, &rows))?;
    Ok(ExperimentReport { config, rows })
}

/// Plain-text table of the aggregates.
pub fn format_table(rows: &[Row]) -> String {
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    let mut out = format!(
        "{:<14} {:>4} {:>6} {:>10} {:>10} {:>10} {:>10} {:>8}\n",
        "estimator", "ok", "failed", "mean_mse", "median", "std", "bias", "m_star"
    );
    for a in aggregate(rows) {
        out.push_str(&format!(
            "{:<14} {:>4} {:>6} {:>10} {:>10} {:>10} {:>10} {:>8}\n",
            a.estimator.name(),
            a.n_ok,
            a.n_failed,
            cell(a.mean_mse),
            cell(a.median_mse),
            cell(a.std_mse),
            cell(a.mean_bias),
            a.mean_m_star.map_or_else(|| "-".to_string(), |m| format!("{m:.0}")),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(estimator: Estimator, rep: usize, mse: Option<f64>) -> Row {
        Row {
            estimator,
            rep,
            seed: 7,
            mse,
            bias: mse.map(|m| -m),
            m_star: None,
            wall_ms: None,
            status: if mse.is_some() { "ok".into() } else { "failed: boom".into() },
        }
    }

    #[test]
    fn aggregates_skip_failures() {
        let rows = vec![
            row(Estimator::Npiv, 0, Some(1.0)),
            row(Estimator::Npiv, 1, Some(3.0)),
            row(Estimator::Npiv, 2, None),
            row(Estimator::Npiv, 3, Some(2.0)),
        ];
        let a = &aggregate(&rows)[0];
        assert_eq!((a.n_ok, a.n_failed), (3, 1));
        assert_eq!(a.mean_mse, Some(2.0));
        assert_eq!(a.median_mse, Some(2.0));
        assert_eq!(a.std_mse, Some(1.0));
        assert_eq!(a.mean_bias, Some(-2.0));
        assert_eq!(a.mean_m_star, None);
    }

    #[test]
    fn even_median_and_single_row() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(sample_std(&[1.0]), None);
        assert_eq!(mean(&[]), None);
    }

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 123_456.789, f64::MIN_POSITIVE] {
            assert_eq!(float(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(float(0.1), "1.0000000000000001e-1");
    }
}
