//! Report bundle: CSV tables, a JSON summary and SVG plots per sweep.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::plot::{line_plot, Series};
use super::{Stat, SummaryRow, SweepResult};
use crate::error::{Error, Result};

/// Paths written by [`emit_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub records_csv: PathBuf,
    pub summary_csv: PathBuf,
    pub summary_json: PathBuf,
    pub auc_svg: PathBuf,
    pub dbi_svg: PathBuf,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_string(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// One row per raw record (per grid point, method and seed).
pub fn records_csv(result: &SweepResult) -> String {
    let rows = result
        .records
        .iter()
        .map(|r| {
            vec![
                r.grid_value.to_string(),
                r.method.clone(),
                r.seed.map(|s| s.to_string()).unwrap_or_default(),
                opt(r.auc),
                opt(r.dbi),
                opt(r.threshold_accuracy),
                r.n_test.to_string(),
                r.n_positive.to_string(),
                r.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
                opt(r.val_auc),
            ]
        })
        .collect();
    csv_string(
        &[
            "grid_value",
            "method",
            "seed",
            "auc",
            "dbi",
            "threshold_accuracy",
            "n_test",
            "n_positive",
            "best_epoch",
            "val_auc",
        ],
        rows,
    )
}

/// One row per (grid point, method): mean, sample s.d. and count per metric.
pub fn summary_csv(result: &SweepResult) -> String {
    let stat = |s: Option<Stat>| -> [String; 3] {
        match s {
            Some(s) => [s.mean.to_string(), s.sd.to_string(), s.n.to_string()],
            None => [String::new(), String::new(), "0".into()],
        }
    };
    let rows = result
        .summary
        .iter()
        .map(|r: &SummaryRow| {
            let mut row = vec![r.grid_value.to_string(), r.method.clone(), r.records.to_string()];
            for s in [r.auc, r.dbi, r.threshold_accuracy] {
                row.extend(stat(s));
            }
            row
        })
        .collect();
    csv_string(
        &[
            "grid_value",
            "method",
            "records",
            "auc_mean",
            "auc_sd",
            "auc_n",
            "dbi_mean",
            "dbi_sd",
            "dbi_n",
            "accuracy_mean",
            "accuracy_sd",
            "accuracy_n",
        ],
        rows,
    )
}

fn series(result: &SweepResult, metric: fn(&SummaryRow) -> Option<Stat>) -> Vec<Series> {
    result
        .methods()
        .into_iter()
        .map(|m| Series {
            label: m.to_owned(),
            points: result
                .summary
                .iter()
                .filter(|r| r.method == m)
                .filter_map(|r| metric(r).map(|s| (r.grid_value as f64, s.mean, s.sd)))
                .collect(),
        })
        .filter(|s| !s.points.is_empty())
        .collect()
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `<kind>_records.csv`, `<kind>_summary.csv`, `<kind>_summary.json`,
/// `<kind>_auc.svg` and `<kind>_dbi.svg` into `dir` (created if missing).
pub fn emit_report(result: &SweepResult, dir: &Path) -> Result<ReportFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let kind = result.spec.kind;
    let name = |suffix: &str| dir.join(format!("{}_{suffix}", kind.as_str()));
    let files = ReportFiles {
        records_csv: name("records.csv"),
        summary_csv: name("summary.csv"),
        summary_json: name("summary.json"),
        auc_svg: name("auc.svg"),
        dbi_svg: name("dbi.svg"),
    };
    write(&files.records_csv, &records_csv(result))?;
    write(&files.summary_csv, &summary_csv(result))?;

    let summary = json!({
        "kind": kind,
        "grid_label": kind.grid_label(),
        "seeds": result.spec.seeds,
        "test_traces": result.test_traces,
        "summary": result.summary,
        "flags": result.flags,
        "skipped": result.skipped,
        "populations": result.populations,
    });
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    write(&files.summary_json, &text)?;

    let title = |m: &str| format!("{} sweep: {m} (mean ± s.d.)", kind.as_str());
    write(
        &files.auc_svg,
        &line_plot(&title("test AUC"), kind.grid_label(), "AUC", &series(result, |r| r.auc)),
    )?;
    write(
        &files.dbi_svg,
        &line_plot(&title("DBI"), kind.grid_label(), "DBI", &series(result, |r| r.dbi)),
    )?;
    Ok(files)
}
