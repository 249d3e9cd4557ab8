//! CSV and JSON writers for per-trace scores, embeddings, histograms and
//! aggregation decisions.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use trajconf_core::aggregation::Decision;
use trajconf_core::metrics::ScoreDistribution;

use crate::error::{Error, Result};
use crate::scoring::ScoredTrace;

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Integrity(format!("{}: {other:?}", path.display())),
    }
}

fn write_rows(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn label(correct: bool) -> String {
    u8::from(correct).to_string()
}

/// `trace_id,question_id,label,length,score`
pub fn write_scores(path: &Path, scored: &[ScoredTrace]) -> Result<()> {
    let header = ["trace_id", "question_id", "label", "length", "score"].map(String::from);
    write_rows(
        path,
        &header,
        scored.iter().map(|s| {
            vec![
                s.trace_id.clone(),
                s.question_id.clone(),
                label(s.correct),
                s.length.to_string(),
                s.score.to_string(),
            ]
        }),
    )
}

/// `trace_id,label,h0,h1,...`; traces without an embedding are omitted.
pub fn write_embeddings(path: &Path, scored: &[ScoredTrace]) -> Result<()> {
    let width = scored.iter().find_map(|s| s.embedding.as_ref()).map_or(0, Vec::len);
    let mut header = vec!["trace_id".to_owned(), "label".to_owned()];
    header.extend((0..width).map(|i| format!("h{i}")));
    write_rows(
        path,
        &header,
        scored.iter().filter_map(|s| {
            let h = s.embedding.as_ref()?;
            let mut row = vec![s.trace_id.clone(), label(s.correct)];
            row.extend(h.iter().map(f64::to_string));
            Some(row)
        }),
    )
}

/// `bin,lower,upper,positive,negative`
pub fn write_histogram(path: &Path, dist: &ScoreDistribution) -> Result<()> {
    let header = ["bin", "lower", "upper", "positive", "negative"].map(String::from);
    write_rows(
        path,
        &header,
        (0..dist.positive_counts.len()).map(|i| {
            vec![
                i.to_string(),
                dist.edges[i].to_string(),
                dist.edges[i + 1].to_string(),
                dist.positive_counts[i].to_string(),
                dist.negative_counts[i].to_string(),
            ]
        }),
    )
}

/// `question_id,chosen,ground_truth,correct,retained,candidates`
pub fn write_decisions(path: &Path, decisions: &[Decision]) -> Result<()> {
    let header = ["question_id", "chosen", "ground_truth", "correct", "retained", "candidates"].map(String::from);
    write_rows(
        path,
        &header,
        decisions.iter().map(|d| {
            vec![
                d.question_id.clone(),
                d.chosen.clone(),
                d.ground_truth.clone(),
                label(d.correct),
                d.retained.to_string(),
                d.candidates.to_string(),
            ]
        }),
    )
}

/// Pretty JSON with a trailing newline.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}
