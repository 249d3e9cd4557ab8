//! The JSONL trace format.
//!
//! One record per line:
//!
//! ```json
//! {"trace_id": "q1-t0", "question_id": "q1", "answer": "42",
//!  "ground_truth": "42", "label": 1, "confidence": [1.9, 2.3]}
//! ```
//!
//! `ground_truth` and `label` are optional, but at least one must be
//! present. Instead of `confidence` a record may carry `topk_logprobs` (one
//! list of top-k log-probabilities per token); confidences are then computed
//! on the fly. When ground truth is present the label is recomputed from it
//! and a stored label that disagrees only produces a warning.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use trajconf_core::dataset::{normalize_answer, Dataset, QuestionGroup, TraceRecord};
use trajconf_core::trajectory::{build_trajectory, ConfidenceTrajectory, TopKRecord};

use crate::error::{Error, IoContext, Result};

/// Stored confidences and recomputed ones may differ by this much before a
/// warning is raised.
const CONFIDENCE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceLine {
    pub trace_id: String,
    pub question_id: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topk_logprobs: Option<Vec<Vec<f64>>>,
    /// Number of alternatives per token actually returned by the endpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

impl TraceLine {
    pub fn from_record(record: &TraceRecord, ground_truth: Option<&str>) -> Self {
        Self {
            trace_id: record.trace_id.clone(),
            question_id: record.question_id.clone(),
            answer: record.answer.clone(),
            ground_truth: ground_truth.map(str::to_owned),
            label: Some(record.correct as u8),
            confidence: Some(record.trajectory.values().to_vec()),
            topk_logprobs: None,
            k: None,
        }
    }
}

/// A parsed trace file plus the non-fatal issues found in it.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

fn strip_position(msg: String) -> String {
    // serde_json appends "at line 1 column N", which is meaningless for a
    // single JSONL record
    match msg.rsplit_once(" at line ") {
        Some((head, _)) => head.to_owned(),
        None => msg,
    }
}

fn trajectory_of(line: &TraceLine) -> std::result::Result<(ConfidenceTrajectory, Option<String>), String> {
    match (&line.confidence, &line.topk_logprobs) {
        (None, None) => Err("record needs `confidence` or `topk_logprobs`".into()),
        (Some(c), None) => ConfidenceTrajectory::new(c.clone()).map(|t| (t, None)).map_err(|e| e.to_string()),
        (stored, Some(lp)) => {
            let records = lp
                .iter()
                .enumerate()
                .map(|(i, l)| TopKRecord::from_logprobs(l).map_err(|e| format!("token {i}: {e}")))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let traj = build_trajectory(&records).map_err(|e| e.to_string())?;
            let mut warning = None;
            if let Some(c) = stored {
                let agrees = c.len() == traj.len()
                    && c.iter().zip(traj.values()).all(|(a, b)| (a - b).abs() <= CONFIDENCE_TOLERANCE);
                if !agrees {
                    warning = Some(format!(
                        "trace `{}`: stored confidence disagrees with top-k log-probabilities; using the recomputed values",
                        line.trace_id
                    ));
                }
            }
            Ok((traj, warning))
        }
    }
}

/// Parses trace records from `reader`; `path` only labels error messages.
pub fn parse_traces(reader: impl BufRead, path: &Path) -> Result<Ingested> {
    let mut groups: Vec<QuestionGroup> = Vec::new();
    let mut group_index: HashMap<String, usize> = HashMap::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut warnings = Vec::new();

    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    for (i, raw) in reader.lines().enumerate() {
        let line_no = i + 1;
        let raw = raw.at(path)?;
        let text = if line_no == 1 {
            raw.strip_prefix('\u{feff}').unwrap_or(&raw)
        } else {
            &raw
        };
        if text.trim().is_empty() {
            continue;
        }
        let line: TraceLine = serde_json::from_str(text)
            .map_err(|e| parse_err(line_no, strip_position(e.to_string())))?;
        if let Some(first) = seen.insert(line.trace_id.clone(), line_no) {
            return Err(Error::Integrity(format!(
                "{}:{line_no}: duplicate trace_id `{}` (first seen on line {first})",
                path.display(),
                line.trace_id
            )));
        }
        let (trajectory, warning) = trajectory_of(&line).map_err(|m| parse_err(line_no, m))?;
        warnings.extend(warning);

        let correct = match (&line.ground_truth, line.label) {
            (_, Some(l)) if l > 1 => {
                return Err(parse_err(line_no, format!("`label` must be 0 or 1, got {l}")));
            }
            (Some(gt), stored) => {
                let label = normalize_answer(&line.answer) == normalize_answer(gt);
                if let Some(s) = stored {
                    if (s == 1) != label {
                        warnings.push(format!(
                            "trace `{}`: stored label {s} disagrees with ground truth; using {}",
                            line.trace_id, label as u8
                        ));
                    }
                }
                label
            }
            (None, Some(l)) => l == 1,
            (None, None) => {
                return Err(parse_err(line_no, "record needs `label` or `ground_truth`".into()));
            }
        };

        let idx = *group_index.entry(line.question_id.clone()).or_insert_with(|| {
            groups.push(QuestionGroup {
                question_id: line.question_id.clone(),
                ground_truth: None,
                traces: Vec::new(),
            });
            groups.len() - 1
        });
        let group = &mut groups[idx];
        if let Some(gt) = &line.ground_truth {
            match &group.ground_truth {
                None => group.ground_truth = Some(gt.clone()),
                Some(prev) if normalize_answer(prev) != normalize_answer(gt) => {
                    return Err(Error::Integrity(format!(
                        "{}:{line_no}: question `{}` has conflicting ground truths `{prev}` and `{gt}`",
                        path.display(),
                        line.question_id
                    )));
                }
                Some(_) => {}
            }
        }
        group.traces.push(TraceRecord {
            trace_id: line.trace_id,
            question_id: line.question_id,
            answer: line.answer,
            correct,
            trajectory,
        });
    }

    // a ground truth seen on a later line also relabels earlier records
    for g in &mut groups {
        for id in g.relabel() {
            warnings.push(format!("trace `{id}`: label recomputed from ground truth"));
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Ingested {
        dataset: Dataset::new(groups)?,
        warnings,
    })
}

pub fn read_traces(path: impl AsRef<Path>) -> Result<Ingested> {
    let path = path.as_ref();
    let file = File::open(path).at(path)?;
    parse_traces(BufReader::new(file), path)
}

/// Writes `lines` as JSONL, one record per line.
pub fn write_lines<'a>(path: impl AsRef<Path>, lines: impl IntoIterator<Item = &'a TraceLine>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).at(path)?);
    for line in lines {
        let text = serde_json::to_string(line).expect("trace lines serialize");
        writeln!(w, "{text}").at(path)?;
    }
    w.flush().at(path)
}

/// Writes a dataset with confidences, labels and ground truths.
pub fn write_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let lines: Vec<TraceLine> = dataset
        .groups
        .iter()
        .flat_map(|g| {
            g.traces
                .iter()
                .map(|t| TraceLine::from_record(t, g.ground_truth.as_deref()))
        })
        .collect();
    write_lines(path, &lines)
}
