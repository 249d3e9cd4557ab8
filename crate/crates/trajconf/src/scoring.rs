//! Trace scorers behind one interface: the learned readout, the two
//! hand-crafted baselines, and a constant scorer for plain majority voting.

use trajconf_core::baselines::{bottom_group_conf, tail_conf};
use trajconf_core::dataset::{QuestionGroup, TraceRecord};
use trajconf_core::estimator::{EstimatorCheckpoint, Workspace};
use trajconf_core::trajectory::{head_align, tail_align, Alignment};
use trajconf_core::ScoreTable;

use crate::error::Result;
use crate::jobs::parallel_map;

#[derive(Debug, Clone)]
pub enum Scorer {
    Neural {
        checkpoint: EstimatorCheckpoint,
        alignment: Alignment,
    },
    Tail {
        tail: usize,
    },
    BottomGroup {
        group: usize,
        fraction: f64,
        stride: usize,
    },
    Uniform,
}

impl Scorer {
    pub fn name(&self) -> &'static str {
        match self {
            Scorer::Neural { .. } => "neuralconf",
            Scorer::Tail { .. } => "tail",
            Scorer::BottomGroup { .. } => "bottom-group",
            Scorer::Uniform => "uniform",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrace {
    pub trace_id: String,
    pub question_id: String,
    pub correct: bool,
    pub length: usize,
    pub score: f64,
    /// Only the learned readout produces embeddings.
    pub embedding: Option<Vec<f64>>,
}

fn score_one(scorer: &Scorer, t: &TraceRecord, ws: &mut Workspace) -> Result<(f64, Option<Vec<f64>>)> {
    Ok(match scorer {
        Scorer::Neural {
            checkpoint,
            alignment,
        } => {
            let l = checkpoint.config().l_max;
            let aligned = match alignment {
                Alignment::Head => head_align(&t.trajectory, l)?,
                _ => tail_align(&t.trajectory, l)?,
            };
            let out = checkpoint.forward_with(&checkpoint.layout(), &aligned, ws)?;
            (out.score, Some(out.embedding))
        }
        Scorer::Tail { tail } => (tail_conf(&t.trajectory, *tail), None),
        Scorer::BottomGroup {
            group,
            fraction,
            stride,
        } => (bottom_group_conf(&t.trajectory, *group, *fraction, *stride)?, None),
        Scorer::Uniform => (1.0, None),
    })
}

/// Scores every trace of `groups`, in dataset order.
pub fn score_groups(scorer: &Scorer, groups: &[QuestionGroup], workers: usize) -> Result<Vec<ScoredTrace>> {
    let traces: Vec<&TraceRecord> = groups.iter().flat_map(|g| g.traces.iter()).collect();
    let chunk = traces.len().div_ceil(workers.max(1) * 4).max(1);
    let chunks: Vec<&[&TraceRecord]> = traces.chunks(chunk).collect();
    let parts = parallel_map(&chunks, workers, |_, part| {
        let mut ws = Workspace::default();
        part.iter()
            .map(|t| {
                let (score, embedding) = score_one(scorer, t, &mut ws)?;
                Ok(ScoredTrace {
                    trace_id: t.trace_id.clone(),
                    question_id: t.question_id.clone(),
                    correct: t.correct,
                    length: t.trajectory.len(),
                    score,
                    embedding,
                })
            })
            .collect::<Result<Vec<_>>>()
    });
    let mut out = Vec::with_capacity(traces.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn score_table(scored: &[ScoredTrace]) -> ScoreTable {
    scored.iter().map(|s| (s.trace_id.clone(), s.score)).collect()
}
