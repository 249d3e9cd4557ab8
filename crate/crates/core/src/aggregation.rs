//! Answer selection over the traces sampled for one question.
//!
//! Every answer's tally is the summed score of the traces that ended in it;
//! the winner maximizes the tally. With equal scores this is plain majority
//! voting. Ties (tallies within a relative `1e-12`) go to the answer with more
//! traces, then to the lexicographically smallest answer, so the result never
//! depends on input order.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::{normalize_answer, QuestionGroup};
use crate::math::ceil_count;
use crate::scores::ScoreTable;
use crate::{Error, Result};

const TIE_TOLERANCE: f64 = 1e-12;

/// One trace's contribution to a vote.
#[derive(Debug, Clone, PartialEq)]
pub struct Vote {
    pub trace_id: String,
    pub answer: String,
    pub score: f64,
}

impl Vote {
    pub fn new(trace_id: impl Into<String>, answer: impl Into<String>, score: f64) -> Self {
        Self {
            trace_id: trace_id.into(),
            answer: answer.into(),
            score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    /// Normalized answer.
    pub answer: String,
    pub weight: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteResult {
    pub chosen: String,
    /// Sorted by answer.
    pub tallies: Vec<Tally>,
    /// Trace ids that took part in the vote, sorted.
    pub retained: Vec<String>,
}

impl VoteResult {
    pub fn tally(&self, answer: &str) -> Option<&Tally> {
        self.tallies.iter().find(|t| t.answer == answer)
    }
}

fn validate(votes: &[Vote]) -> Result<()> {
    if votes.is_empty() {
        return Err(Error::Empty("vote input"));
    }
    if let Some(v) = votes.iter().find(|v| !v.score.is_finite()) {
        return Err(Error::param(
            "score",
            alloc::format!("trace `{}` has non-finite score {}", v.trace_id, v.score),
        ));
    }
    Ok(())
}

/// Score-weighted vote: `argmax_A sum_{traces ending in A} score`.
pub fn weighted_vote(votes: &[Vote]) -> Result<VoteResult> {
    validate(votes)?;
    // Canonical summation order keeps tallies independent of input order.
    let mut sorted: Vec<&Vote> = votes.iter().collect();
    sorted.sort_by(|a, b| {
        a.trace_id
            .cmp(&b.trace_id)
            .then_with(|| a.answer.cmp(&b.answer))
            .then_with(|| a.score.total_cmp(&b.score))
    });

    let mut table: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for v in &sorted {
        let e = table.entry(normalize_answer(&v.answer)).or_insert((0.0, 0));
        e.0 += v.score;
        e.1 += 1;
    }
    let tallies: Vec<Tally> = table
        .into_iter()
        .map(|(answer, (weight, count))| Tally {
            answer,
            weight,
            count,
        })
        .collect();

    let best = tallies
        .iter()
        .map(|t| t.weight)
        .fold(f64::NEG_INFINITY, f64::max);
    let cutoff = best - TIE_TOLERANCE * best.abs();
    // Tallies are sorted by answer, so the first maximal count wins the
    // lexicographic tie-break.
    let mut chosen: Option<&Tally> = None;
    for t in tallies.iter().filter(|t| t.weight >= cutoff) {
        if chosen.map_or(true, |c| t.count > c.count) {
            chosen = Some(t);
        }
    }
    let chosen = chosen.expect("non-empty tallies").answer.clone();
    let mut retained: Vec<String> = sorted.iter().map(|v| v.trace_id.clone()).collect();
    retained.sort();
    Ok(VoteResult {
        chosen,
        tallies,
        retained,
    })
}

/// Every trace counts once.
pub fn majority_vote(votes: &[Vote]) -> Result<VoteResult> {
    let unit: Vec<Vote> = votes
        .iter()
        .map(|v| Vote {
            score: 1.0,
            ..v.clone()
        })
        .collect();
    weighted_vote(&unit)
}

/// The `ceil(eta * n)` highest-scoring traces (ties at the cutoff resolved
/// by trace id), most confident first.
pub fn retain_top(votes: &[Vote], eta: f64) -> Result<Vec<Vote>> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::param("eta", "keep fraction must lie in (0, 1]"));
    }
    validate(votes)?;
    let keep = ceil_count(eta, votes.len());
    let mut sorted = votes.to_vec();
    sorted.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.trace_id.cmp(&b.trace_id))
    });
    sorted.truncate(keep);
    Ok(sorted)
}

/// Keeps the top `eta` fraction by score, then votes with the same scores.
pub fn filtered_vote(votes: &[Vote], eta: f64) -> Result<VoteResult> {
    weighted_vote(&retain_top(votes, eta)?)
}

/// Keeps the top `eta` fraction by score, then takes a plain majority.
pub fn filtered_majority_vote(votes: &[Vote], eta: f64) -> Result<VoteResult> {
    majority_vote(&retain_top(votes, eta)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum VoteMode {
    Majority,
    Weighted,
    Filtered { eta: f64, then_majority: bool },
}

impl VoteMode {
    pub fn apply(&self, votes: &[Vote]) -> Result<VoteResult> {
        match *self {
            VoteMode::Majority => majority_vote(votes),
            VoteMode::Weighted => weighted_vote(votes),
            VoteMode::Filtered {
                eta,
                then_majority: false,
            } => filtered_vote(votes, eta),
            VoteMode::Filtered {
                eta,
                then_majority: true,
            } => filtered_majority_vote(votes, eta),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub question_id: String,
    pub chosen: String,
    pub ground_truth: String,
    pub correct: bool,
    pub retained: usize,
    pub candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationReport {
    pub accuracy: f64,
    pub decisions: Vec<Decision>,
}

/// Accuracy of the chosen answers against ground truth, one decision per
/// question. Every group must carry ground truth and every trace a score.
pub fn evaluate_aggregation(
    groups: &[QuestionGroup],
    scores: &ScoreTable,
    mode: VoteMode,
) -> Result<AggregationReport> {
    let missing: Vec<&str> = groups
        .iter()
        .filter(|g| g.ground_truth.is_none())
        .map(|g| g.question_id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingGroundTruth(missing.join(", ")));
    }
    if groups.is_empty() {
        return Err(Error::Empty("question groups"));
    }
    let mut decisions = Vec::with_capacity(groups.len());
    for g in groups {
        let votes = g
            .traces
            .iter()
            .map(|t| Ok(Vote::new(t.trace_id.clone(), t.answer.clone(), scores.get(&t.trace_id)?)))
            .collect::<Result<Vec<_>>>()?;
        let result = mode.apply(&votes)?;
        let truth = normalize_answer(g.ground_truth.as_deref().unwrap_or_default());
        decisions.push(Decision {
            question_id: g.question_id.clone(),
            correct: result.chosen == truth,
            chosen: result.chosen,
            ground_truth: truth.to_string(),
            retained: result.retained.len(),
            candidates: result.tallies.len(),
        });
    }
    let hits = decisions.iter().filter(|d| d.correct).count();
    Ok(AggregationReport {
        accuracy: hits as f64 / decisions.len() as f64,
        decisions,
    })
}
