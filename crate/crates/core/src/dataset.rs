//! Trace records grouped by question, answer normalization and
//! question-level splits.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::trajectory::ConfidenceTrajectory;
use crate::{Error, Result};

/// One sampled reasoning trace, reduced to what the toolkit needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub trace_id: String,
    pub question_id: String,
    pub answer: String,
    pub correct: bool,
    pub trajectory: ConfidenceTrajectory,
}

/// All traces sampled for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionGroup {
    pub question_id: String,
    pub ground_truth: Option<String>,
    pub traces: Vec<TraceRecord>,
}

impl QuestionGroup {
    /// Recomputes every trace label from the ground truth, returning the ids
    /// of traces whose stored label disagreed.
    pub fn relabel(&mut self) -> Vec<String> {
        let Some(truth) = &self.ground_truth else {
            return Vec::new();
        };
        let truth = normalize_answer(truth);
        let mut changed = Vec::new();
        for t in &mut self.traces {
            let label = normalize_answer(&t.answer) == truth;
            if label != t.correct {
                changed.push(t.trace_id.clone());
                t.correct = label;
            }
        }
        changed
    }
}

/// An ordered collection of question groups with unique trace ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub groups: Vec<QuestionGroup>,
}

impl Dataset {
    pub fn new(groups: Vec<QuestionGroup>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for g in &groups {
            for t in &g.traces {
                if t.question_id != g.question_id {
                    return Err(Error::param(
                        "groups",
                        alloc::format!(
                            "trace `{}` belongs to `{}` but sits in group `{}`",
                            t.trace_id,
                            t.question_id,
                            g.question_id
                        ),
                    ));
                }
                if !seen.insert(t.trace_id.as_str()) {
                    return Err(Error::param(
                        "groups",
                        alloc::format!("duplicate trace id `{}`", t.trace_id),
                    ));
                }
            }
        }
        Ok(Self { groups })
    }

    pub fn traces(&self) -> impl Iterator<Item = &TraceRecord> {
        self.groups.iter().flat_map(|g| g.traces.iter())
    }

    pub fn trace_count(&self) -> usize {
        self.groups.iter().map(|g| g.traces.len()).sum()
    }

    /// Groups belonging to `split`, in dataset order.
    pub fn subset(&self, assignment: &SplitAssignment, split: Split) -> Vec<QuestionGroup> {
        self.groups
            .iter()
            .filter(|g| assignment.get(&g.question_id) == Some(split))
            .cloned()
            .collect()
    }

    /// Drops traces shorter than `min_len` and then any emptied group.
    pub fn filter_min_length(&self, min_len: usize) -> Dataset {
        let groups = self
            .groups
            .iter()
            .filter_map(|g| {
                let traces: Vec<_> = g
                    .traces
                    .iter()
                    .filter(|t| t.trajectory.len() >= min_len)
                    .cloned()
                    .collect();
                (!traces.is_empty()).then(|| QuestionGroup {
                    traces,
                    ..g.clone()
                })
            })
            .collect();
        Dataset { groups }
    }
}

/// Canonical form used for every answer comparison.
///
/// Lowercases, strips `\boxed{..}` and `$..$` wrappers, collapses
/// whitespace and rewrites plain decimal numbers (`+5`, `3.0`, `0.50`,
/// `1,000`) to a minimal spelling. Symbolic equivalence (`1/2` vs `0.5`) is
/// not attempted.
pub fn normalize_answer(raw: &str) -> String {
    let mut s: String = raw.trim().to_lowercase();
    loop {
        let before = s.len();
        s = strip_wrappers(&s);
        if s.len() == before {
            break;
        }
    }
    let collapsed: Vec<&str> = s.split_whitespace().collect();
    let s = collapsed.join(" ");
    canonical_number(&s).unwrap_or(s)
}

fn strip_wrappers(s: &str) -> String {
    let t = s.trim();
    if let Some(inner) = t.strip_prefix("\\boxed{").and_then(|r| r.strip_suffix('}')) {
        return inner.trim().to_string();
    }
    if t.len() >= 2 && t.starts_with('$') && t.ends_with('$') {
        return t[1..t.len() - 1].trim().to_string();
    }
    t.to_string()
}

fn canonical_number(s: &str) -> Option<String> {
    let (neg, body) = match s.as_bytes().first()? {
        b'+' => (false, &s[1..]),
        b'-' => (true, &s[1..]),
        _ => (false, s),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    let int_digits = strip_thousands(int_part)?;
    if let Some(f) = frac_part {
        if f.is_empty() || !f.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
    }
    if int_digits.is_empty() && frac_part.is_none() {
        return None;
    }
    let int_trim = int_digits.trim_start_matches('0');
    let frac_trim = frac_part.map(|f| f.trim_end_matches('0')).unwrap_or("");
    let mut out = String::new();
    let is_zero = int_trim.is_empty() && frac_trim.is_empty();
    if neg && !is_zero {
        out.push('-');
    }
    out.push_str(if int_trim.is_empty() { "0" } else { int_trim });
    if !frac_trim.is_empty() {
        out.push('.');
        out.push_str(frac_trim);
    }
    Some(out)
}

/// Digits of an integer part, accepting `1,234,567` style grouping.
fn strip_thousands(int_part: &str) -> Option<String> {
    if int_part.bytes().all(|b| b.is_ascii_digit()) {
        return Some(int_part.to_string());
    }
    let groups: Vec<&str> = int_part.split(',').collect();
    let ok = groups[0].len() >= 1
        && groups[0].len() <= 3
        && groups[1..].iter().all(|g| g.len() == 3)
        && groups.iter().all(|g| g.bytes().all(|b| b.is_ascii_digit()));
    ok.then(|| groups.concat())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Train/validation/test fractions; they must sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.5,
            val: 0.25,
            test: 0.25,
        }
    }
}

/// Question id to split.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitAssignment {
    map: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn get(&self, question_id: &str) -> Option<Split> {
        self.map.get(question_id).copied()
    }

    pub fn count(&self, split: Split) -> usize {
        self.map.values().filter(|&&s| s == split).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Split)> {
        self.map.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn questions(&self, split: Split) -> BTreeSet<&str> {
        self.iter().filter(|(_, s)| *s == split).map(|(q, _)| q).collect()
    }
}

/// Deterministic question-level split.
///
/// Question ids are sorted before shuffling, so the result depends only on
/// the set of ids, the fractions and the seed.
pub fn split_questions(
    groups: &[QuestionGroup],
    fractions: SplitFractions,
    seed: u64,
) -> Result<SplitAssignment> {
    let f = [fractions.train, fractions.val, fractions.test];
    if f.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::param(
            "fractions",
            "must lie in [0, 1] and sum to 1",
        ));
    }
    let mut ids: Vec<&str> = groups.iter().map(|g| g.question_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    let n = ids.len();
    let needed = f.iter().filter(|&&x| x > 0.0).count();
    if n < needed {
        return Err(Error::param(
            "fractions",
            alloc::format!("{n} questions cannot fill {needed} non-empty splits"),
        ));
    }

    let mut counts = [0usize; 3];
    for i in 0..3 {
        counts[i] = libm::round(f[i] * n as f64) as usize;
        if f[i] > 0.0 && counts[i] == 0 {
            counts[i] = 1;
        }
    }
    // Absorb rounding drift in the largest split.
    while counts.iter().sum::<usize>() != n {
        let largest = (0..3).max_by_key(|&i| (counts[i], 3 - i)).unwrap();
        if counts.iter().sum::<usize>() > n {
            counts[largest] -= 1;
        } else {
            counts[largest] += 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let mut map = BTreeMap::new();
    let splits = [Split::Train, Split::Val, Split::Test];
    let mut it = ids.into_iter();
    for (split, count) in splits.iter().zip(counts) {
        for id in it.by_ref().take(count) {
            map.insert(id.to_string(), *split);
        }
    }
    Ok(SplitAssignment { map })
}

/// Fails if any question id occurs in more than one of the given sets.
pub fn check_disjoint<'a>(sets: &[&[&'a str]]) -> Result<()> {
    let mut owner: BTreeMap<&'a str, usize> = BTreeMap::new();
    for (i, set) in sets.iter().enumerate() {
        for &q in set.iter() {
            if let Some(&j) = owner.get(q) {
                if j != i {
                    return Err(Error::QuestionLeakage(q.to_string()));
                }
            }
            owner.insert(q, i);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;
    use proptest::prelude::*;

    fn group(q: &str, n: usize) -> QuestionGroup {
        QuestionGroup {
            question_id: q.to_string(),
            ground_truth: Some("1".to_string()),
            traces: (0..n)
                .map(|i| TraceRecord {
                    trace_id: format!("{q}-{i}"),
                    question_id: q.to_string(),
                    answer: "1".to_string(),
                    correct: true,
                    trajectory: ConfidenceTrajectory::new(vec![1.0]).unwrap(),
                })
                .collect(),
        }
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_answer("\\boxed{ 42 }"), "42");
        assert_eq!(normalize_answer(" 42 "), "42");
        assert_eq!(normalize_answer("A"), normalize_answer("a"));
        assert_eq!(normalize_answer("0.50"), "0.5");
        assert_eq!(normalize_answer("3.0"), "3");
        assert_eq!(normalize_answer("+5"), "5");
        assert_eq!(normalize_answer("-0.0"), "0");
        assert_eq!(normalize_answer("1,000"), "1000");
        assert_eq!(normalize_answer("$\\boxed{7}$"), "7");
        assert_eq!(normalize_answer("  The   Answer "), "the answer");
        assert_eq!(normalize_answer("1/2"), "1/2");
        assert_eq!(normalize_answer("1,00"), "1,00");
        assert_eq!(normalize_answer(".5"), "0.5");
        assert_eq!(normalize_answer("007"), "7");
        assert_eq!(normalize_answer(""), "");
        assert_eq!(normalize_answer("-"), "-");
    }

    #[test]
    fn relabel_recomputes_from_truth() {
        let mut g = group("q", 2);
        g.ground_truth = Some(" 42 ".to_string());
        g.traces[0].answer = "42".to_string();
        g.traces[0].correct = false;
        g.traces[1].answer = "41".to_string();
        g.traces[1].correct = false;
        let changed = g.relabel();
        assert_eq!(changed, vec!["q-0".to_string()]);
        assert!(g.traces[0].correct);
        assert!(!g.traces[1].correct);
    }

    #[test]
    fn dataset_rejects_duplicates() {
        let mut g = group("q", 2);
        g.traces[1].trace_id = "q-0".to_string();
        assert!(Dataset::new(vec![g]).is_err());
    }

    #[test]
    fn paper_scale_split_sizes() {
        let groups: Vec<_> = (0..1200).map(|i| group(&format!("q{i:04}"), 1)).collect();
        let a = split_questions(&groups, SplitFractions::default(), 3).unwrap();
        assert_eq!(a.count(Split::Train), 600);
        assert_eq!(a.count(Split::Val), 300);
        assert_eq!(a.count(Split::Test), 300);
    }

    #[test]
    fn split_is_deterministic_and_order_free() {
        let groups: Vec<_> = ["a", "b", "c", "d"].iter().map(|q| group(q, 1)).collect();
        let a = split_questions(&groups, SplitFractions::default(), 11).unwrap();
        let b = split_questions(&groups, SplitFractions::default(), 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.count(Split::Train), 2);
        assert_eq!(a.count(Split::Val), 1);
        assert_eq!(a.count(Split::Test), 1);
        let mut rev = groups.clone();
        rev.reverse();
        assert_eq!(a, split_questions(&rev, SplitFractions::default(), 11).unwrap());
    }

    #[test]
    fn split_errors() {
        let groups: Vec<_> = ["a", "b"].iter().map(|q| group(q, 1)).collect();
        assert!(split_questions(&groups, SplitFractions::default(), 0).is_err());
        let bad = SplitFractions {
            train: 0.5,
            val: 0.5,
            test: 0.5,
        };
        assert!(split_questions(&groups, bad, 0).is_err());
    }

    #[test]
    fn disjointness_check() {
        assert!(check_disjoint(&[&["a", "b"], &["c"]]).is_ok());
        assert_eq!(
            check_disjoint(&[&["a", "b"], &["b"]]),
            Err(Error::QuestionLeakage("b".to_string()))
        );
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "[ a-zA-Z0-9.,+$\\-{}\\\\]{0,24}") {
            let once = normalize_answer(&s);
            prop_assert_eq!(normalize_answer(&once), once);
        }

        #[test]
        fn normalize_boxed_idempotent(s in "(\\\\boxed\\{)?[ 0-9.+\\-]{0,10}\\}?") {
            let once = normalize_answer(&s);
            prop_assert_eq!(normalize_answer(&once), once);
        }

        #[test]
        fn splits_never_leak(n in 3usize..60, seed in any::<u64>()) {
            let groups: Vec<_> = (0..n).map(|i| group(&format!("q{i}"), 1)).collect();
            let a = split_questions(&groups, SplitFractions::default(), seed).unwrap();
            let tr: Vec<_> = a.questions(Split::Train).into_iter().collect();
            let va: Vec<_> = a.questions(Split::Val).into_iter().collect();
            let te: Vec<_> = a.questions(Split::Test).into_iter().collect();
            prop_assert!(check_disjoint(&[&tr, &va, &te]).is_ok());
            prop_assert_eq!(tr.len() + va.len() + te.len(), n);
        }
    }
}
