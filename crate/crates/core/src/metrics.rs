//! Trace-level discrimination and embedding geometry.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;
use crate::{Error, Result};

/// Parallel scores and binary labels over a trace set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledScores {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl LabeledScores {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Shape {
                expected: scores.len(),
                actual: labels.len(),
            });
        }
        Ok(Self { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }
}

/// Area under the ROC curve via the Mann-Whitney rank sum.
///
/// Tied scores share their average rank, which makes the result equal to
/// the pairwise definition: `P(s+ > s-) + 0.5 * P(s+ == s-)`.
pub fn auc(data: &LabeledScores) -> Result<f64> {
    let n = data.len();
    let n_pos = data.positives();
    let n_neg = n - n_pos;
    if n_pos == 0 {
        return Err(Error::SingleClass("negatives"));
    }
    if n_neg == 0 {
        return Err(Error::SingleClass("positives"));
    }
    if let Some(&s) = data.scores.iter().find(|s| s.is_nan()) {
        return Err(Error::param("scores", alloc::format!("non-comparable score {s}")));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| data.scores[a].total_cmp(&data.scores[b]));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && data.scores[order[j]] == data.scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share (i + 1 + j) / 2
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_tie = order[i..j].iter().filter(|&&k| data.labels[k]).count();
        rank_sum_pos += avg_rank * pos_in_tie as f64;
        i = j;
    }
    let p = n_pos as f64;
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    Ok(u / (p * n_neg as f64))
}

/// Fraction of traces where `score >= threshold` agrees with the label.
pub fn threshold_accuracy(data: &LabeledScores, threshold: f64) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let hits = data
        .scores
        .iter()
        .zip(&data.labels)
        .filter(|(&s, &l)| (s >= threshold) == l)
        .count();
    hits as f64 / data.len() as f64
}

/// Per-class histograms over uniform bins spanning all scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    /// `bins + 1` bin edges.
    pub edges: Vec<f64>,
    pub positive_counts: Vec<usize>,
    pub negative_counts: Vec<usize>,
    pub positive_mean: Option<f64>,
    pub negative_mean: Option<f64>,
}

pub fn score_distribution(data: &LabeledScores, bins: usize) -> Result<ScoreDistribution> {
    if bins == 0 {
        return Err(Error::param("bins", "must be at least 1"));
    }
    if data.is_empty() {
        return Err(Error::Empty("scores"));
    }
    let mut lo = data.scores.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = data.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut pos = vec![0usize; bins];
    let mut neg = vec![0usize; bins];
    let (mut sum_pos, mut sum_neg) = (0.0, 0.0);
    for (&s, &l) in data.scores.iter().zip(&data.labels) {
        let b = bin_index(s, lo, width, bins);
        if l {
            pos[b] += 1;
            sum_pos += s;
        } else {
            neg[b] += 1;
            sum_neg += s;
        }
    }
    let n_pos = data.positives();
    let n_neg = data.len() - n_pos;
    Ok(ScoreDistribution {
        edges,
        positive_counts: pos,
        negative_counts: neg,
        positive_mean: (n_pos > 0).then(|| sum_pos / n_pos as f64),
        negative_mean: (n_neg > 0).then(|| sum_neg / n_neg as f64),
    })
}

fn bin_index(s: f64, lo: f64, width: f64, bins: usize) -> usize {
    let raw = ((s - lo) / width) as isize;
    raw.clamp(0, bins as isize - 1) as usize
}

/// Row-major embeddings with one binary label per row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingSet {
    width: usize,
    data: Vec<f64>,
    labels: Vec<bool>,
}

impl EmbeddingSet {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            data: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: &[bool]) -> Result<Self> {
        let width = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut set = Self::new(width);
        if rows.len() != labels.len() {
            return Err(Error::Shape {
                expected: rows.len(),
                actual: labels.len(),
            });
        }
        for (r, &l) in rows.iter().zip(labels) {
            set.push(r, l)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, row: &[f64], label: bool) -> Result<()> {
        if row.len() != self.width {
            return Err(Error::Shape {
                expected: self.width,
                actual: row.len(),
            });
        }
        if let Some(&v) = row.iter().find(|v| !v.is_finite()) {
            return Err(Error::param("embedding", alloc::format!("non-finite entry {v}")));
        }
        self.data.extend_from_slice(row);
        self.labels.push(label);
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    /// Z-scores every column over the whole set; constant columns become 0.
    pub fn standardized(&self) -> Self {
        let n = self.len().max(1) as f64;
        let mut out = self.clone();
        for c in 0..self.width {
            let col = (0..self.len()).map(|i| self.data[i * self.width + c]);
            let m = col.clone().sum::<f64>() / n;
            let var = col.map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            let sd = math::sqrt(var);
            for i in 0..self.len() {
                let x = &mut out.data[i * self.width + c];
                *x = if sd > 0.0 { (*x - m) / sd } else { 0.0 };
            }
        }
        out
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Two-cluster Davies-Bouldin index over the label-defined clusters:
/// `(S_0 + S_1) / |mu_0 - mu_1|`, where `S_i` is the mean Euclidean
/// distance of cluster `i` to its centroid. Lower is better separated.
pub fn dbi(data: &EmbeddingSet) -> Result<f64> {
    let w = data.width;
    let mut centroids = [vec![0.0; w], vec![0.0; w]];
    let mut counts = [0usize; 2];
    for i in 0..data.len() {
        let c = data.labels[i] as usize;
        counts[c] += 1;
        for (acc, x) in centroids[c].iter_mut().zip(data.row(i)) {
            *acc += x;
        }
    }
    if counts[1] == 0 {
        return Err(Error::SingleClass("negatives"));
    }
    if counts[0] == 0 {
        return Err(Error::SingleClass("positives"));
    }
    for c in 0..2 {
        for v in &mut centroids[c] {
            *v /= counts[c] as f64;
        }
    }
    let mut spread = [0.0; 2];
    for i in 0..data.len() {
        let c = data.labels[i] as usize;
        spread[c] += euclidean(data.row(i), &centroids[c]);
    }
    let s0 = spread[0] / counts[0] as f64;
    let s1 = spread[1] / counts[1] as f64;
    let m = euclidean(&centroids[0], &centroids[1]);
    if !(m > 0.0) {
        return Err(Error::CoincidentCentroids);
    }
    Ok((s0 + s1) / m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ls(s: &[f64], l: &[bool]) -> LabeledScores {
        LabeledScores::new(s.to_vec(), l.to_vec()).unwrap()
    }

    fn pairwise_auc(d: &LabeledScores) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &li) in d.labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in d.labels.iter().enumerate() {
                if lj {
                    continue;
                }
                den += 1.0;
                if d.scores[i] > d.scores[j] {
                    num += 1.0;
                } else if d.scores[i] == d.scores[j] {
                    num += 0.5;
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_examples() {
        let d = ls(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]);
        assert_eq!(auc(&d).unwrap(), 1.0);
        let d = ls(&[0.3; 6], &[true, false, true, false, false, true]);
        assert_eq!(auc(&d).unwrap(), 0.5);
        let d = ls(&[0.1, 0.9], &[true, false]);
        assert_eq!(auc(&d).unwrap(), 0.0);
    }

    #[test]
    fn auc_single_class_is_error() {
        assert!(auc(&ls(&[0.1, 0.2], &[true, true])).is_err());
        assert!(auc(&ls(&[0.1, 0.2], &[false, false])).is_err());
        assert!(auc(&ls(&[], &[])).is_err());
    }

    #[test]
    fn dbi_worked_example() {
        let rows = [
            vec![0.0, 0.0],
            vec![0.0, 2.0],
            vec![10.0, 0.0],
            vec![10.0, 2.0],
        ];
        let set = EmbeddingSet::from_rows(&rows, &[true, true, false, false]).unwrap();
        assert!((dbi(&set).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn dbi_errors() {
        let rows = [vec![1.0], vec![-1.0], vec![1.0], vec![-1.0]];
        let set = EmbeddingSet::from_rows(&rows, &[true, true, false, false]).unwrap();
        assert_eq!(dbi(&set), Err(Error::CoincidentCentroids));
        let set = EmbeddingSet::from_rows(&rows, &[true; 4]).unwrap();
        assert!(dbi(&set).is_err());
        let mut set = EmbeddingSet::new(2);
        assert!(set.push(&[1.0], true).is_err());
        assert!(set.push(&[1.0, f64::NAN], true).is_err());
    }

    #[test]
    fn threshold_accuracy_cases() {
        let d = ls(&[0.9, 0.7, 0.2, 0.1], &[true, true, false, false]);
        assert_eq!(threshold_accuracy(&d, 0.5), 1.0);
        let d = ls(&[0.1, 0.0, 0.4], &[true, true, true]);
        assert_eq!(threshold_accuracy(&d, 0.0), 1.0);
        let d = ls(&[0.9, 0.1, 0.3, 0.6], &[true, false, true, true]);
        assert_eq!(threshold_accuracy(&d, f64::NEG_INFINITY), 0.75);
    }

    #[test]
    fn distribution_cases() {
        let d = ls(&[0.0, 0.5, 1.0, 0.25], &[true, false, true, false]);
        let h = score_distribution(&d, 4).unwrap();
        assert_eq!(h.edges.len(), 5);
        assert_eq!(h.positive_counts.iter().sum::<usize>(), 2);
        assert_eq!(h.negative_counts.iter().sum::<usize>(), 2);
        assert_eq!(h.positive_counts, [1, 0, 0, 1]);
        assert_eq!(h.negative_counts, [0, 1, 1, 0]);
        assert_eq!(h.positive_mean, Some(0.5));
        assert_eq!(h.negative_mean, Some(0.375));

        let d = ls(&[0.4, 0.1, 0.2], &[true, false, false]);
        let h = score_distribution(&d, 3).unwrap();
        assert_eq!(h.positive_mean, Some(0.4));
        let d = ls(&[0.4, 0.4], &[true, true]);
        let h = score_distribution(&d, 2).unwrap();
        assert_eq!(h.negative_mean, None);
        assert_eq!(h.positive_counts.iter().sum::<usize>(), 2);
        assert!(score_distribution(&d, 0).is_err());
    }

    fn scores_and_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..12).prop_map(|x| x as f64 / 4.0), n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
    }

    proptest! {
        #[test]
        fn rank_sum_equals_pairwise((s, l) in scores_and_labels()) {
            let d = ls(&s, &l);
            prop_assume!(d.positives() > 0 && d.positives() < d.len());
            prop_assert_eq!(auc(&d).unwrap(), pairwise_auc(&d));
        }

        #[test]
        fn auc_invariant_under_monotone_maps((s, l) in scores_and_labels(), a in 0.1f64..5.0, b in -3.0f64..3.0) {
            let d = ls(&s, &l);
            prop_assume!(d.positives() > 0 && d.positives() < d.len());
            let base = auc(&d).unwrap();
            let affine = ls(&s.iter().map(|x| a * x + b).collect::<Vec<_>>(), &l);
            let expd = ls(&s.iter().map(|x| libm::exp(*x)).collect::<Vec<_>>(), &l);
            prop_assert_eq!(auc(&affine).unwrap(), base);
            prop_assert_eq!(auc(&expd).unwrap(), base);
        }

        #[test]
        fn auc_complement_without_ties(s in prop::collection::btree_set(0u32..10_000, 2..40), seed in any::<u64>()) {
            let scores: Vec<f64> = s.into_iter().map(|x| x as f64).collect();
            let labels: Vec<bool> = (0..scores.len()).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
            let d = ls(&scores, &labels);
            prop_assume!(d.positives() > 0 && d.positives() < d.len());
            let neg = ls(&scores.iter().map(|x| -x).collect::<Vec<_>>(), &labels);
            prop_assert!((auc(&d).unwrap() + auc(&neg).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn threshold_at_minus_infinity_is_prevalence((s, l) in scores_and_labels()) {
            let d = ls(&s, &l);
            let prev = d.positives() as f64 / d.len() as f64;
            prop_assert_eq!(threshold_accuracy(&d, f64::NEG_INFINITY), prev);
        }
    }
}
