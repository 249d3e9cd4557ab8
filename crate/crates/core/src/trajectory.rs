//! Per-token confidence and fixed-length views of confidence trajectories.
//!
//! A token's confidence is the mean negative log-probability of the top-k
//! candidates at that decoding step: a peaked distribution pushes the
//! lower-ranked probabilities towards zero and the value up. Trajectories are
//! variable length, so the estimator consumes [`AlignedTrajectory`] views:
//! the last `L` values (left-padded), the first `L` values (right-padded), or
//! end-anchored sliding windows.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;
use crate::{Error, Result};

/// Probabilities below this are clamped before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

const MASS_TOLERANCE: f64 = 1e-6;

/// Top-k candidate probabilities at one decoding step, highest first.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKRecord {
    probs: Vec<f64>,
}

impl TopKRecord {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("top-k probabilities"));
        }
        for (index, &value) in probs.iter().enumerate() {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidProbability { index, value });
            }
        }
        if let Some(i) = probs.windows(2).position(|w| w[1] > w[0]) {
            return Err(Error::UnsortedProbabilities(i + 1));
        }
        let mass: f64 = probs.iter().sum();
        if mass > 1.0 + MASS_TOLERANCE {
            return Err(Error::ProbabilityMass(mass));
        }
        Ok(Self { probs })
    }

    /// Builds a record from log-probabilities in any order.
    pub fn from_logprobs(logprobs: &[f64]) -> Result<Self> {
        let mut probs: Vec<f64> = logprobs.iter().map(|&lp| math::exp(lp)).collect();
        probs.sort_by(|a, b| b.total_cmp(a));
        Self::new(probs)
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// `-(1/k) * sum(log(max(p, 1e-12)))` over the given probabilities.
///
/// The sum runs over a descending-sorted copy, so the result is bitwise
/// identical for every ordering of `probs`.
pub fn confidence_from_probs(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::Empty("top-k probabilities"));
    }
    let mut sorted = probs.to_vec();
    for (index, &value) in sorted.iter().enumerate() {
        if value.is_nan() || value < 0.0 {
            return Err(Error::InvalidProbability { index, value });
        }
    }
    sorted.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = sorted.iter().map(|&p| math::ln(p.max(PROB_FLOOR))).sum();
    Ok(-total / sorted.len() as f64)
}

pub fn token_confidence(record: &TopKRecord) -> f64 {
    // A validated record is non-empty and non-negative.
    confidence_from_probs(&record.probs).expect("validated top-k record")
}

/// Confidence values for one trace, in decoding order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ConfidenceTrajectory {
    values: Vec<f64>,
}

impl ConfidenceTrajectory {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("confidence trajectory"));
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::InvalidConfidence { index, value });
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl TryFrom<Vec<f64>> for ConfidenceTrajectory {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<ConfidenceTrajectory> for Vec<f64> {
    fn from(t: ConfidenceTrajectory) -> Self {
        t.values
    }
}

pub fn build_trajectory(records: &[TopKRecord]) -> Result<ConfidenceTrajectory> {
    if records.is_empty() {
        return Err(Error::Empty("top-k record sequence"));
    }
    ConfidenceTrajectory::new(records.iter().map(token_confidence).collect())
}

/// Which part of the trace an aligned view was cut from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alignment {
    Tail,
    Head,
    /// `center` is the distance from the window centre to the trace end.
    Window { center: usize, size: usize },
}

/// A fixed-length view with a validity mask. Pad positions hold exactly 0.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedTrajectory {
    values: Vec<f64>,
    mask: Vec<bool>,
    origin: Alignment,
}

impl AlignedTrajectory {
    /// Assembles a view from raw parts; pad values are forced to 0.
    pub fn from_parts(mut values: Vec<f64>, mask: Vec<bool>, origin: Alignment) -> Result<Self> {
        if values.len() != mask.len() {
            return Err(Error::Shape {
                expected: values.len(),
                actual: mask.len(),
            });
        }
        if values.is_empty() {
            return Err(Error::Empty("aligned trajectory"));
        }
        for (v, &m) in values.iter_mut().zip(&mask) {
            if !m {
                *v = 0.0;
            }
        }
        Ok(Self {
            values,
            mask,
            origin,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn origin(&self) -> Alignment {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// The same content placed in a longer buffer by adding left padding.
    pub fn left_padded_to(&self, len: usize) -> Result<Self> {
        if len < self.len() {
            return Err(Error::param("len", "cannot shrink an aligned trajectory"));
        }
        let pad = len - self.len();
        let mut values = vec![0.0; pad];
        values.extend_from_slice(&self.values);
        let mut mask = vec![false; pad];
        mask.extend_from_slice(&self.mask);
        Ok(Self {
            values,
            mask,
            origin: self.origin,
        })
    }
}

fn check_len(name: &'static str, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::param(name, "must be at least 1"));
    }
    Ok(())
}

/// Keeps the last `l_max` values; shorter traces are left-padded.
pub fn tail_align(traj: &ConfidenceTrajectory, l_max: usize) -> Result<AlignedTrajectory> {
    check_len("l_max", l_max)?;
    let v = traj.values();
    let kept = v.len().min(l_max);
    let pad = l_max - kept;
    let mut values = vec![0.0; pad];
    values.extend_from_slice(&v[v.len() - kept..]);
    let mut mask = vec![false; pad];
    mask.resize(l_max, true);
    Ok(AlignedTrajectory {
        values,
        mask,
        origin: Alignment::Tail,
    })
}

/// Keeps the first `l_max` values; shorter traces are right-padded.
pub fn head_align(traj: &ConfidenceTrajectory, l_max: usize) -> Result<AlignedTrajectory> {
    check_len("l_max", l_max)?;
    let v = traj.values();
    let kept = v.len().min(l_max);
    let mut values = v[..kept].to_vec();
    values.resize(l_max, 0.0);
    let mut mask = vec![true; kept];
    mask.resize(l_max, false);
    Ok(AlignedTrajectory {
        values,
        mask,
        origin: Alignment::Head,
    })
}

/// One end-anchored window and where it sits in the trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub aligned: AlignedTrajectory,
    /// First covered token; negative when a short trace was left-padded.
    pub start: isize,
    /// Distance from the window centre to the trace end.
    pub position: usize,
}

/// End-anchored windows: the last one covers the final `size` tokens and
/// each earlier one starts `stride` tokens before the next, stopping before a
/// window would reach past the first token. A trace shorter than `size`
/// yields a single left-padded window. Windows are returned nearest-end first.
pub fn sliding_windows(
    traj: &ConfidenceTrajectory,
    size: usize,
    stride: usize,
) -> Result<Vec<Window>> {
    check_len("size", size)?;
    check_len("stride", stride)?;
    let len = traj.len();
    let half = size / 2;
    if len < size {
        let aligned = tail_align(traj, size)?;
        let start = len as isize - size as isize;
        return Ok(vec![Window {
            aligned: AlignedTrajectory {
                origin: Alignment::Window { center: half, size },
                ..aligned
            },
            start,
            position: half,
        }]);
    }
    let v = traj.values();
    let mut out = Vec::new();
    let mut start = len - size;
    loop {
        let position = len - (start + half);
        out.push(Window {
            aligned: AlignedTrajectory {
                values: v[start..start + size].to_vec(),
                mask: vec![true; size],
                origin: Alignment::Window {
                    center: position,
                    size,
                },
            },
            start: start as isize,
            position,
        });
        if start < stride {
            break;
        }
        start -= stride;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn traj(v: &[f64]) -> ConfidenceTrajectory {
        ConfidenceTrajectory::new(v.to_vec()).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn uniform_top_k_collapses_to_neg_log() {
        let r = TopKRecord::new(vec![0.05; 20]).unwrap();
        assert!(close(token_confidence(&r), 2.995732273553991, 1e-12));
        let r = TopKRecord::new(vec![0.5, 0.5]).unwrap();
        assert!(close(token_confidence(&r), 0.6931471805599453, 1e-12));
    }

    #[test]
    fn skewed_top_4_regression() {
        // -(ln .7 + ln .2 + ln .06 + ln .04) / 4, evaluated independently in f64.
        let r = TopKRecord::new(vec![0.7, 0.2, 0.06, 0.04]).unwrap();
        assert!(close(token_confidence(&r), 1.9995998495002674, 1e-14));
    }

    #[test]
    fn zero_probability_is_clamped() {
        let c = confidence_from_probs(&[0.9, 0.0]).unwrap();
        let expect = -(libm::log(0.9) + libm::log(1e-12)) / 2.0;
        assert!(c.is_finite());
        assert!(close(c, expect, 1e-12));
    }

    #[test]
    fn record_validation() {
        assert_eq!(TopKRecord::new(vec![]), Err(Error::Empty("top-k probabilities")));
        assert!(matches!(
            TopKRecord::new(vec![0.5, -0.1]),
            Err(Error::InvalidProbability { index: 1, .. })
        ));
        assert_eq!(
            TopKRecord::new(vec![0.1, 0.5]),
            Err(Error::UnsortedProbabilities(1))
        );
        assert!(matches!(
            TopKRecord::new(vec![0.6, 0.5]),
            Err(Error::ProbabilityMass(_))
        ));
        assert!(confidence_from_probs(&[]).is_err());
        assert!(confidence_from_probs(&[0.3, -1.0]).is_err());
    }

    #[test]
    fn logprob_records_are_sorted() {
        let r = TopKRecord::from_logprobs(&[-3.0, -0.7, -1.5]).unwrap();
        assert_eq!(r.k(), 3);
        assert!(r.probs()[0] > r.probs()[1] && r.probs()[1] > r.probs()[2]);
    }

    #[test]
    fn build_trajectory_cases() {
        let t = build_trajectory(&[TopKRecord::new(vec![0.5, 0.5]).unwrap()]).unwrap();
        assert_eq!(t.len(), 1);
        assert!(close(t.values()[0], 0.6931471805599453, 1e-12));

        let u = TopKRecord::new(vec![0.05; 20]).unwrap();
        let t = build_trajectory(&[u.clone(), u.clone(), u]).unwrap();
        for &v in t.values() {
            assert!(close(v, 2.995732273553991, 1e-12));
        }

        let recs = [
            TopKRecord::new(vec![0.7, 0.2, 0.06, 0.04]).unwrap(),
            TopKRecord::new(vec![0.9, 0.05]).unwrap(),
            TopKRecord::new(vec![0.3, 0.3, 0.2, 0.1, 0.1]).unwrap(),
        ];
        let t = build_trajectory(&recs).unwrap();
        for (v, r) in t.values().iter().zip(&recs) {
            let direct = -r.probs().iter().map(|p| libm::log(*p)).sum::<f64>() / r.k() as f64;
            assert!(close(*v, direct, 1e-12));
        }
        assert_eq!(build_trajectory(&[]), Err(Error::Empty("top-k record sequence")));
    }

    #[test]
    fn trajectory_validation() {
        assert!(ConfidenceTrajectory::new(vec![]).is_err());
        assert!(ConfidenceTrajectory::new(vec![1.0, -0.5]).is_err());
        assert!(ConfidenceTrajectory::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn tail_align_cases() {
        let t = traj(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let a = tail_align(&t, 8).unwrap();
        assert_eq!(a.values(), &[0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(
            a.mask(),
            &[false, false, false, true, true, true, true, true]
        );
        let a = tail_align(&t, 3).unwrap();
        assert_eq!(a.values(), &[3.0, 4.0, 5.0]);
        assert!(a.mask().iter().all(|&m| m));
        let a = tail_align(&t, 5).unwrap();
        assert_eq!(a.values(), t.values());
        assert!(tail_align(&t, 0).is_err());
    }

    #[test]
    fn head_align_cases() {
        let t = traj(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(head_align(&t, 3).unwrap().values(), &[1.0, 2.0, 3.0]);
        let a = head_align(&traj(&[1.0, 2.0]), 4).unwrap();
        assert_eq!(a.values(), &[1.0, 2.0, 0.0, 0.0]);
        assert_eq!(a.mask(), &[true, true, false, false]);
        assert_eq!(head_align(&t, 5).unwrap().values(), t.values());
        assert!(head_align(&t, 0).is_err());
    }

    #[test]
    fn window_arithmetic() {
        let t = ConfidenceTrajectory::new((0..128).map(|i| i as f64).collect()).unwrap();
        let w = sliding_windows(&t, 64, 32).unwrap();
        let starts: Vec<isize> = w.iter().map(|w| w.start).collect();
        assert_eq!(starts, [64, 32, 0]);
        let pos: Vec<usize> = w.iter().map(|w| w.position).collect();
        assert_eq!(pos, [32, 64, 96]);
        assert_eq!(w[0].aligned.values()[0], 64.0);

        let t = ConfidenceTrajectory::new(vec![1.0; 64]).unwrap();
        let w = sliding_windows(&t, 64, 32).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].aligned.valid_count(), 64);

        let t = ConfidenceTrajectory::new(vec![1.0; 40]).unwrap();
        let w = sliding_windows(&t, 64, 32).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].aligned.valid_count(), 40);
        assert!(w[0].aligned.mask()[..24].iter().all(|&m| !m));
        assert_eq!(w[0].position, 32);
        assert!(sliding_windows(&t, 0, 1).is_err());
        assert!(sliding_windows(&t, 4, 0).is_err());
    }

    #[test]
    fn window_positions_for_256() {
        let t = ConfidenceTrajectory::new(vec![1.0; 256]).unwrap();
        let pos: Vec<usize> = sliding_windows(&t, 64, 32)
            .unwrap()
            .iter()
            .map(|w| w.position)
            .collect();
        assert_eq!(pos, [32, 64, 96, 128, 160, 192, 224]);
    }

    proptest! {
        #[test]
        fn permutation_invariant(mut probs in prop::collection::vec(0.0f64..0.05, 1..25), seed in any::<u64>()) {
            let a = confidence_from_probs(&probs).unwrap();
            // cheap deterministic shuffle
            let n = probs.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                probs.swap(i, (s >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(a.to_bits(), confidence_from_probs(&probs).unwrap().to_bits());
        }

        #[test]
        fn strictly_decreasing_in_each_prob(probs in prop::collection::vec(0.001f64..0.04, 2..20), idx in any::<prop::sample::Index>()) {
            let i = idx.index(probs.len());
            let mut up = probs.clone();
            up[i] += 0.005;
            prop_assert!(confidence_from_probs(&up).unwrap() < confidence_from_probs(&probs).unwrap());
        }
    }
}
