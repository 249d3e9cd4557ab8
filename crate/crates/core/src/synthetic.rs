//! Synthetic trace populations with a planted correctness signal.
//!
//! Confidences are i.i.d. Gaussian around `base_mean`, clipped at 0. Correct
//! traces get a signal in one segment of `window` tokens (the end by
//! default):
//!
//! * `MeanShift`: the segment mean moves by `magnitude`.
//! * `TailTrend`: a linear ramp from `-magnitude` to `+magnitude`, whose
//!   values sum to exactly zero, so the segment mean does not move.
//! * `TailVariance`: the noise standard deviation is multiplied by
//!   `1 + magnitude` while the mean is unchanged.
//! * `None`: labels carry no information about the trajectory.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, QuestionGroup, TraceRecord};
use crate::trajectory::ConfidenceTrajectory;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalKind {
    MeanShift,
    TailTrend,
    TailVariance,
    None,
}

/// Which end of the trace holds the planted segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    Tail,
    Head,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub questions: usize,
    pub traces_per_question: usize,
    /// Probability that a trace is correct.
    pub correct_rate: f64,
    /// Per-question rates are drawn uniformly from
    /// `correct_rate +- rate_spread` (clamped to `[0.01, 0.99]`).
    pub rate_spread: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub signal: SignalKind,
    pub magnitude: f64,
    /// Length of the planted segment.
    pub window: usize,
    pub placement: Placement,
    pub base_mean: f64,
    pub noise: f64,
    /// Distinct wrong answers available per question.
    pub distractors: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            questions: 400,
            traces_per_question: 16,
            correct_rate: 0.6,
            rate_spread: 0.0,
            min_len: 128,
            max_len: 512,
            signal: SignalKind::TailTrend,
            magnitude: 1.0,
            window: 64,
            placement: Placement::Tail,
            base_mean: 2.0,
            noise: 0.5,
            distractors: 3,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("questions", self.questions),
            ("traces_per_question", self.traces_per_question),
            ("min_len", self.min_len),
            ("window", self.window),
            ("distractors", self.distractors),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::param(name, "must be at least 1"));
            }
        }
        if self.max_len < self.min_len {
            return Err(Error::param("max_len", "must be at least min_len"));
        }
        if !(self.correct_rate > 0.0 && self.correct_rate < 1.0) {
            return Err(Error::param("correct_rate", "must lie in (0, 1)"));
        }
        if !(self.rate_spread >= 0.0 && self.rate_spread < 1.0) {
            return Err(Error::param("rate_spread", "must lie in [0, 1)"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::param("noise", "must be finite and non-negative"));
        }
        if !self.magnitude.is_finite() || !self.base_mean.is_finite() {
            return Err(Error::param("magnitude", "must be finite"));
        }
        Ok(())
    }
}

/// Offset of the ramp at `i` of `w` positions: `-m .. +m`, summing to 0.
fn ramp(i: usize, w: usize, m: f64) -> f64 {
    if w < 2 {
        return 0.0;
    }
    m * (2.0 * i as f64 - (w - 1) as f64) / (w - 1) as f64
}

/// Generates a dataset fully determined by `spec` (including its seed).
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let width = digits(spec.questions);
    let twidth = digits(spec.traces_per_question);

    let mut groups = Vec::with_capacity(spec.questions);
    for q in 0..spec.questions {
        let question_id = format!("q{q:0width$}");
        let truth_value: u32 = rng.random_range(10..10_000);
        let truth = truth_value.to_string();
        let wrong: Vec<String> = (1..=spec.distractors)
            .map(|d| (truth_value + d as u32 * 7).to_string())
            .collect();
        let rate = if spec.rate_spread > 0.0 {
            let lo = spec.correct_rate - spec.rate_spread;
            let hi = spec.correct_rate + spec.rate_spread;
            rng.random_range(lo..hi).clamp(0.01, 0.99)
        } else {
            spec.correct_rate
        };

        let mut traces = Vec::with_capacity(spec.traces_per_question);
        for k in 0..spec.traces_per_question {
            let correct = rng.random_bool(rate);
            let answer = if correct {
                truth.clone()
            } else {
                wrong[rng.random_range(0..wrong.len())].clone()
            };
            let len = rng.random_range(spec.min_len..=spec.max_len);
            let w = spec.window.min(len);
            let seg_start = match spec.placement {
                Placement::Tail => len - w,
                Placement::Head => 0,
            };
            let mut values = Vec::with_capacity(len);
            for t in 0..len {
                let z: f64 = unit.sample(&mut rng);
                let in_seg = correct && t >= seg_start && t < seg_start + w;
                let i = t.wrapping_sub(seg_start);
                let v = match (in_seg, spec.signal) {
                    (true, SignalKind::MeanShift) => spec.base_mean + spec.magnitude + spec.noise * z,
                    (true, SignalKind::TailTrend) => {
                        spec.base_mean + ramp(i, w, spec.magnitude) + spec.noise * z
                    }
                    (true, SignalKind::TailVariance) => {
                        spec.base_mean + spec.noise * (1.0 + spec.magnitude) * z
                    }
                    _ => spec.base_mean + spec.noise * z,
                };
                values.push(v.max(0.0));
            }
            traces.push(TraceRecord {
                trace_id: format!("{question_id}-t{k:0twidth$}"),
                question_id: question_id.clone(),
                answer,
                correct,
                trajectory: ConfidenceTrajectory::new(values)?,
            });
        }
        groups.push(QuestionGroup {
            question_id,
            ground_truth: Some(truth),
            traces,
        });
    }
    Dataset::new(groups)
}

fn digits(n: usize) -> usize {
    let mut d = 1;
    let mut x = n.saturating_sub(1);
    while x >= 10 {
        x /= 10;
        d += 1;
    }
    d.max(3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::tail_conf;
    use crate::dataset::normalize_answer;
    use crate::metrics::{auc, LabeledScores};

    fn small(signal: SignalKind) -> SyntheticSpec {
        SyntheticSpec {
            questions: 40,
            traces_per_question: 8,
            min_len: 80,
            max_len: 120,
            signal,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn ramp_sums_to_zero() {
        for w in [2usize, 3, 64, 65] {
            let s: f64 = (0..w).map(|i| ramp(i, w, 1.3)).sum();
            assert!(s.abs() < 1e-12, "w={w} sum={s}");
            assert!((ramp(0, w, 1.3) + 1.3).abs() < 1e-15);
            assert!((ramp(w - 1, w, 1.3) - 1.3).abs() < 1e-15);
        }
    }

    #[test]
    fn deterministic_and_labels_consistent() {
        let a = generate(&small(SignalKind::TailTrend)).unwrap();
        let b = generate(&small(SignalKind::TailTrend)).unwrap();
        assert_eq!(a, b);
        for g in &a.groups {
            let truth = normalize_answer(g.ground_truth.as_ref().unwrap());
            assert_eq!(g.traces.len(), 8);
            for t in &g.traces {
                assert_eq!(t.correct, normalize_answer(&t.answer) == truth);
                assert!((80..=120).contains(&t.trajectory.len()));
            }
        }
        let c = generate(&SyntheticSpec {
            seed: 6,
            ..small(SignalKind::TailTrend)
        })
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn spec_validation() {
        let bad = SyntheticSpec {
            correct_rate: 1.0,
            ..Default::default()
        };
        assert!(generate(&bad).is_err());
        let bad = SyntheticSpec {
            min_len: 10,
            max_len: 5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SyntheticSpec {
            questions: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    fn tail_auc(spec: &SyntheticSpec, tail: usize) -> f64 {
        let d = generate(spec).unwrap();
        let (s, l): (Vec<f64>, Vec<bool>) = d
            .traces()
            .map(|t| (tail_conf(&t.trajectory, tail), t.correct))
            .unzip();
        auc(&LabeledScores::new(s, l).unwrap()).unwrap()
    }

    #[test]
    fn planted_signals_versus_tail_mean() {
        let base = SyntheticSpec {
            questions: 150,
            traces_per_question: 16,
            min_len: 100,
            max_len: 200,
            seed: 9,
            ..Default::default()
        };
        let null = tail_auc(&SyntheticSpec { signal: SignalKind::None, ..base.clone() }, 64);
        assert!((null - 0.5).abs() < 0.03, "null auc {null}");
        let shift = tail_auc(&SyntheticSpec { signal: SignalKind::MeanShift, magnitude: 1.0, ..base.clone() }, 64);
        assert!(shift > 0.99, "mean-shift auc {shift}");
        let trend = tail_auc(&SyntheticSpec { signal: SignalKind::TailTrend, ..base }, 64);
        assert!((trend - 0.5).abs() < 0.03, "trend auc {trend}");
    }
}
