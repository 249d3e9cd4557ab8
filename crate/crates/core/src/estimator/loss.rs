//! Class-weighted binary cross-entropy.

use serde::{Deserialize, Serialize};

use crate::math;
use crate::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the loss.
pub const PROB_CLAMP: f64 = 1e-7;

/// Per-class loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub positive: f64,
    pub negative: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self {
            positive: 1.0,
            negative: 1.0,
        }
    }
}

impl ClassWeights {
    /// Balanced weights `n / (2 n_c)`: each class contributes half of the
    /// total weight and the per-trace weight averages to 1.
    pub fn balanced(labels: &[bool]) -> Result<Self> {
        let n = labels.len();
        let pos = labels.iter().filter(|&&l| l).count();
        let neg = n - pos;
        if pos == 0 {
            return Err(Error::SingleClass("negatives"));
        }
        if neg == 0 {
            return Err(Error::SingleClass("positives"));
        }
        Ok(Self {
            positive: n as f64 / (2.0 * pos as f64),
            negative: n as f64 / (2.0 * neg as f64),
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("positive_weight", self.positive), ("negative_weight", self.negative)] {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::param(name, "must be positive and finite"));
            }
        }
        Ok(())
    }

    pub fn of(&self, label: bool) -> f64 {
        if label {
            self.positive
        } else {
            self.negative
        }
    }
}

/// Mean weighted BCE over a batch of scores.
pub fn weighted_bce(scores: &[f64], labels: &[bool], weights: ClassWeights) -> Result<f64> {
    weights.validate()?;
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            let w = weights.of(y);
            if y {
                -w * math::ln(p)
            } else {
                -w * math::ln(1.0 - p)
            }
        })
        .sum();
    Ok(total / scores.len() as f64)
}

/// Derivative of one example's weighted BCE with respect to its logit.
/// Zero where the clamp is active, matching the clamped loss exactly.
pub fn bce_logit_gradient(logit: f64, label: bool, weights: ClassWeights) -> f64 {
    let p = math::sigmoid(logit);
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
        return 0.0;
    }
    if label {
        -weights.positive * (1.0 - p)
    } else {
        weights.negative * p
    }
}
