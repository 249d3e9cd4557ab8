//! Hand-crafted trace scores computed straight from the raw trajectory.
//!
//! Neither scorer ever sees a padded view, so alignment cannot affect them.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::ceil_count;
use crate::trajectory::ConfidenceTrajectory;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// Tail length for the tail mean.
    pub tail: usize,
    /// Group (window) length for the bottom-group score.
    pub group: usize,
    /// Fraction of lowest groups averaged.
    pub bottom_fraction: f64,
    pub stride: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            tail: 2048,
            group: 1024,
            bottom_fraction: 0.10,
            stride: 1,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tail == 0 {
            return Err(Error::param("tail", "must be at least 1"));
        }
        if self.group == 0 {
            return Err(Error::param("group", "must be at least 1"));
        }
        if self.stride == 0 {
            return Err(Error::param("stride", "must be at least 1"));
        }
        if !(self.bottom_fraction > 0.0 && self.bottom_fraction <= 1.0) {
            return Err(Error::param("bottom_fraction", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean of the last `min(len, tail)` confidences.
pub fn tail_conf(traj: &ConfidenceTrajectory, tail: usize) -> f64 {
    let v = traj.values();
    let kept = v.len().min(tail.max(1));
    mean(&v[v.len() - kept..])
}

/// Means of every length-`group` window advanced by `stride`, in trace
/// order. A trace shorter than `group` forms a single group.
pub fn group_means(traj: &ConfidenceTrajectory, group: usize, stride: usize) -> Vec<f64> {
    let v = traj.values();
    let group = group.max(1);
    let stride = stride.max(1);
    if v.len() <= group {
        return alloc::vec![mean(v)];
    }
    (0..=v.len() - group)
        .step_by(stride)
        .map(|s| mean(&v[s..s + group]))
        .collect()
}

/// Mean of the `ceil(fraction * n_groups)` lowest group means (at least one).
pub fn bottom_group_conf(
    traj: &ConfidenceTrajectory,
    group: usize,
    fraction: f64,
    stride: usize,
) -> Result<f64> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::param("bottom_fraction", "must lie in (0, 1]"));
    }
    if group == 0 || stride == 0 {
        return Err(Error::param("group", "group length and stride must be at least 1"));
    }
    let mut groups = group_means(traj, group, stride);
    let take = ceil_count(fraction, groups.len());
    groups.sort_by(f64::total_cmp);
    Ok(mean(&groups[..take]))
}
