//! Experiment sweeps: input length, window position, head versus tail
//! alignment, and grouping length of the bottom-group baseline.
//!
//! All sweeps share one question-level split (fixed by `split_seed`), so
//! every method at a grid point is evaluated on the same test traces. The
//! `seeds` list only varies estimator initialization and batch order.
//! Grid points and seeds run as independent jobs on up to `workers`
//! threads; results are merged in job order, so the worker count never
//! changes any number.

mod plot;
mod report;
mod sweeps;

use serde::{Deserialize, Serialize};
use trajconf_core::dataset::SplitFractions;
use trajconf_core::estimator::EstimatorConfig;
use trajconf_core::math;

pub use plot::{line_plot, plot_frame, PlotFrame, Series};
pub use report::{emit_report, records_csv, summary_csv, ReportFiles};
pub use sweeps::{grouping_length_sweep, head_tail_comparison, length_sweep, run_sweep, window_position_analysis};

/// The grid used throughout for lengths and grouping lengths.
pub const DEFAULT_GRID: [usize; 10] = [4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    Length,
    Position,
    HeadTail,
    Grouping,
}

impl SweepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepKind::Length => "length",
            SweepKind::Position => "position",
            SweepKind::HeadTail => "head-tail",
            SweepKind::Grouping => "grouping",
        }
    }

    fn grid_label(self) -> &'static str {
        match self {
            SweepKind::Length | SweepKind::HeadTail => "L_max",
            SweepKind::Position => "distance from end",
            SweepKind::Grouping => "grouping length",
        }
    }
}

/// Whether the estimator is retrained at every grid point or trained once
/// per seed (at the largest grid length) and re-evaluated everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointPolicy {
    Retrain,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub kind: SweepKind,
    /// Lengths, or grouping lengths. Unused by the position sweep, whose
    /// buckets come from the data.
    pub grid: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Template; `l_max` and `seed` are set per job.
    pub estimator: EstimatorConfig,
    pub policy: CheckpointPolicy,
    pub split: SplitFractions,
    pub split_seed: u64,
    /// Traces shorter than this are removed before splitting (0 keeps all).
    pub min_length: usize,
    pub window: usize,
    pub window_stride: usize,
    /// Position sweep: one model on all windows instead of one per bucket.
    pub share_position_model: bool,
    /// Position sweep: drop traces shorter than one window.
    pub drop_short: bool,
    pub bottom_fraction: f64,
    pub group_stride: usize,
    /// Score cut-off for threshold accuracy.
    pub threshold: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            kind: SweepKind::Length,
            grid: DEFAULT_GRID.to_vec(),
            seeds: vec![0, 1, 2, 3, 4],
            estimator: EstimatorConfig::default(),
            policy: CheckpointPolicy::Retrain,
            split: SplitFractions::default(),
            split_seed: 0,
            min_length: 0,
            window: 64,
            window_stride: 32,
            share_position_model: false,
            drop_short: false,
            bottom_fraction: 0.10,
            group_stride: 1,
            threshold: 0.5,
        }
    }
}

/// One evaluation of one method at one grid point (and seed, if the method
/// is seeded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub grid_value: usize,
    pub method: String,
    pub seed: Option<u64>,
    pub auc: Option<f64>,
    pub dbi: Option<f64>,
    pub threshold_accuracy: Option<f64>,
    pub n_test: usize,
    pub n_positive: usize,
    pub best_epoch: Option<usize>,
    pub val_auc: Option<f64>,
}

/// Mean and sample standard deviation (n - 1) of the defined values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Option<Self> {
        let v: Vec<f64> = values.into_iter().flatten().collect();
        Some(Self {
            mean: math::mean(&v)?,
            sd: math::sample_std(&v),
            n: v.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub grid_value: usize,
    pub method: String,
    pub records: usize,
    pub auc: Option<Stat>,
    pub dbi: Option<Stat>,
    pub threshold_accuracy: Option<Stat>,
}

/// Training and test population of one position bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketPopulation {
    pub position: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridNote {
    pub grid_value: usize,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub records: Vec<SweepRecord>,
    pub summary: Vec<SummaryRow>,
    /// Grid points that were processed but deserve a caveat.
    pub flags: Vec<GridNote>,
    /// Grid points that could not be evaluated.
    pub skipped: Vec<GridNote>,
    pub populations: Vec<BucketPopulation>,
    pub test_traces: usize,
}

/// Groups records by (grid value, method) in first-appearance order.
pub fn summarize(records: &[SweepRecord]) -> Vec<SummaryRow> {
    let mut keys: Vec<(usize, &str)> = Vec::new();
    for r in records {
        let k = (r.grid_value, r.method.as_str());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(g, m)| {
            let rs: Vec<&SweepRecord> = records
                .iter()
                .filter(|r| r.grid_value == g && r.method == m)
                .collect();
            SummaryRow {
                grid_value: g,
                method: m.to_owned(),
                records: rs.len(),
                auc: Stat::of(rs.iter().map(|r| r.auc)),
                dbi: Stat::of(rs.iter().map(|r| r.dbi)),
                threshold_accuracy: Stat::of(rs.iter().map(|r| r.threshold_accuracy)),
            }
        })
        .collect()
}

impl SweepResult {
    pub fn summary_for(&self, method: &str, grid_value: usize) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|s| s.method == method && s.grid_value == grid_value)
    }

    pub fn methods(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.method.as_str()) {
                out.push(&r.method);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(g: usize, m: &str, auc: Option<f64>) -> SweepRecord {
        SweepRecord {
            grid_value: g,
            method: m.into(),
            seed: None,
            auc,
            dbi: None,
            threshold_accuracy: None,
            n_test: 0,
            n_positive: 0,
            best_epoch: None,
            val_auc: None,
        }
    }

    #[test]
    fn summary_uses_sample_sd() {
        let rs = [
            rec(4, "a", Some(0.6)),
            rec(4, "a", Some(0.8)),
            rec(4, "b", Some(0.5)),
            rec(8, "a", None),
        ];
        let s = summarize(&rs);
        assert_eq!(s.len(), 3);
        let a = s[0].auc.unwrap();
        assert!((a.mean - 0.7).abs() < 1e-15);
        assert!((a.sd - (0.02f64).sqrt()).abs() < 1e-15);
        assert_eq!(s[1].auc.unwrap().sd, 0.0);
        assert_eq!(s[2].auc, None);
        assert_eq!(s[2].records, 1);
    }
}
