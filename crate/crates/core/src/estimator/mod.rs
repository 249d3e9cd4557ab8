//! The learned trajectory readout.
//!
//! A tail-aligned trajectory is standardized with training-set statistics,
//! passed through a 1-channel stem convolution and a stack of residual
//! blocks (`relu(h + mask * conv(mask * relu(mask * conv(h))))`), pooled by a
//! masked mean into the trace embedding, and mapped by a two-layer head to a
//! correctness score in (0, 1). Gradients are derived by hand; see
//! [`network`].

mod loss;
pub mod network;
mod train;

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::math;
use crate::trajectory::AlignedTrajectory;
use crate::{Error, Result};

pub use loss::{bce_logit_gradient, weighted_bce, ClassWeights, PROB_CLAMP};
pub use network::{ParamLayout, TensorSpec, Workspace};
pub use train::{
    head_examples, loss_and_gradient, tail_examples, train, EpochLog, TrainingExample,
    TrainingOutcome,
};

/// Version of the parameter layout and initialization contract.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub l_max: usize,
    pub channels: usize,
    pub blocks: usize,
    pub kernel: usize,
    pub head_hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl EstimatorConfig {
    pub fn new(l_max: usize) -> Self {
        Self {
            l_max,
            channels: 32,
            blocks: 2,
            kernel: 5,
            head_hidden: 32,
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("l_max", self.l_max),
            ("channels", self.channels),
            ("kernel", self.kernel),
            ("head_hidden", self.head_hidden),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::param(name, "must be at least 1"));
            }
        }
        if self.kernel % 2 == 0 {
            return Err(Error::param("kernel", "must be odd for symmetric padding"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("learning_rate", "must be positive"));
        }
        Ok(())
    }
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self::new(2048)
    }
}

/// Standardization applied to valid input positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            mean: 0.0,
            std: 1.0,
        }
    }
}

impl Normalization {
    /// Mean and population standard deviation over the valid positions of
    /// `inputs`. Degenerate spread falls back to `std = 1`.
    pub fn fit<'a>(inputs: impl IntoIterator<Item = &'a AlignedTrajectory>) -> Self {
        let mut n = 0usize;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for a in inputs {
            for (&v, &m) in a.values().iter().zip(a.mask()) {
                if m {
                    n += 1;
                    sum += v;
                    sq += v * v;
                }
            }
        }
        if n == 0 {
            return Self::default();
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        let std = math::sqrt(var);
        Self {
            mean,
            std: if std > 1e-12 && std.is_finite() { std } else { 1.0 },
        }
    }
}

/// Score and embedding of one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceOutput {
    pub score: f64,
    pub logit: f64,
    pub embedding: Vec<f64>,
}

/// Score, embedding and id of one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceScore {
    pub trace_id: String,
    pub score: f64,
    pub embedding: Vec<f64>,
}

/// Everything needed to score a trace: architecture, learned parameters and
/// input standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorCheckpoint {
    config: EstimatorConfig,
    normalization: Normalization,
    params: Vec<f64>,
}

impl EstimatorCheckpoint {
    /// Fresh parameters: fan-in scaled uniform weights (`+-sqrt(6 / fan_in)`
    /// for ReLU layers, `+-1 / sqrt(fan_in)` for the output unit) and zero
    /// biases, drawn from a ChaCha8 stream seeded with `config.seed`.
    pub fn initialize(config: EstimatorConfig, normalization: Normalization) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let mut params = alloc::vec![0.0; layout.total()];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let c = config.channels;
        let k = config.kernel;
        let mut fill = |range: core::ops::Range<usize>, bound: f64| {
            for p in &mut params[range] {
                *p = rng.random_range(-bound..bound);
            }
        };
        let he = |fan_in: usize| math::sqrt(6.0 / fan_in as f64);
        fill(layout.stem_w..layout.stem_w + c * k, he(k));
        for b in &layout.blocks {
            fill(b.w1..b.w1 + c * c * k, he(c * k));
            fill(b.w2..b.w2 + c * c * k, he(c * k));
        }
        fill(layout.head_w1..layout.head_w1 + config.head_hidden * c, he(c));
        fill(
            layout.head_w2..layout.head_w2 + config.head_hidden,
            1.0 / math::sqrt(config.head_hidden as f64),
        );
        Self::from_parts(config, normalization, params)
    }

    pub fn from_parts(
        config: EstimatorConfig,
        normalization: Normalization,
        params: Vec<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let expected = ParamLayout::new(&config).total();
        if params.len() != expected {
            return Err(Error::Shape {
                expected,
                actual: params.len(),
            });
        }
        if !(normalization.std > 0.0 && normalization.std.is_finite())
            || !normalization.mean.is_finite()
        {
            return Err(Error::param("normalization", "std must be positive and finite"));
        }
        Ok(Self {
            config,
            normalization,
            params,
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(&self.config)
    }

    /// Parameter tensors with their names and shapes.
    pub fn tensors(&self) -> Vec<(TensorSpec, &[f64])> {
        self.layout()
            .tensors()
            .iter()
            .map(|t| (t.clone(), &self.params[t.range()]))
            .collect()
    }

    /// The same parameters applied to inputs of a different length. The
    /// encoder is length-agnostic, so only the input contract changes.
    pub fn with_l_max(&self, l_max: usize) -> Result<Self> {
        let mut config = self.config.clone();
        config.l_max = l_max;
        config.validate()?;
        Ok(Self {
            config,
            ..self.clone()
        })
    }

    pub fn forward(&self, aligned: &AlignedTrajectory) -> Result<TraceOutput> {
        let mut ws = Workspace::default();
        self.forward_with(&self.layout(), aligned, &mut ws)
    }

    /// Forward pass reusing caller-provided buffers.
    pub fn forward_with(
        &self,
        layout: &ParamLayout,
        aligned: &AlignedTrajectory,
        ws: &mut Workspace,
    ) -> Result<TraceOutput> {
        if aligned.len() != self.config.l_max {
            return Err(Error::Shape {
                expected: self.config.l_max,
                actual: aligned.len(),
            });
        }
        let logit = network::forward(
            layout,
            &self.params,
            self.normalization.mean,
            self.normalization.std,
            aligned.values(),
            aligned.mask(),
            ws,
        );
        Ok(TraceOutput {
            score: network::score_from_logit(logit),
            logit,
            embedding: ws.embedding().to_vec(),
        })
    }

    pub fn score_all<'a>(
        &self,
        inputs: impl IntoIterator<Item = &'a AlignedTrajectory>,
    ) -> Result<Vec<TraceOutput>> {
        let layout = self.layout();
        let mut ws = Workspace::default();
        inputs
            .into_iter()
            .map(|a| self.forward_with(&layout, a, &mut ws))
            .collect()
    }
}
