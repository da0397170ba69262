//! Staged training, evaluation and late fusion.

mod dataset;
mod eval;
mod schedule;
mod train;

pub use dataset::{Dataset, InputKind, LoadedVideo, FLOW_CACHE_DIR};
pub use eval::{evaluate, evaluate_scores, EvalReport, StreamScorer};
pub use schedule::{
    load_stage_network, prerequisites, run_baseline, run_stage, run_training_schedule, save_stage, stage_checkpoint_path,
    train_i_stream, Role, StageInputs, StageResult, TRAIN_LOG_FILE,
};
pub use train::{train_network, EpochLog, TrainTarget};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codec::CodecError;
use crate::data::{ClipGeometry, DataError, Split};
use crate::distill::LossConfig;
use crate::flow::{FlowError, FlowParams};
use crate::models::ModelError;
use crate::tensor::{softmax_values, InflationMode, SgdConfig, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stage {stage} needs the {what} checkpoint, which is missing")]
    MissingCheckpoint { stage: Stage, what: String },
    #[error("stage {stage} diverged at epoch {epoch}: loss is {loss}")]
    Diverged { stage: Stage, epoch: usize, loss: f64 },
    #[error("the {0} split is empty")]
    EmptySplit(Split),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Training stages. `A` to `E` form the P-stream schedule; the I-stream is
/// trained on its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    /// A: 2D MV+R student, cross-entropy only.
    Mr2d,
    /// B: 2D flow teacher, cross-entropy only.
    Of2d,
    /// C: 2D distillation of A against frozen B.
    Distill2d,
    /// D: inflated student and teacher, each with cross-entropy.
    InflateTrain,
    /// E: 2D-3D distillation against the frozen inflated teacher.
    Distill3d,
    IStream,
}

/// The P-stream schedule in execution order.
pub const SCHEDULE: [Stage; 5] = [Stage::Mr2d, Stage::Of2d, Stage::Distill2d, Stage::InflateTrain, Stage::Distill3d];

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Mr2d => "mr2d",
            Stage::Of2d => "of2d",
            Stage::Distill2d => "distill2d",
            Stage::InflateTrain => "inflate",
            Stage::Distill3d => "distill3d",
            Stage::IStream => "istream",
        }
    }

    /// Schedule letter, `I` for the I-stream.
    pub fn letter(self) -> char {
        match self {
            Stage::Mr2d => 'A',
            Stage::Of2d => 'B',
            Stage::Distill2d => 'C',
            Stage::InflateTrain => 'D',
            Stage::Distill3d => 'E',
            Stage::IStream => 'I',
        }
    }

    fn tag(self) -> u64 {
        0x57A6E0 + self as u64
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.letter(), self.name())
    }
}

impl FromStr for Stage {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        SCHEDULE
            .iter()
            .chain(&[Stage::IStream])
            .copied()
            .find(|st| st.name() == s || st.letter().to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| PipelineError::Config(format!("unknown stage `{s}`")))
    }
}

/// Step decay: the rate is multiplied by `gamma` once each milestone
/// (a fraction of the total epochs) has passed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr: f64,
    pub milestones: Vec<f64>,
    pub gamma: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            lr: 0.01,
            milestones: vec![0.5, 0.75],
            gamma: 0.1,
        }
    }
}

impl LrSchedule {
    pub fn rate(&self, epoch: usize, epochs: usize) -> f64 {
        let passed = self
            .milestones
            .iter()
            .filter(|&&m| epoch >= (m * epochs as f64).round() as usize)
            .count();
        self.lr * self.gamma.powi(passed as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Used by the distillation stages; every other stage trains with
    /// cross-entropy alone.
    pub loss: LossConfig,
    /// Where the 2D-3D networks switch to 3D.
    pub inflate_at: Option<usize>,
    pub inflation: InflationMode,
    /// Clip length of the P-stream and its teacher.
    pub segments: usize,
    /// I-frames per video while training the I-stream.
    pub i_segments: usize,
    pub geometry: ClipGeometry,
    pub augment: bool,
    /// Solver settings for the teacher's flow.
    pub flow: FlowParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Mr2d,
            epochs: 20,
            schedule: LrSchedule::default(),
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 8,
            seed: 0,
            loss: LossConfig::default(),
            inflate_at: Some(3),
            inflation: InflationMode::Mean,
            segments: 16,
            i_segments: 4,
            geometry: ClipGeometry::default(),
            augment: true,
            flow: dataset_flow_params(),
        }
    }
}

/// Solver settings for bulk flow extraction over a dataset: fewer
/// iterations, and a smoothness weight close to the usual TV-L1 strength
/// for 8-bit video so moving sprites keep their outline.
pub fn dataset_flow_params() -> FlowParams {
    FlowParams {
        lambda_tv: 0.02,
        outer_warps: 5,
        inner_iterations: 10,
        pyramid_levels: 3,
        ..FlowParams::default()
    }
}

impl TrainConfig {
    pub fn for_stage(&self, stage: Stage) -> Self {
        Self { stage, ..self.clone() }
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            lr: self.schedule.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.epochs == 0 || self.batch_size == 0 || self.segments == 0 || self.i_segments == 0 {
            return bad("epochs, batch size and segment counts must be positive".into());
        }
        if !(self.schedule.lr > 0.0 && self.schedule.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.schedule.lr));
        }
        self.loss.validate()?;
        self.geometry.validate()?;
        self.flow.validate()?;
        Ok(())
    }

    /// Human-readable dump of every setting, for logs.
    pub fn describe(&self) -> String {
        format!("{self:?}")
    }
}

/// Weights of the I- and P-stream scores in late fusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub w_i: f64,
    pub w_p: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { w_i: 1.0, w_p: 1.0 }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |w: f64| w >= 0.0 && w.is_finite();
        if !ok(self.w_i) || !ok(self.w_p) || self.w_i + self.w_p <= 0.0 {
            return Err(PipelineError::Config(format!(
                "fusion weights ({}, {}) must be non-negative and not both zero",
                self.w_i, self.w_p
            )));
        }
        Ok(())
    }
}

impl FromStr for FusionConfig {
    type Err = PipelineError;

    /// `"w_i,w_p"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| PipelineError::Config(format!("bad weight `{t}`"))))
            .collect::<Result<_>>()?;
        let [w_i, w_p] = parts[..] else {
            return Err(PipelineError::Config(format!("expected two weights, got `{s}`")));
        };
        let cfg = Self { w_i, w_p };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Softmax of each stream's scores, then the weighted sum
/// `(w_i * s_i + w_p * s_p) / (w_i + w_p)`, which stays a distribution.
pub fn late_fuse(scores_i: &[f64], scores_p: &[f64], cfg: &FusionConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if scores_i.len() != scores_p.len() || scores_i.is_empty() {
        return Err(PipelineError::Config(format!(
            "stream scores have lengths {} and {}",
            scores_i.len(),
            scores_p.len()
        )));
    }
    let k = scores_i.len();
    let (si, sp) = (softmax_values(scores_i, k), softmax_values(scores_p, k));
    let total = cfg.w_i + cfg.w_p;
    Ok(si.iter().zip(&sp).map(|(a, b)| (cfg.w_i * a + cfg.w_p * b) / total).collect())
}

/// Index of the largest score; the first one wins ties.
pub fn argmax(scores: &[f64]) -> usize {
    scores
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

