use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{train_network, Dataset, EpochLog, InputKind, PipelineError, Result, Stage, TrainConfig, TrainTarget, SCHEDULE};
use crate::data::Split;
use crate::distill::LossConfig;
use crate::models::{build_i_stream, build_of_teacher, build_p_stream, Network, NetworkSpec};
use crate::seed::derive_seed;
use crate::tensor::Checkpoint;
use crate::Scalar;

pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Student,
    Teacher,
}

/// Networks produced by one stage and its per-epoch log.
#[derive(Debug)]
pub struct StageResult<T: Scalar> {
    pub stage: Stage,
    pub networks: Vec<(Role, Network<T>)>,
    pub log: Vec<EpochLog>,
}

impl<T: Scalar> StageResult<T> {
    pub fn network(&self, role: Role) -> Option<&Network<T>> {
        self.networks.iter().find(|(r, _)| *r == role).map(|(_, n)| n)
    }
}

/// Networks a stage starts from.
#[derive(Debug, Clone, Copy)]
pub struct StageInputs<'a, T: Scalar> {
    pub student: Option<&'a Network<T>>,
    pub teacher: Option<&'a Network<T>>,
}

impl<T: Scalar> Default for StageInputs<'_, T> {
    fn default() -> Self {
        Self { student: None, teacher: None }
    }
}

/// `(stage, role)` outputs that `stage` starts from, student first.
pub fn prerequisites(stage: Stage) -> Vec<(Stage, Role)> {
    match stage {
        Stage::Mr2d | Stage::Of2d | Stage::IStream => vec![],
        Stage::Distill2d => vec![(Stage::Mr2d, Role::Student), (Stage::Of2d, Role::Teacher)],
        Stage::InflateTrain => vec![(Stage::Distill2d, Role::Student), (Stage::Of2d, Role::Teacher)],
        Stage::Distill3d => vec![(Stage::InflateTrain, Role::Student), (Stage::InflateTrain, Role::Teacher)],
    }
}

pub fn stage_checkpoint_path(dir: &Path, stage: Stage, role: Role) -> PathBuf {
    match (stage, role) {
        (Stage::InflateTrain, Role::Teacher) => dir.join("inflate_teacher.ckpt"),
        _ => dir.join(format!("{}.ckpt", stage.name())),
    }
}

pub fn load_stage_network<T: Scalar>(dir: &Path, stage: Stage, role: Role, needed_by: Stage) -> Result<Network<T>> {
    let path = stage_checkpoint_path(dir, stage, role);
    if !path.exists() {
        return Err(PipelineError::MissingCheckpoint {
            stage: needed_by,
            what: path.display().to_string(),
        });
    }
    Ok(Network::from_checkpoint(&Checkpoint::load(path)?)?)
}

fn init_seed(cfg: &TrainConfig, stage: Stage, role: Role) -> u64 {
    derive_seed(cfg.seed, &[stage.tag(), role as u64, 0x1417])
}

fn require<'a, T: Scalar>(net: Option<&'a Network<T>>, stage: Stage, what: &str) -> Result<&'a Network<T>> {
    net.ok_or_else(|| PipelineError::MissingCheckpoint {
        stage,
        what: what.into(),
    })
}

/// Runs one stage. Teacher networks handed in through `inputs` are read,
/// never modified; stages that change a network train a copy.
pub fn run_stage<T: Scalar>(stage: Stage, cfg: &TrainConfig, data: &mut Dataset, inputs: StageInputs<'_, T>) -> Result<StageResult<T>> {
    let cfg = cfg.for_stage(stage);
    cfg.validate()?;
    let k = data.num_classes();
    let student_spec = NetworkSpec::p_stream(k).with_inflate_at(None);
    let needs_flow = match stage {
        Stage::Of2d | Stage::InflateTrain => true,
        Stage::Distill2d | Stage::Distill3d => cfg.loss.needs_teacher(),
        _ => false,
    };
    if needs_flow {
        data.prepare_flows(Split::Train, &cfg.flow, true)?;
    }
    let supervised = LossConfig::supervised();
    let target = |role, net, input, teacher, loss| TrainTarget {
        stage,
        role,
        net,
        input,
        teacher,
        loss,
    };
    let mut log = Vec::new();
    let networks = match stage {
        Stage::Mr2d => {
            let net = build_p_stream(&student_spec, init_seed(&cfg, stage, Role::Student))?;
            log = train_network(&target(Role::Student, &net, InputKind::MotionResidual, None, supervised), data, &cfg)?;
            vec![(Role::Student, net)]
        }
        Stage::Of2d => {
            let spec = NetworkSpec::of_teacher(k).with_inflate_at(None);
            let net = build_of_teacher(&spec, &student_spec, false, init_seed(&cfg, stage, Role::Teacher))?;
            log = train_network(&target(Role::Teacher, &net, InputKind::Flow, None, supervised), data, &cfg)?;
            vec![(Role::Teacher, net)]
        }
        Stage::Distill2d | Stage::Distill3d => {
            let net = require(inputs.student, stage, "student")?.deep_clone();
            let teacher = if cfg.loss.needs_teacher() {
                Some((require(inputs.teacher, stage, "teacher")?, InputKind::Flow))
            } else {
                None
            };
            log = train_network(&target(Role::Student, &net, InputKind::MotionResidual, teacher, cfg.loss), data, &cfg)?;
            vec![(Role::Student, net)]
        }
        Stage::InflateTrain => {
            let student = require(inputs.student, stage, "student")?.inflate(cfg.inflate_at, cfg.inflation)?;
            let teacher = require(inputs.teacher, stage, "teacher")?.inflate(cfg.inflate_at, cfg.inflation)?;
            for (role, net, input) in [
                (Role::Student, &student, InputKind::MotionResidual),
                (Role::Teacher, &teacher, InputKind::Flow),
            ] {
                log.extend(train_network(&target(role, net, input, None, supervised), data, &cfg)?);
            }
            vec![(Role::Student, student), (Role::Teacher, teacher)]
        }
        Stage::IStream => {
            let net = build_i_stream(&NetworkSpec::i_stream(k), init_seed(&cfg, stage, Role::Student))?;
            log = train_network(&target(Role::Student, &net, InputKind::Rgb, None, supervised), data, &cfg)?;
            vec![(Role::Student, net)]
        }
    };
    Ok(StageResult { stage, networks, log })
}

/// Writes every network of `result` and appends its log to `dir`.
pub fn save_stage<T: Scalar>(dir: &Path, result: &StageResult<T>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (role, net) in &result.networks {
        net.to_checkpoint().save(stage_checkpoint_path(dir, result.stage, *role))?;
    }
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(dir.join(TRAIN_LOG_FILE))?;
    for line in &result.log {
        writeln!(file, "{}", serde_json::to_string(line).map_err(std::io::Error::other)?)?;
    }
    Ok(())
}

/// Stages A to E in order, each starting from its prerequisites. With
/// `out_dir`, every stage's checkpoints and log lines are written there.
pub fn run_training_schedule<T: Scalar>(cfg: &TrainConfig, data: &mut Dataset, out_dir: Option<&Path>) -> Result<Vec<StageResult<T>>> {
    let mut results: Vec<StageResult<T>> = Vec::with_capacity(SCHEDULE.len());
    for stage in SCHEDULE {
        let find = |(s, role): (Stage, Role)| results.iter().find(|r| r.stage == s).and_then(|r| r.network(role));
        let pre = prerequisites(stage);
        let inputs = StageInputs {
            student: pre.first().copied().and_then(find),
            teacher: pre.get(1).copied().and_then(find),
        };
        let result = run_stage(stage, cfg, data, inputs)?;
        if let Some(dir) = out_dir {
            save_stage(dir, &result)?;
        }
        results.push(result);
    }
    Ok(results)
}

/// The no-distillation reference for a schedule: stage D's student trained
/// on with cross-entropy alone for stage E's epochs, with stage E's batches
/// and augmentation.
pub fn run_baseline<T: Scalar>(cfg: &TrainConfig, data: &mut Dataset, stage_d: &Network<T>) -> Result<StageResult<T>> {
    let cfg = TrainConfig {
        loss: LossConfig::supervised(),
        ..cfg.clone()
    };
    run_stage(Stage::Distill3d, &cfg, data, StageInputs { student: Some(stage_d), teacher: None })
}

pub fn train_i_stream<T: Scalar>(cfg: &TrainConfig, data: &mut Dataset) -> Result<StageResult<T>> {
    run_stage(Stage::IStream, cfg, data, StageInputs::default())
}
