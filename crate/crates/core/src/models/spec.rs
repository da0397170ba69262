use std::fmt;
use std::str::FromStr;

use super::ModelError;
use crate::tensor::TemporalPadding;

pub const NUM_STAGES: usize = 5;
pub const RGB_CHANNELS: usize = 3;
/// Dense MV (dx, dy) plus residual RGB.
pub const MR_CHANNELS: usize = 5;
pub const FLOW_CHANNELS: usize = 2;

/// Declarative residual-network layout.
///
/// Stage 1 is a conv-BN-ReLU stem followed by a 2x2 max pool, stages 2..=5
/// are residual stages. `inflate_at = Some(k)` makes every stage after `k`
/// three-dimensional, and `Some(1)` makes the whole network 3D including the
/// stem; `Some(5)` and `None` are both purely 2D.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub stage_widths: [usize; NUM_STAGES],
    pub blocks_per_stage: [usize; NUM_STAGES],
    pub input_channels: usize,
    pub inflate_at: Option<usize>,
    pub num_classes: usize,
    /// Temporal extent of 3D kernels.
    pub temporal_kernel: usize,
    pub temporal_padding: TemporalPadding,
}

impl NetworkSpec {
    pub fn i_stream(num_classes: usize) -> Self {
        Self {
            stage_widths: [16, 32, 64, 128, 256],
            blocks_per_stage: [2; NUM_STAGES],
            input_channels: RGB_CHANNELS,
            inflate_at: None,
            num_classes,
            temporal_kernel: 3,
            temporal_padding: TemporalPadding::Zero,
        }
    }

    pub fn p_stream(num_classes: usize) -> Self {
        Self {
            stage_widths: [8, 16, 32, 64, 128],
            blocks_per_stage: [1; NUM_STAGES],
            input_channels: MR_CHANNELS,
            inflate_at: Some(3),
            num_classes,
            temporal_kernel: 3,
            temporal_padding: TemporalPadding::Zero,
        }
    }

    /// Same topology as the P-stream, fed with stacked flow.
    pub fn of_teacher(num_classes: usize) -> Self {
        Self {
            input_channels: FLOW_CHANNELS,
            ..Self::p_stream(num_classes)
        }
    }

    pub fn with_inflate_at(mut self, inflate_at: Option<usize>) -> Self {
        self.inflate_at = inflate_at;
        self
    }

    /// `stage` is 1-based.
    pub fn stage_is_3d(&self, stage: usize) -> bool {
        match self.inflate_at {
            None => false,
            Some(1) => true,
            Some(k) => stage > k,
        }
    }

    pub fn first_3d_stage(&self) -> Option<usize> {
        (1..=NUM_STAGES).find(|&s| self.stage_is_3d(s))
    }

    /// Temporal downsampling factor of the whole network. The first 3D
    /// stage halves the time axis; nothing else touches it.
    pub fn temporal_stride(&self) -> usize {
        if self.first_3d_stage().is_some() {
            2
        } else {
            1
        }
    }

    pub fn feature_width(&self) -> usize {
        self.stage_widths[NUM_STAGES - 1]
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Spec(m));
        if self.stage_widths.contains(&0) || self.blocks_per_stage.contains(&0) {
            return err("stage widths and block counts must be positive".into());
        }
        if self.input_channels == 0 || self.num_classes == 0 {
            return err("input channels and class count must be positive".into());
        }
        if let Some(k) = self.inflate_at {
            if !(1..=NUM_STAGES).contains(&k) {
                return err(format!("inflate_at must be in 1..=5 or none, got {k}"));
            }
        }
        if self.temporal_kernel == 0 || self.temporal_kernel % 2 == 0 {
            return err(format!("temporal kernel must be odd, got {}", self.temporal_kernel));
        }
        Ok(())
    }

    /// `key=value` pairs separated by spaces; round-trips through `FromStr`.
    pub fn descriptor(&self) -> String {
        self.to_string()
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inflate = self.inflate_at.map_or("none".to_string(), |k| k.to_string());
        let tpad = match self.temporal_padding {
            TemporalPadding::Zero => "zero",
            TemporalPadding::Replicate => "replicate",
        };
        write!(
            f,
            "widths={} blocks={} in={} inflate_at={} classes={} kt={} tpad={}",
            join(&self.stage_widths),
            join(&self.blocks_per_stage),
            self.input_channels,
            inflate,
            self.num_classes,
            self.temporal_kernel,
            tpad
        )
    }
}

pub fn parse_inflate_at(s: &str) -> Result<Option<usize>, ModelError> {
    if s == "none" {
        return Ok(None);
    }
    match s.parse::<usize>() {
        Ok(k) if (1..=NUM_STAGES).contains(&k) => Ok(Some(k)),
        _ => Err(ModelError::Spec(format!("inflate_at must be 1..=5 or none, got `{s}`"))),
    }
}

impl FromStr for NetworkSpec {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        let bad = |m: String| ModelError::Spec(m);
        let five = |v: &str| -> Result<[usize; NUM_STAGES], ModelError> {
            let parts: Vec<usize> = v
                .split(',')
                .map(|p| p.parse().map_err(|_| bad(format!("bad list `{v}`"))))
                .collect::<Result<_, _>>()?;
            parts.try_into().map_err(|_| bad(format!("expected {NUM_STAGES} values in `{v}`")))
        };
        let num = |v: &str| v.parse::<usize>().map_err(|_| bad(format!("bad number `{v}`")));
        let (mut widths, mut blocks, mut input, mut classes) = (None, None, None, None);
        let mut inflate_at = None;
        let mut kt = 3;
        let mut tpad = TemporalPadding::Zero;
        for pair in s.split_whitespace() {
            let (k, v) = pair.split_once('=').ok_or_else(|| bad(format!("expected key=value, got `{pair}`")))?;
            match k {
                "widths" => widths = Some(five(v)?),
                "blocks" => blocks = Some(five(v)?),
                "in" => input = Some(num(v)?),
                "inflate_at" => inflate_at = parse_inflate_at(v)?,
                "classes" => classes = Some(num(v)?),
                "kt" => kt = num(v)?,
                "tpad" => {
                    tpad = match v {
                        "zero" => TemporalPadding::Zero,
                        "replicate" => TemporalPadding::Replicate,
                        _ => return Err(bad(format!("unknown temporal padding `{v}`"))),
                    }
                }
                _ => return Err(bad(format!("unknown key `{k}`"))),
            }
        }
        let missing = |k: &str| bad(format!("descriptor lacks `{k}`"));
        let spec = NetworkSpec {
            stage_widths: widths.ok_or_else(|| missing("widths"))?,
            blocks_per_stage: blocks.ok_or_else(|| missing("blocks"))?,
            input_channels: input.ok_or_else(|| missing("in"))?,
            inflate_at,
            num_classes: classes.ok_or_else(|| missing("classes"))?,
            temporal_kernel: kt,
            temporal_padding: tpad,
        };
        spec.validate()?;
        Ok(spec)
    }
}
