use serde::{Deserialize, Serialize};

use super::{argmax, late_fuse, Dataset, FusionConfig, InputKind, PipelineError, Result};
use crate::data::{tsn_sample, Augment, ClipGeometry, SampleMode, Split};
use crate::models::{mean_frame_logits, Network};
use crate::Scalar;

/// Class scores of video `idx` (an index into [`Dataset::videos`]).
pub type StreamScorer<'a> = &'a dyn Fn(usize) -> Result<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub videos: usize,
    /// Top-1 accuracy in percent, `None` for a stream that was not given.
    pub top1_i: Option<f64>,
    pub top1_p: Option<f64>,
    /// The fused prediction, or the only stream's prediction.
    pub top1_fused: f64,
    pub fusion: Option<FusionConfig>,
    /// `confusion[true][predicted]` of the fused prediction.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    /// Fused accuracy over the videos whose true class is in `classes`.
    pub fn top1_over(&self, classes: &[usize]) -> f64 {
        let (hit, total) = classes.iter().fold((0, 0), |(h, t), &c| {
            let row = &self.confusion[c];
            (h + row[c], t + row.iter().sum::<usize>())
        });
        if total == 0 { 0.0 } else { 100.0 * hit as f64 / total as f64 }
    }
}

fn percent(hit: usize, n: usize) -> f64 {
    100.0 * hit as f64 / n as f64
}

/// Scores every video of `split` with the given streams and fuses them
/// when both are present.
pub fn evaluate_scores(
    data: &Dataset,
    split: Split,
    scorer_i: Option<StreamScorer<'_>>,
    scorer_p: Option<StreamScorer<'_>>,
    fusion: &FusionConfig,
) -> Result<EvalReport> {
    let ids = data.indices(split);
    if ids.is_empty() {
        return Err(PipelineError::EmptySplit(split));
    }
    if scorer_i.is_none() && scorer_p.is_none() {
        return Err(PipelineError::Config("evaluation needs at least one stream".into()));
    }
    let both = scorer_i.is_some() && scorer_p.is_some();
    if both {
        fusion.validate()?;
    }
    let k = data.num_classes();
    let mut confusion = vec![vec![0usize; k]; k];
    let (mut hit_i, mut hit_p, mut hit_f) = (0, 0, 0);
    for &idx in &ids {
        let label = data.videos[idx].label();
        let si = scorer_i.map(|f| f(idx)).transpose()?;
        let sp = scorer_p.map(|f| f(idx)).transpose()?;
        for s in si.iter().chain(&sp) {
            if s.len() != k {
                return Err(PipelineError::Config(format!("scorer returned {} scores for {k} classes", s.len())));
            }
        }
        hit_i += si.as_ref().map_or(0, |s| usize::from(argmax(s) == label));
        hit_p += sp.as_ref().map_or(0, |s| usize::from(argmax(s) == label));
        let fused = match (&si, &sp) {
            (Some(a), Some(b)) => argmax(&late_fuse(a, b, fusion)?),
            (Some(s), None) | (None, Some(s)) => argmax(s),
            (None, None) => unreachable!(),
        };
        hit_f += usize::from(fused == label);
        confusion[label][fused] += 1;
    }
    let n = ids.len();
    Ok(EvalReport {
        split: split.to_string(),
        videos: n,
        top1_i: scorer_i.map(|_| percent(hit_i, n)),
        top1_p: scorer_p.map(|_| percent(hit_p, n)),
        top1_fused: percent(hit_f, n),
        fusion: both.then_some(*fusion),
        confusion,
    })
}

/// Centre-crop, uniformly sampled evaluation. The I-stream scores a video by
/// its mean frame logits over `segments` I-frames; the P-stream by one
/// `segments`-frame clip.
pub fn evaluate<T: Scalar>(
    data: &Dataset,
    split: Split,
    i_net: Option<&Network<T>>,
    p_net: Option<&Network<T>>,
    fusion: &FusionConfig,
    segments: usize,
    geometry: &ClipGeometry,
) -> Result<EvalReport> {
    let aug = Augment::center(geometry);
    let score_i = |idx: usize| -> Result<Vec<f64>> {
        let net = i_net.expect("scorer only built with a network");
        let plan = tsn_sample(&data.videos[idx].video, segments, SampleMode::Uniform, 0)?;
        let x: crate::tensor::Tensor<T> = data.input(idx, InputKind::Rgb, &plan, geometry, &aug)?;
        let logits = net.forward(&x, false)?.logits;
        Ok(mean_frame_logits(&logits)?.iter().map(|v| v.as_f64()).collect())
    };
    let score_p = |idx: usize| -> Result<Vec<f64>> {
        let net = p_net.expect("scorer only built with a network");
        let plan = tsn_sample(&data.videos[idx].video, segments, SampleMode::Uniform, 0)?;
        let x: crate::tensor::Tensor<T> = data.input(idx, InputKind::MotionResidual, &plan, geometry, &aug)?;
        Ok(net.forward(&x, false)?.logits.to_f64_vec())
    };
    evaluate_scores(
        data,
        split,
        i_net.map(|_| &score_i as StreamScorer<'_>),
        p_net.map(|_| &score_p as StreamScorer<'_>),
        fusion,
    )
}
