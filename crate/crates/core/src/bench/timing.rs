use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{BenchError, Result};
use crate::codec::read_gvc_file;
use crate::data::{make_i_batch_with, make_p_clip_with, tsn_sample, Augment, ClipGeometry, DataError, SampleMode};
use crate::models::Network;
use crate::pipeline::Dataset;
use crate::tensor::Tensor;
use crate::Scalar;

/// Warm-up runs whose coefficient of variation exceeds this abort timing.
pub const MAX_WARMUP_CV: f64 = 0.5;

/// Median wall-clock seconds per video for each phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub reps: usize,
    pub warmup: usize,
    pub preprocessing: f64,
    pub i_stream: f64,
    pub p_stream: f64,
    pub seconds_per_video: f64,
    pub vps: f64,
}

/// The three timed phases of two-stream inference on one video.
pub trait InferenceRunner {
    type Prepared;

    fn videos(&self) -> usize;
    /// Decoding, sampling and input assembly.
    fn preprocess(&self, video: usize) -> Result<Self::Prepared>;
    fn run_i(&self, prepared: &Self::Prepared) -> Result<()>;
    fn run_p(&self, prepared: &Self::Prepared) -> Result<()>;
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) }
}

fn coefficient_of_variation(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if mean > 0.0 { var.sqrt() / mean } else { 0.0 }
}

fn time_once<R: InferenceRunner>(runner: &R, video: usize) -> Result<[f64; 3]> {
    let t0 = Instant::now();
    let prepared = runner.preprocess(video)?;
    let t1 = Instant::now();
    runner.run_i(&prepared)?;
    let t2 = Instant::now();
    runner.run_p(&prepared)?;
    let t3 = Instant::now();
    Ok([(t1 - t0).as_secs_f64(), (t2 - t1).as_secs_f64(), (t3 - t2).as_secs_f64()])
}

/// Times `warmup` untimed passes, then `reps` timed passes cycling through
/// the runner's videos, and reports per-phase medians. Refuses to report
/// when the warm-up passes disagree by more than [`MAX_WARMUP_CV`].
pub fn measure_vps<R: InferenceRunner>(runner: &R, reps: usize, warmup: usize) -> Result<Timing> {
    if reps < 3 || warmup < 1 {
        return Err(BenchError::Config(format!("need reps >= 3 and warmup >= 1, got {reps} and {warmup}")));
    }
    let n = runner.videos();
    if n == 0 {
        return Err(BenchError::EmptyDataset);
    }
    let warm = (0..warmup)
        .map(|i| time_once(runner, i % n).map(|t| t.iter().sum()))
        .collect::<Result<Vec<f64>>>()?;
    if warm.len() >= 2 {
        let cv = coefficient_of_variation(&warm);
        if cv > MAX_WARMUP_CV {
            return Err(BenchError::Unstable { cv });
        }
    }
    let mut phases = [Vec::new(), Vec::new(), Vec::new()];
    for r in 0..reps {
        let t = time_once(runner, (warmup + r) % n)?;
        for (p, v) in phases.iter_mut().zip(t) {
            p.push(v);
        }
    }
    let [pre, i, p] = phases.map(median);
    let total = pre + i + p;
    Ok(Timing {
        reps,
        warmup,
        preprocessing: pre,
        i_stream: i,
        p_stream: p,
        seconds_per_video: total,
        vps: 1.0 / total.max(f64::MIN_POSITIVE),
    })
}

/// Reads each video from disk, samples `segments` frames per stream with a
/// centre crop, and runs whichever networks are present.
pub struct NetworkRunner<'a, T: Scalar> {
    pub data: &'a Dataset,
    pub i_net: Option<&'a Network<T>>,
    pub p_net: Option<&'a Network<T>>,
    pub segments: usize,
    pub geometry: ClipGeometry,
}

impl<T: Scalar> InferenceRunner for NetworkRunner<'_, T> {
    type Prepared = (Option<Tensor<T>>, Option<Tensor<T>>);

    fn videos(&self) -> usize {
        self.data.videos.len()
    }

    fn preprocess(&self, video: usize) -> Result<Self::Prepared> {
        let entry = &self.data.videos[video].entry;
        let load = || -> std::result::Result<Self::Prepared, DataError> {
            let v = read_gvc_file(self.data.manifest.resolve(&self.data.root, entry))?;
            let plan = tsn_sample(&v, self.segments, SampleMode::Uniform, 0)?;
            let aug = Augment::center(&self.geometry);
            let stats = self.data.stats();
            let i = self
                .i_net
                .map(|_| make_i_batch_with(&v, &plan, &self.geometry, &aug, stats))
                .transpose()?;
            let p = self
                .p_net
                .map(|_| make_p_clip_with(&v, &plan, &self.geometry, &aug, stats))
                .transpose()?;
            Ok((i, p))
        };
        load().map_err(|e| BenchError::Pipeline(e.into()))
    }

    fn run_i(&self, prepared: &Self::Prepared) -> Result<()> {
        if let (Some(net), Some(x)) = (self.i_net, &prepared.0) {
            net.forward(x, false)?;
        }
        Ok(())
    }

    fn run_p(&self, prepared: &Self::Prepared) -> Result<()> {
        if let (Some(net), Some(x)) = (self.p_net, &prepared.1) {
            net.forward(x, false)?;
        }
        Ok(())
    }
}
