//! Sampling, clip assembly, synthetic data and manifests.

mod clip;
mod manifest;
mod sampling;
pub mod synthetic;

pub use clip::{
    make_flow_clip_with, make_i_batch, make_i_batch_with, make_p_clip, make_p_clip_with, p_frame_planes,
    stack_batch, Augment, ClipGeometry,
};
pub use manifest::{Manifest, ManifestEntry, Split, MANIFEST_FILE};
pub use sampling::{segment_bounds, tsn_sample, SampleMode, SamplePlan};
pub use synthetic::{generate_synthetic_dataset, render_clip, sprite_path, ClassKind, MotionPattern, Shape, SyntheticConfig};

use crate::codec::{mv_to_dense, CodecError, GopVideo};
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Fixed per-channel input normalisation of a dataset.
///
/// Motion vectors are divided by `mv_scale`. Residuals become
/// `(r - mean) / std` in raw units. RGB becomes `(v / 255 - mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mv_scale: [f64; 2],
    pub residual_mean: [f64; 3],
    pub residual_std: [f64; 3],
    pub rgb_mean: [f64; 3],
    pub rgb_std: [f64; 3],
}

impl Default for NormStats {
    fn default() -> Self {
        Self {
            mv_scale: [1.0; 2],
            residual_mean: [0.0; 3],
            residual_std: [1.0; 3],
            rgb_mean: [0.0; 3],
            rgb_std: [1.0; 3],
        }
    }
}

impl NormStats {
    pub fn validate(&self) -> Result<()> {
        let scales = self.mv_scale.iter().chain(&self.residual_std).chain(&self.rgb_std);
        let offsets = self.residual_mean.iter().chain(&self.rgb_mean);
        if scales.clone().any(|&s| !(s.is_finite() && s > 0.0)) || offsets.clone().any(|m| !m.is_finite()) {
            return Err(DataError::Manifest(format!("invalid normalisation statistics {self:?}")));
        }
        Ok(())
    }
}

#[derive(Default)]
struct Moments {
    n: f64,
    sum: f64,
    sq: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        self.sum += v;
        self.sq += v * v;
    }

    fn mean(&self) -> f64 {
        if self.n > 0.0 { self.sum / self.n } else { 0.0 }
    }

    fn std(&self) -> f64 {
        if self.n == 0.0 {
            return 1.0;
        }
        let m = self.mean();
        (self.sq / self.n - m * m).max(0.0).sqrt()
    }

    fn rms(&self) -> f64 {
        if self.n > 0.0 { (self.sq / self.n).sqrt() } else { 1.0 }
    }
}

/// Streaming accumulator behind [`compute_norm_stats`].
#[derive(Default)]
pub struct NormAccumulator {
    mv: [Moments; 2],
    res: [Moments; 3],
    rgb: [Moments; 3],
}

impl NormAccumulator {
    pub fn push(&mut self, video: &GopVideo) -> Result<()> {
        for k in 0..video.frame_count() {
            if let Some(frame) = video.intra(k) {
                for px in frame.data.chunks_exact(3) {
                    for (m, &v) in self.rgb.iter_mut().zip(px) {
                        m.push(v as f64 / 255.0);
                    }
                }
            } else if let Some((field, residual)) = video.predicted(k) {
                let dense = mv_to_dense(field, video.width, video.height)?;
                let plane = video.width * video.height;
                for (c, m) in self.mv.iter_mut().enumerate() {
                    dense.data[c * plane..(c + 1) * plane].iter().for_each(|&v| m.push(v as f64));
                }
                for px in residual.data.chunks_exact(3) {
                    for (m, &v) in self.res.iter_mut().zip(px) {
                        m.push(v as f64);
                    }
                }
            }
        }
        Ok(())
    }

    /// Scales never drop below a floor, so near-static data stays finite.
    pub fn finish(&self) -> Result<NormStats> {
        let stats = NormStats {
            mv_scale: [0, 1].map(|c| self.mv[c].rms().max(0.5)),
            residual_mean: [0, 1, 2].map(|c| self.res[c].mean()),
            residual_std: [0, 1, 2].map(|c| self.res[c].std().max(1.0)),
            rgb_mean: [0, 1, 2].map(|c| self.rgb[c].mean()),
            rgb_std: [0, 1, 2].map(|c| self.rgb[c].std().max(1e-2)),
        };
        stats.validate()?;
        Ok(stats)
    }
}

/// Per-channel statistics over every frame of `videos`.
pub fn compute_norm_stats<'a>(videos: impl IntoIterator<Item = &'a GopVideo>) -> Result<NormStats> {
    let mut acc = NormAccumulator::default();
    for v in videos {
        acc.push(v)?;
    }
    acc.finish()
}

