use rand::Rng;

use super::{DataError, NormStats, Result, SamplePlan};
use crate::codec::{mv_to_dense, Frame, GopVideo};
use crate::flow::FlowField;
use crate::seed::rng_for;
use crate::tensor::Tensor;
use crate::Scalar;

/// Frames are resized to `work_width x work_height`, then a square `crop`
/// window is cut out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClipGeometry {
    pub work_width: usize,
    pub work_height: usize,
    pub crop: usize,
}

impl Default for ClipGeometry {
    fn default() -> Self {
        Self {
            work_width: 85,
            work_height: 64,
            crop: 64,
        }
    }
}

impl ClipGeometry {
    /// Working resolution equal to the source, so nothing is resampled.
    pub fn native(width: usize, height: usize, crop: usize) -> Self {
        Self {
            work_width: width,
            work_height: height,
            crop,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop == 0 || self.crop > self.work_width || self.crop > self.work_height {
            return Err(DataError::Invalid(format!(
                "crop {} does not fit {}x{}",
                self.crop, self.work_width, self.work_height
            )));
        }
        Ok(())
    }
}

/// Crop offset and mirror flag, shared by every frame of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Augment {
    pub x0: usize,
    pub y0: usize,
    pub flip: bool,
}

impl Augment {
    pub fn center(g: &ClipGeometry) -> Self {
        Self {
            x0: (g.work_width - g.crop) / 2,
            y0: (g.work_height - g.crop) / 2,
            flip: false,
        }
    }

    pub fn random(g: &ClipGeometry, rng: &mut impl Rng) -> Self {
        Self {
            x0: rng.random_range(0..=g.work_width - g.crop),
            y0: rng.random_range(0..=g.work_height - g.crop),
            flip: rng.random(),
        }
    }

    /// Random when `augment`, centred otherwise.
    pub fn draw(g: &ClipGeometry, augment: bool, seed: u64) -> Self {
        if augment {
            Self::random(g, &mut rng_for(seed, &[0xA06]))
        } else {
            Self::center(g)
        }
    }
}

fn resize_plane(src: &[f32], sw: usize, sh: usize, dw: usize, dh: usize, nearest: bool) -> Vec<f32> {
    if (sw, sh) == (dw, dh) {
        return src.to_vec();
    }
    let (rx, ry) = (sw as f64 / dw as f64, sh as f64 / dh as f64);
    let mut out = Vec::with_capacity(dw * dh);
    for y in 0..dh {
        let fy = ((y as f64 + 0.5) * ry - 0.5).clamp(0.0, (sh - 1) as f64);
        for x in 0..dw {
            let fx = ((x as f64 + 0.5) * rx - 0.5).clamp(0.0, (sw - 1) as f64);
            if nearest {
                let (ix, iy) = ((((x as f64 + 0.5) * rx) as usize).min(sw - 1), (((y as f64 + 0.5) * ry) as usize).min(sh - 1));
                out.push(src[iy * sw + ix]);
                continue;
            }
            let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(sw - 1), (y0 + 1).min(sh - 1));
            let (ax, ay) = ((fx - x0 as f64) as f32, (fy - y0 as f64) as f32);
            let top = src[y0 * sw + x0] * (1.0 - ax) + src[y0 * sw + x1] * ax;
            let bottom = src[y1 * sw + x0] * (1.0 - ax) + src[y1 * sw + x1] * ax;
            out.push(top * (1.0 - ay) + bottom * ay);
        }
    }
    out
}

/// Resizes one source plane to the working resolution, crops and mirrors it,
/// then applies `v * scale + shift`.
#[allow(clippy::too_many_arguments)]
fn plane_to_crop(
    src: &[f32],
    sw: usize,
    sh: usize,
    g: &ClipGeometry,
    aug: &Augment,
    nearest: bool,
    scale: f32,
    shift: f32,
    out: &mut Vec<f32>,
) {
    let work = resize_plane(src, sw, sh, g.work_width, g.work_height, nearest);
    for y in 0..g.crop {
        let row = (aug.y0 + y) * g.work_width + aug.x0;
        for x in 0..g.crop {
            let xs = if aug.flip { g.crop - 1 - x } else { x };
            out.push(work[row + xs] * scale + shift);
        }
    }
}

fn check(g: &ClipGeometry, aug: &Augment) -> Result<()> {
    g.validate()?;
    if aug.x0 + g.crop > g.work_width || aug.y0 + g.crop > g.work_height {
        return Err(DataError::Invalid(format!("crop window {aug:?} leaves the working frame")));
    }
    Ok(())
}

/// Planes `[frame][channel][crop*crop]` to `[1, C, T, crop, crop]`.
fn to_clip<T: Scalar>(per_frame: Vec<Vec<f32>>, channels: usize, crop: usize) -> Result<Tensor<T>> {
    let t = per_frame.len();
    let plane = crop * crop;
    let mut data = Vec::with_capacity(t * channels * plane);
    for c in 0..channels {
        for f in &per_frame {
            data.extend(f[c * plane..(c + 1) * plane].iter().map(|&v| T::of(v as f64)));
        }
    }
    Ok(Tensor::new(&[1, channels, t, crop, crop], data)?)
}

/// The five normalised planes (MV dx, MV dy, residual RGB) of P-frame `k`.
pub fn p_frame_planes(video: &GopVideo, k: usize, g: &ClipGeometry, aug: &Augment, stats: &NormStats) -> Result<Vec<f32>> {
    check(g, aug)?;
    let (mv, residual) = video
        .predicted(k)
        .ok_or_else(|| DataError::Invalid(format!("frame {k} is not a P-frame")))?;
    let (w, h) = (video.width, video.height);
    let dense = mv_to_dense(mv, w, h)?;
    let mut out = Vec::with_capacity(5 * g.crop * g.crop);
    let rescale = [g.work_width as f64 / w as f64, g.work_height as f64 / h as f64];
    for ch in 0..2 {
        let mut scale = (rescale[ch] / stats.mv_scale[ch]) as f32;
        if ch == 0 && aug.flip {
            scale = -scale;
        }
        plane_to_crop(&dense.data[ch * w * h..(ch + 1) * w * h], w, h, g, aug, true, scale, 0.0, &mut out);
    }
    for c in 0..3 {
        let plane: Vec<f32> = residual.data.iter().skip(c).step_by(3).map(|&v| v as f32).collect();
        let inv = 1.0 / stats.residual_std[c];
        plane_to_crop(&plane, w, h, g, aug, false, inv as f32, (-stats.residual_mean[c] * inv) as f32, &mut out);
    }
    Ok(out)
}

/// `[1, 5, T, crop, crop]` from the plan's P-frames with an explicit
/// augmentation.
pub fn make_p_clip_with<T: Scalar>(
    video: &GopVideo,
    plan: &SamplePlan,
    g: &ClipGeometry,
    aug: &Augment,
    stats: &NormStats,
) -> Result<Tensor<T>> {
    let frames = plan
        .p_indices
        .iter()
        .map(|&k| p_frame_planes(video, k, g, aug, stats))
        .collect::<Result<Vec<_>>>()?;
    to_clip(frames, 5, g.crop)
}

/// Stacked MV + residual clip. With `augment` the crop is random and the
/// clip is mirrored with probability 1/2 (negating MV dx); otherwise the
/// crop is centred.
pub fn make_p_clip<T: Scalar>(
    video: &GopVideo,
    plan: &SamplePlan,
    g: &ClipGeometry,
    augment: bool,
    seed: u64,
    stats: &NormStats,
) -> Result<Tensor<T>> {
    make_p_clip_with(video, plan, g, &Augment::draw(g, augment, seed), stats)
}

/// `[1, 2, T, crop, crop]` teacher input from one flow field per sampled
/// step, normalised with the MV scale.
pub fn make_flow_clip_with<T: Scalar>(
    flows: &[&FlowField<f32>],
    g: &ClipGeometry,
    aug: &Augment,
    stats: &NormStats,
) -> Result<Tensor<T>> {
    check(g, aug)?;
    let mut frames = Vec::with_capacity(flows.len());
    for f in flows {
        let (w, h) = (f.width, f.height);
        let rescale = [g.work_width as f64 / w as f64, g.work_height as f64 / h as f64];
        let mut out = Vec::with_capacity(2 * g.crop * g.crop);
        for ch in 0..2 {
            let mut scale = (rescale[ch] / stats.mv_scale[ch]) as f32;
            if ch == 0 && aug.flip {
                scale = -scale;
            }
            plane_to_crop(&f.data[ch * w * h..(ch + 1) * w * h], w, h, g, aug, false, scale, 0.0, &mut out);
        }
        frames.push(out);
    }
    to_clip(frames, 2, g.crop)
}

fn rgb_planes(frame: &Frame, g: &ClipGeometry, aug: &Augment, stats: &NormStats, out: &mut Vec<f32>) {
    let (w, h) = (frame.width, frame.height);
    for c in 0..3 {
        let plane: Vec<f32> = frame.data.iter().skip(c).step_by(3).map(|&v| v as f32).collect();
        let inv = 1.0 / stats.rgb_std[c];
        plane_to_crop(&plane, w, h, g, aug, false, (inv / 255.0) as f32, (-stats.rgb_mean[c] * inv) as f32, out);
    }
}

/// `[n_segments, 3, crop, crop]` from the plan's I-frames.
pub fn make_i_batch_with<T: Scalar>(
    video: &GopVideo,
    plan: &SamplePlan,
    g: &ClipGeometry,
    aug: &Augment,
    stats: &NormStats,
) -> Result<Tensor<T>> {
    check(g, aug)?;
    let mut data = Vec::with_capacity(plan.i_indices.len() * 3 * g.crop * g.crop);
    for &k in &plan.i_indices {
        let frame = video
            .intra(k)
            .ok_or_else(|| DataError::Invalid(format!("frame {k} is not an I-frame")))?;
        rgb_planes(frame, g, aug, stats, &mut data);
    }
    let data = data.into_iter().map(|v| T::of(v as f64)).collect();
    Ok(Tensor::new(&[plan.i_indices.len(), 3, g.crop, g.crop], data)?)
}

pub fn make_i_batch<T: Scalar>(
    video: &GopVideo,
    plan: &SamplePlan,
    g: &ClipGeometry,
    augment: bool,
    seed: u64,
    stats: &NormStats,
) -> Result<Tensor<T>> {
    make_i_batch_with(video, plan, g, &Augment::draw(g, augment, seed), stats)
}

/// Concatenates same-shaped tensors along axis 0.
pub fn stack_batch<T: Scalar>(items: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = items.first().ok_or_else(|| DataError::Invalid("empty batch".into()))?;
    let inner = &first.shape()[1..];
    let mut n = 0;
    let mut data = Vec::with_capacity(items.len() * first.numel());
    for t in items {
        if &t.shape()[1..] != inner {
            return Err(DataError::Invalid(format!("cannot stack {:?} with {:?}", t.shape(), first.shape())));
        }
        n += t.shape()[0];
        data.extend_from_slice(&t.data());
    }
    let mut shape = vec![n];
    shape.extend_from_slice(inner);
    Ok(Tensor::new(&shape, data)?)
}
