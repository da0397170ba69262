use rand::Rng;

use super::{DataError, Result};
use crate::codec::GopVideo;
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// Uniformly random frame within each segment (training).
    Random,
    /// Frame nearest to each segment's centre (evaluation).
    Uniform,
}

/// One I-frame and one P-frame index per segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplePlan {
    pub n_segments: usize,
    pub i_indices: Vec<usize>,
    pub p_indices: Vec<usize>,
    pub mode: SampleMode,
}

/// `[start, end)` of segment `s` out of `n` over `frames` frames.
pub fn segment_bounds(frames: usize, n: usize, s: usize) -> (usize, usize) {
    (s * frames / n, (s + 1) * frames / n)
}

fn centre(start: usize, end: usize, frames: usize) -> usize {
    (start + (end - start) / 2).min(frames - 1)
}

/// Nearest member of `valid` (sorted) to `c`; ties go to the lower index.
fn nearest(valid: &[usize], c: usize) -> usize {
    *valid
        .iter()
        .min_by_key(|&&k| (k.abs_diff(c), k))
        .expect("non-empty candidate list")
}

fn pick(valid: &[usize], start: usize, end: usize, frames: usize, mode: SampleMode, rng: &mut impl Rng) -> usize {
    let inside: Vec<usize> = valid.iter().copied().filter(|&k| k >= start && k < end).collect();
    let c = centre(start, end, frames);
    match (mode, inside.is_empty()) {
        (_, true) => nearest(valid, c),
        (SampleMode::Uniform, false) => nearest(&inside, c),
        (SampleMode::Random, false) => inside[rng.random_range(0..inside.len())],
    }
}

/// TSN sampling over `n_segments` equal contiguous ranges. A segment
/// without a frame of the required type borrows the nearest one in the
/// whole video. Random mode is a pure function of `seed`.
pub fn tsn_sample(video: &GopVideo, n_segments: usize, mode: SampleMode, seed: u64) -> Result<SamplePlan> {
    if n_segments == 0 {
        return Err(DataError::Invalid("n_segments must be at least 1".into()));
    }
    let intra = video.intra_indices();
    let predicted = video.predicted_indices();
    if intra.is_empty() || predicted.is_empty() {
        return Err(DataError::Invalid(format!(
            "sampling needs I- and P-frames, video has {} and {}",
            intra.len(),
            predicted.len()
        )));
    }
    let frames = video.frame_count();
    let mut rng = rng_for(seed, &[0x7357]);
    let mut plan = SamplePlan {
        n_segments,
        i_indices: Vec::with_capacity(n_segments),
        p_indices: Vec::with_capacity(n_segments),
        mode,
    };
    for s in 0..n_segments {
        let (start, end) = segment_bounds(frames, n_segments, s);
        plan.i_indices.push(pick(&intra, start, end, frames, mode, &mut rng));
        plan.p_indices.push(pick(&predicted, start, end, frames, mode, &mut rng));
    }
    Ok(plan)
}
