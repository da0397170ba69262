//! Lossless toy GOP codec.
//!
//! A video is a run of groups of pictures: every `gop_size`-th frame (starting
//! at 0) is stored intra as raw RGB, every other frame is stored predicted as a
//! per-macroblock motion field plus an exact signed residual against the
//! motion-compensated previous frame.
//!
//! Motion convention: a vector `mv` at pixel `p` predicts `cur(p)` from
//! `prev(p + mv)`, with reference coordinates clamped to the frame edge. An
//! object that moves right by `d` pixels therefore gets `mv = (-d, 0)`.

mod container;

pub use container::{read_gvc, read_gvc_file, write_gvc, write_gvc_file, GVC_MAGIC};

use thiserror::Error;

/// Macroblock edge length in pixels.
pub const MACROBLOCK: usize = 16;
/// Default motion search range in pixels.
pub const DEFAULT_SEARCH_RANGE: u16 = 7;
/// Largest vector component a container may carry.
pub const MAX_SEARCH_RANGE: u16 = 64;
pub const DEFAULT_GOP_SIZE: usize = 12;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("motion field grid {got_x}x{got_y} does not match frame grid {want_x}x{want_y}")]
    GridMismatch {
        got_x: usize,
        got_y: usize,
        want_x: usize,
        want_y: usize,
    },
    #[error("motion vector ({dx}, {dy}) exceeds search range {range}")]
    MotionOutOfRange { dx: i16, dy: i16, range: u16 },
    #[error("empty frame list")]
    Empty,
    #[error("gop size must be at least 1")]
    InvalidGopSize,
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error("truncated container: {0}")]
    Truncated(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CodecError>;

/// Number of macroblocks needed to cover `pixels`.
pub fn blocks_for(pixels: usize) -> usize {
    pixels.div_ceil(MACROBLOCK)
}

/// RGB frame, 8 bits per sample, row-major interleaved.
#[derive(Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl std::fmt::Debug for Frame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Frame({}x{})", self.width, self.height)
    }
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        let frame = Self {
            width,
            height,
            data,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, data }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Sample with edge clamping.
    #[inline]
    pub fn clamped(&self, x: isize, y: isize, c: usize) -> u8 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[(y * self.width + x) * 3 + c]
    }

    fn check_same_dims(&self, other: &Frame) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(CodecError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(CodecError::InvalidFrame(format!(
                "zero extent {}x{}",
                self.width, self.height
            )));
        }
        if self.data.len() != self.width * self.height * 3 {
            return Err(CodecError::InvalidFrame(format!(
                "{}x{} frame carries {} samples",
                self.width,
                self.height,
                self.data.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct MotionVector {
    pub dx: i16,
    pub dy: i16,
}

impl MotionVector {
    pub const ZERO: MotionVector = MotionVector { dx: 0, dy: 0 };

    pub fn new(dx: i16, dy: i16) -> Self {
        Self { dx, dy }
    }
}

/// One displacement per 16x16 macroblock, row-major over the block grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MotionField {
    pub blocks_x: usize,
    pub blocks_y: usize,
    pub search_range: u16,
    pub vectors: Vec<MotionVector>,
}

impl MotionField {
    pub fn zeros(width: usize, height: usize, search_range: u16) -> Self {
        let (bx, by) = (blocks_for(width), blocks_for(height));
        Self {
            blocks_x: bx,
            blocks_y: by,
            search_range,
            vectors: vec![MotionVector::ZERO; bx * by],
        }
    }

    pub fn uniform(width: usize, height: usize, search_range: u16, mv: MotionVector) -> Self {
        let mut f = Self::zeros(width, height, search_range);
        f.vectors.fill(mv);
        f
    }

    #[inline]
    pub fn get(&self, bx: usize, by: usize) -> MotionVector {
        self.vectors[by * self.blocks_x + bx]
    }

    /// Checks grid shape against a frame size and every vector against the
    /// search range.
    pub fn validate_for(&self, width: usize, height: usize) -> Result<()> {
        let (want_x, want_y) = (blocks_for(width), blocks_for(height));
        if self.blocks_x != want_x
            || self.blocks_y != want_y
            || self.vectors.len() != want_x * want_y
        {
            return Err(CodecError::GridMismatch {
                got_x: self.blocks_x,
                got_y: self.blocks_y,
                want_x,
                want_y,
            });
        }
        let range = self.search_range as i32;
        if let Some(v) = self
            .vectors
            .iter()
            .find(|v| (v.dx as i32).abs() > range || (v.dy as i32).abs() > range)
        {
            return Err(CodecError::MotionOutOfRange {
                dx: v.dx,
                dy: v.dy,
                range: self.search_range,
            });
        }
        Ok(())
    }
}

/// Exact signed difference between a frame and its prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Residual {
    pub width: usize,
    pub height: usize,
    pub data: Vec<i16>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CodedFrame {
    Intra(Frame),
    Predicted { motion: MotionField, residual: Residual },
}

impl CodedFrame {
    pub fn is_intra(&self) -> bool {
        matches!(self, CodedFrame::Intra(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GopVideo {
    pub width: usize,
    pub height: usize,
    pub gop_size: usize,
    pub label: Option<u16>,
    pub frames: Vec<CodedFrame>,
}

impl GopVideo {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn is_intra_index(&self, k: usize) -> bool {
        k % self.gop_size == 0
    }

    pub fn intra_indices(&self) -> Vec<usize> {
        (0..self.frames.len()).filter(|&k| self.is_intra_index(k)).collect()
    }

    pub fn predicted_indices(&self) -> Vec<usize> {
        (0..self.frames.len()).filter(|&k| !self.is_intra_index(k)).collect()
    }

    /// The stored intra frame at `k`, if `k` is an I-frame.
    pub fn intra(&self, k: usize) -> Option<&Frame> {
        match self.frames.get(k) {
            Some(CodedFrame::Intra(f)) => Some(f),
            _ => None,
        }
    }

    pub fn predicted(&self, k: usize) -> Option<(&MotionField, &Residual)> {
        match self.frames.get(k) {
            Some(CodedFrame::Predicted { motion, residual }) => Some((motion, residual)),
            _ => None,
        }
    }

    /// Structural validation: GOP layout, dimensions, grid shapes.
    pub fn validate(&self) -> Result<()> {
        if self.gop_size == 0 {
            return Err(CodecError::InvalidGopSize);
        }
        if self.width == 0 || self.height == 0 {
            return Err(CodecError::Malformed(format!(
                "zero extent {}x{}",
                self.width, self.height
            )));
        }
        for (k, f) in self.frames.iter().enumerate() {
            match f {
                CodedFrame::Intra(frame) => {
                    if !self.is_intra_index(k) {
                        return Err(CodecError::Malformed(format!("frame {k} must be predicted")));
                    }
                    frame.validate()?;
                    if frame.width != self.width || frame.height != self.height {
                        return Err(CodecError::DimensionMismatch(
                            frame.width,
                            frame.height,
                            self.width,
                            self.height,
                        ));
                    }
                }
                CodedFrame::Predicted { motion, residual } => {
                    if self.is_intra_index(k) {
                        return Err(CodecError::Malformed(format!("frame {k} must be intra")));
                    }
                    motion.validate_for(self.width, self.height)?;
                    if residual.width != self.width
                        || residual.height != self.height
                        || residual.data.len() != self.width * self.height * 3
                    {
                        return Err(CodecError::Malformed(format!(
                            "residual {k} has wrong dimensions"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Sum of absolute differences of one macroblock of `cur` against `prev`
/// displaced by `(dx, dy)`, clamping reference coordinates to the frame.
fn block_sad(prev: &Frame, cur: &Frame, bx: usize, by: usize, dx: isize, dy: isize) -> u32 {
    let x0 = bx * MACROBLOCK;
    let y0 = by * MACROBLOCK;
    let x1 = (x0 + MACROBLOCK).min(cur.width);
    let y1 = (y0 + MACROBLOCK).min(cur.height);
    let w = cur.width;
    let inside = x0 as isize + dx >= 0
        && y0 as isize + dy >= 0
        && x1 as isize + dx <= prev.width as isize
        && y1 as isize + dy <= prev.height as isize;
    let mut sad = 0u32;
    if inside {
        let span = (x1 - x0) * 3;
        for y in y0..y1 {
            let ry = (y as isize + dy) as usize;
            let c = &cur.data[(y * w + x0) * 3..][..span];
            let r = &prev.data[(ry * w + (x0 as isize + dx) as usize) * 3..][..span];
            sad += c
                .iter()
                .zip(r)
                .map(|(&a, &b)| (a as i32 - b as i32).unsigned_abs())
                .sum::<u32>();
        }
    } else {
        for y in y0..y1 {
            for x in x0..x1 {
                for ch in 0..3 {
                    let a = cur.data[(y * w + x) * 3 + ch] as i32;
                    let b = prev.clamped(x as isize + dx, y as isize + dy, ch) as i32;
                    sad += (a - b).unsigned_abs();
                }
            }
        }
    }
    sad
}

/// Exhaustive integer-pel block matching.
///
/// Each macroblock of `cur` receives the displacement within
/// `[-search_range, search_range]^2` minimising SAD; ties go to the smallest
/// `|dx| + |dy|`, then the smallest `dy`, then the smallest `dx`.
pub fn estimate_motion(prev: &Frame, cur: &Frame, search_range: u16) -> Result<MotionField> {
    prev.validate()?;
    cur.validate()?;
    prev.check_same_dims(cur)?;
    if search_range > MAX_SEARCH_RANGE {
        return Err(CodecError::InvalidFrame(format!(
            "search range {search_range} exceeds {MAX_SEARCH_RANGE}"
        )));
    }
    let mut field = MotionField::zeros(cur.width, cur.height, search_range);
    let r = search_range as isize;
    for by in 0..field.blocks_y {
        for bx in 0..field.blocks_x {
            let mut best = (u32::MAX, 0isize, 0isize, 0isize);
            for dy in -r..=r {
                for dx in -r..=r {
                    let sad = block_sad(prev, cur, bx, by, dx, dy);
                    let key = (sad, dx.abs() + dy.abs(), dy, dx);
                    if key < best {
                        best = key;
                    }
                }
            }
            field.vectors[by * field.blocks_x + bx] =
                MotionVector::new(best.3 as i16, best.2 as i16);
        }
    }
    Ok(field)
}

/// Builds the prediction of the next frame by copying every macroblock from
/// `prev` at its displaced, edge-clamped location.
pub fn motion_compensate(prev: &Frame, mv: &MotionField) -> Result<Frame> {
    prev.validate()?;
    mv.validate_for(prev.width, prev.height)?;
    let (w, h) = (prev.width, prev.height);
    let mut data = vec![0u8; w * h * 3];
    for y in 0..h {
        let by = y / MACROBLOCK;
        for x in 0..w {
            let v = mv.get(x / MACROBLOCK, by);
            let sx = (x as isize + v.dx as isize).clamp(0, w as isize - 1) as usize;
            let sy = (y as isize + v.dy as isize).clamp(0, h as isize - 1) as usize;
            let (src, dst) = ((sy * w + sx) * 3, (y * w + x) * 3);
            data[dst..dst + 3].copy_from_slice(&prev.data[src..src + 3]);
        }
    }
    Ok(Frame {
        width: w,
        height: h,
        data,
    })
}

pub fn compute_residual(cur: &Frame, predicted: &Frame) -> Result<Residual> {
    cur.validate()?;
    predicted.validate()?;
    cur.check_same_dims(predicted)?;
    let data = cur
        .data
        .iter()
        .zip(&predicted.data)
        .map(|(&c, &p)| c as i16 - p as i16)
        .collect();
    Ok(Residual {
        width: cur.width,
        height: cur.height,
        data,
    })
}

/// `predicted + residual`, saturated to the 8-bit range.
pub fn apply_residual(predicted: &Frame, residual: &Residual) -> Result<Frame> {
    if predicted.width != residual.width
        || predicted.height != residual.height
        || residual.data.len() != predicted.data.len()
    {
        return Err(CodecError::DimensionMismatch(
            predicted.width,
            predicted.height,
            residual.width,
            residual.height,
        ));
    }
    let data = predicted
        .data
        .iter()
        .zip(&residual.data)
        .map(|(&p, &r)| (p as i32 + r as i32).clamp(0, 255) as u8)
        .collect();
    Ok(Frame {
        width: predicted.width,
        height: predicted.height,
        data,
    })
}

/// Encodes `frames` as a GOP video with I-frames at every multiple of
/// `gop_size`; predicted frames reference the previous reconstructed frame.
pub fn encode_gop_video(
    frames: &[Frame],
    gop_size: usize,
    search_range: u16,
    label: Option<u16>,
) -> Result<GopVideo> {
    let first = frames.first().ok_or(CodecError::Empty)?;
    if gop_size == 0 {
        return Err(CodecError::InvalidGopSize);
    }
    for f in frames {
        f.validate()?;
        first.check_same_dims(f)?;
    }
    let mut coded = Vec::with_capacity(frames.len());
    let mut reconstructed: Option<Frame> = None;
    for (k, frame) in frames.iter().enumerate() {
        if k % gop_size == 0 {
            coded.push(CodedFrame::Intra(frame.clone()));
            reconstructed = Some(frame.clone());
        } else {
            let reference = reconstructed.as_ref().expect("frame 0 is always intra");
            let motion = estimate_motion(reference, frame, search_range)?;
            let predicted = motion_compensate(reference, &motion)?;
            let residual = compute_residual(frame, &predicted)?;
            reconstructed = Some(apply_residual(&predicted, &residual)?);
            coded.push(CodedFrame::Predicted { motion, residual });
        }
    }
    Ok(GopVideo {
        width: first.width,
        height: first.height,
        gop_size,
        label,
        frames: coded,
    })
}

pub fn decode_gop_video(video: &GopVideo) -> Result<Vec<Frame>> {
    video.validate()?;
    let mut out: Vec<Frame> = Vec::with_capacity(video.frames.len());
    for coded in &video.frames {
        let frame = match coded {
            CodedFrame::Intra(f) => f.clone(),
            CodedFrame::Predicted { motion, residual } => {
                let prev = out
                    .last()
                    .ok_or_else(|| CodecError::Malformed("video starts with a P-frame".into()))?;
                apply_residual(&motion_compensate(prev, motion)?, residual)?
            }
        };
        out.push(frame);
    }
    Ok(out)
}

/// Full-resolution two-channel motion plane (dx then dy), constant per
/// macroblock. Channel-planar, `2 * height * width` values.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMotion {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl DenseMotion {
    #[inline]
    pub fn at(&self, channel: usize, x: usize, y: usize) -> f32 {
        self.data[(channel * self.height + y) * self.width + x]
    }
}

pub fn mv_to_dense(mv: &MotionField, width: usize, height: usize) -> Result<DenseMotion> {
    mv.validate_for(width, height)?;
    let plane = width * height;
    let mut data = vec![0f32; 2 * plane];
    for y in 0..height {
        for x in 0..width {
            let v = mv.get(x / MACROBLOCK, y / MACROBLOCK);
            data[y * width + x] = v.dx as f32;
            data[plane + y * width + x] = v.dy as f32;
        }
    }
    Ok(DenseMotion {
        width,
        height,
        data,
    })
}

