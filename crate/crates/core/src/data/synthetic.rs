//! Labelled toy videos whose classes split into appearance classes (sprite
//! shape and colour differ, motion is shared) and motion classes (one shared
//! sprite, trajectory differs).

use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use super::{DataError, Manifest, ManifestEntry, NormAccumulator, Result, Split};
use crate::codec::{encode_gop_video, write_gvc_file, Frame};
use crate::seed::rng_for;

const TAG_TRAJECTORY: u64 = 0x7EA1;
const TAG_BACKGROUND: u64 = 0xB6;
const TAG_NOISE: u64 = 0x4015E;
const TAG_SPRITE: u64 = 0x5B;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub clips_per_class: usize,
    pub frames: usize,
    pub size: usize,
    /// Fraction of each class's clips (rounded) assigned to the train split.
    pub train_fraction: f64,
    pub gop_size: usize,
    pub search_range: u16,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 8,
            clips_per_class: 25,
            frames: 48,
            size: 64,
            train_fraction: 0.6,
            gop_size: 12,
            search_range: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    HorizontalBar,
    VerticalBar,
    Disc,
    Square,
    Triangle,
    Diamond,
    Ring,
    Cross,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionPattern {
    /// Slow straight drift shared by all appearance classes.
    Drift,
    /// Vertical travel speeding up from 0.4 to 3.2 px/frame.
    Accelerate,
    /// `Accelerate` played backwards.
    Decelerate,
    /// 0.3 px/frame to the left, below the codec's whole-pixel motion step.
    CreepLeft,
    CreepRight,
    HorizontalOscillation,
    Circle,
    VerticalOscillation,
    DiagonalBounce,
}

const MOTION_PATTERNS: [MotionPattern; 6] = [
    MotionPattern::Accelerate,
    MotionPattern::Decelerate,
    MotionPattern::CreepLeft,
    MotionPattern::CreepRight,
    MotionPattern::Circle,
    MotionPattern::HorizontalOscillation,
];

const APPEARANCES: [(Shape, [u8; 3]); 6] = [
    (Shape::HorizontalBar, [200, 70, 210]),
    (Shape::VerticalBar, [60, 210, 210]),
    (Shape::Triangle, [60, 90, 230]),
    (Shape::Disc, [220, 60, 50]),
    (Shape::Ring, [230, 210, 60]),
    (Shape::Cross, [60, 190, 70]),
];

const SHARED_SPRITE: (Shape, [u8; 3]) = (Shape::Square, [235, 235, 235]);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassKind {
    Appearance { shape: Shape, colour: [u8; 3] },
    Motion(MotionPattern),
}

impl SyntheticConfig {
    pub fn appearance_classes(&self) -> usize {
        self.classes / 2
    }

    pub fn max_classes() -> usize {
        APPEARANCES.len() + MOTION_PATTERNS.len()
    }

    pub fn train_clips(&self) -> usize {
        ((self.train_fraction * self.clips_per_class as f64).round() as usize).clamp(1, self.clips_per_class - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DataError::Invalid(m));
        if self.classes < 2 || self.classes > Self::max_classes() {
            return bad(format!("classes must be in 2..={}, got {}", Self::max_classes(), self.classes));
        }
        if self.appearance_classes() > APPEARANCES.len() || self.classes - self.appearance_classes() > MOTION_PATTERNS.len() {
            return bad(format!("cannot split {} classes", self.classes));
        }
        if self.clips_per_class < 2 {
            return bad("need at least 2 clips per class".into());
        }
        if self.size < 32 {
            return bad(format!("size must be at least 32, got {}", self.size));
        }
        if self.gop_size < 2 || self.frames <= self.gop_size {
            return bad(format!("{} frames with gop {} leave no room", self.frames, self.gop_size));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train fraction {} outside (0, 1)", self.train_fraction));
        }
        Ok(())
    }

    pub fn class_kind(&self, class: usize) -> ClassKind {
        let a = self.appearance_classes();
        if class < a {
            let (shape, colour) = APPEARANCES[class];
            ClassKind::Appearance { shape, colour }
        } else {
            ClassKind::Motion(MOTION_PATTERNS[class - a])
        }
    }

    fn radius(&self) -> f64 {
        self.size as f64 * 0.15
    }
}

/// Pixels per frame of the shared appearance-class motion.
const DRIFT_SPEED: f64 = 1.5;
const CREEP_SPEED: f64 = 0.3;

/// Reflects `x` into `[lo, hi]`.
fn fold(x: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    let r = (x - lo).rem_euclid(2.0 * span);
    lo + if r > span { 2.0 * span - r } else { r }
}

/// Sprite centre per frame. Appearance classes draw their drift from the
/// clip index alone, so every appearance class shares the same paths.
pub fn sprite_path(cfg: &SyntheticConfig, class: usize, clip: usize, seed: u64) -> Vec<[f64; 2]> {
    let pattern = match cfg.class_kind(class) {
        ClassKind::Appearance { .. } => MotionPattern::Drift,
        ClassKind::Motion(p) => p,
    };
    let mut rng = match pattern {
        MotionPattern::Drift => rng_for(seed, &[TAG_TRAJECTORY, clip as u64]),
        _ => rng_for(seed, &[TAG_TRAJECTORY, clip as u64, class as u64 + 1]),
    };
    let n = cfg.frames;
    let s = cfg.size as f64;
    let (lo, hi) = (cfg.radius() + 2.0, s - cfg.radius() - 2.0);
    let mid = s / 2.0;
    let mut start = || [rng.random_range(lo..hi), rng.random_range(lo..hi)];
    let p0 = start();
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let phase = rng.random_range(0.0..TAU);
    let t = |k: usize| k as f64;
    match pattern {
        MotionPattern::Drift => {
            let v = [DRIFT_SPEED * phase.cos(), DRIFT_SPEED * phase.sin()];
            (0..n).map(|k| [fold(p0[0] + v[0] * t(k), lo, hi), fold(p0[1] + v[1] * t(k), lo, hi)]).collect()
        }
        MotionPattern::Accelerate | MotionPattern::Decelerate => {
            let mut y = p0[1];
            let mut path = Vec::with_capacity(n);
            for k in 0..n {
                path.push([p0[0], fold(y, lo, hi)]);
                y += sign * (0.4 + 2.8 * t(k) / (n - 1).max(1) as f64);
            }
            if pattern == MotionPattern::Decelerate {
                path.reverse();
            }
            path
        }
        MotionPattern::CreepLeft | MotionPattern::CreepRight => {
            let dir = if pattern == MotionPattern::CreepLeft { -1.0 } else { 1.0 };
            let travel = CREEP_SPEED * n.saturating_sub(1) as f64;
            let x0 = lo + (hi - lo - travel).max(0.0) * rng.random::<f64>() + if dir < 0.0 { travel } else { 0.0 };
            (0..n).map(|k| [(x0 + dir * CREEP_SPEED * t(k)).clamp(lo, hi), p0[1]]).collect()
        }
        MotionPattern::HorizontalOscillation => (0..n)
            .map(|k| [mid + 12.0 * (TAU * t(k) / 24.0 + phase).sin(), p0[1]])
            .collect(),
        MotionPattern::VerticalOscillation => (0..n)
            .map(|k| [p0[0], mid + 12.0 * (TAU * t(k) / 24.0 + phase).sin()])
            .collect(),
        MotionPattern::Circle => (0..n)
            .map(|k| {
                let a = phase + sign * TAU * t(k) / 28.0;
                [mid + 12.0 * a.cos(), mid + 12.0 * a.sin()]
            })
            .collect(),
        MotionPattern::DiagonalBounce => {
            let v = 2.0 / 2f64.sqrt();
            let vx = if phase < TAU / 2.0 { v } else { -v };
            (0..n)
                .map(|k| [fold(p0[0] + vx * t(k), lo, hi), fold(p0[1] + sign * v * t(k), lo, hi)])
                .collect()
        }
    }
}

fn signed_distance(shape: Shape, x: f64, y: f64, r: f64) -> f64 {
    let len = x.hypot(y);
    match shape {
        Shape::Disc => len - r,
        Shape::Square => x.abs().max(y.abs()) - 0.85 * r,
        Shape::HorizontalBar => (x.abs() - 1.1 * r).max(y.abs() - 0.35 * r),
        Shape::VerticalBar => (x.abs() - 0.35 * r).max(y.abs() - 1.1 * r),
        Shape::Diamond => (x.abs() + y.abs()) / 2f64.sqrt() - 0.75 * r,
        Shape::Ring => (len - 0.7 * r).abs() - 0.3 * r,
        Shape::Cross => {
            let arm = |a: f64, b: f64| (a.abs() - r).max(b.abs() - 0.35 * r);
            arm(x, y).min(arm(y, x))
        }
        Shape::Triangle => [90f64, 210.0, 330.0]
            .iter()
            .map(|deg| {
                let a = deg.to_radians();
                x * a.cos() - y * a.sin() - 0.5 * r
            })
            .fold(f64::MIN, f64::max),
    }
}

struct Background {
    base: [f64; 3],
    freq: [f64; 2],
    phase: [f64; 2],
}

impl Background {
    fn draw(seed: u64, clip: usize) -> Self {
        let mut rng = rng_for(seed, &[TAG_BACKGROUND, clip as u64]);
        Self {
            base: [0; 3].map(|_| rng.random_range(70.0..130.0)),
            freq: [0; 2].map(|_| rng.random_range(0.08..0.2)),
            phase: [0; 2].map(|_| rng.random_range(0.0..TAU)),
        }
    }

    fn at(&self, x: f64, y: f64, c: usize) -> f64 {
        let wave = (self.freq[0] * x + self.phase[0]).sin() * (self.freq[1] * y + self.phase[1]).sin();
        self.base[c] + 25.0 * wave * [1.0, 0.8, 0.6][c]
    }
}

/// Renders one clip of `class`: a striped anti-aliased sprite over a static
/// sinusoid background (chosen per clip index) with ±5 per-frame noise.
pub fn render_clip(cfg: &SyntheticConfig, class: usize, clip: usize, seed: u64) -> Result<Vec<Frame>> {
    cfg.validate()?;
    if class >= cfg.classes {
        return Err(DataError::Invalid(format!("class {class} of {}", cfg.classes)));
    }
    let (shape, colour) = match cfg.class_kind(class) {
        ClassKind::Appearance { shape, colour } => (shape, colour),
        ClassKind::Motion(_) => SHARED_SPRITE,
    };
    let stripe_angle = match cfg.class_kind(class) {
        ClassKind::Appearance { .. } => class as f64 * 0.7,
        ClassKind::Motion(_) => 0.4,
    };
    let mut sprite_rng = rng_for(seed, &[TAG_SPRITE, class as u64, clip as u64]);
    let period = sprite_rng.random_range(4.0..6.0);
    let dir = [stripe_angle.cos(), stripe_angle.sin()];
    let path = sprite_path(cfg, class, clip, seed);
    let bg = Background::draw(seed, clip);
    let mut noise = rng_for(seed, &[TAG_NOISE, class as u64, clip as u64]);
    let (s, r) = (cfg.size, cfg.radius());
    let mut frames = Vec::with_capacity(cfg.frames);
    for centre in &path {
        let mut data = Vec::with_capacity(s * s * 3);
        for y in 0..s {
            for x in 0..s {
                let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                let (lx, ly) = (fx - centre[0], fy - centre[1]);
                let alpha = (0.5 - signed_distance(shape, lx, ly, r)).clamp(0.0, 1.0);
                let stripe = 0.65 + 0.35 * (0.5 + 0.5 * (TAU * (lx * dir[0] + ly * dir[1]) / period).sin());
                for c in 0..3 {
                    let v = (1.0 - alpha) * bg.at(fx, fy, c) + alpha * colour[c] as f64 * stripe;
                    let n: i32 = noise.random_range(-5..=5);
                    data.push((v.round() as i32 + n).clamp(0, 255) as u8);
                }
            }
        }
        frames.push(Frame::new(s, s, data)?);
    }
    Ok(frames)
}

/// Renders, encodes and writes every clip under `out_dir/clips/`, then a
/// manifest whose statistics come from the train split.
pub fn generate_synthetic_dataset(cfg: &SyntheticConfig, seed: u64, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir.join("clips"))?;
    let mut stats = NormAccumulator::default();
    let train = cfg.train_clips();
    let jobs: Vec<(usize, usize)> = (0..cfg.classes)
        .flat_map(|class| (0..cfg.clips_per_class).map(move |clip| (class, clip)))
        .collect();
    let videos: Vec<_> = jobs
        .par_iter()
        .map(|&(class, clip)| {
            let frames = render_clip(cfg, class, clip, seed)?;
            Ok(encode_gop_video(&frames, cfg.gop_size, cfg.search_range, Some(class as u16))?)
        })
        .collect::<Result<_>>()?;
    let mut entries = Vec::with_capacity(jobs.len());
    for (&(class, clip), video) in jobs.iter().zip(&videos) {
        let rel = format!("clips/c{class:02}_{clip:03}.gvc");
        write_gvc_file(video, out_dir.join(&rel))?;
        let split = if clip < train { Split::Train } else { Split::Test };
        if split == Split::Train {
            stats.push(video)?;
        }
        entries.push(ManifestEntry {
            path: rel.into(),
            label: class,
            split,
        });
    }
    let manifest = Manifest {
        num_classes: cfg.classes,
        stats: stats.finish()?,
        entries,
    };
    manifest.save(out_dir.join(super::MANIFEST_FILE))?;
    Ok(manifest)
}
