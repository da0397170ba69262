//! Coarse-to-fine TV-L1 optical flow (duality-based primal-dual scheme).
//!
//! Energy, with intensities in [0, 1]:
//! `E(u) = sum_x |I1(x + u(x)) - I0(x)| + lambda_tv * sum_x (|grad u1| + |grad u2|)`
//!
//! After every outer warp the energy of the new iterate is evaluated on the
//! current pyramid level. An iterate that raises it is discarded and the
//! next warp restarts from the previous one, so the accepted energies of a
//! level never increase.

mod io;

pub use io::{read_flo, read_flo_file, write_flo, write_flo_file, FLO_MAGIC};

use thiserror::Error;

use crate::codec::Frame;
use crate::Scalar;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("frame dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("invalid flow parameters: {0}")]
    InvalidParams(String),
    #[error("solver produced a non-finite value at level {level}, warp {warp}")]
    NonFinite { level: usize, warp: usize },
    #[error("malformed flow file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FlowError>;

/// Dense displacement field, planar `[u; v]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> FlowField<T> {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![T::zero(); 2 * width * height],
        }
    }

    pub fn u(&self) -> &[T] {
        &self.data[..self.width * self.height]
    }

    pub fn v(&self) -> &[T] {
        &self.data[self.width * self.height..]
    }

    /// `(u, v)` at a pixel.
    pub fn at(&self, x: usize, y: usize) -> (T, T) {
        let i = y * self.width + x;
        (self.data[i], self.data[self.width * self.height + i])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest `max(|u|, |v|)` over the field.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs().as_f64()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    /// Weight of the total-variation term.
    pub lambda_tv: f64,
    pub outer_warps: usize,
    pub inner_iterations: usize,
    pub pyramid_levels: usize,
    pub pyramid_scale: f64,
    /// Dual step `tau`.
    pub time_step: f64,
    /// Coupling between the data and smoothness sub-problems.
    pub theta: f64,
    /// 3x3 median filter on the flow after every warp.
    pub median_filter: bool,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            lambda_tv: 0.15,
            outer_warps: 10,
            inner_iterations: 30,
            pyramid_levels: 5,
            pyramid_scale: 0.5,
            time_step: 0.25,
            theta: 0.3,
            median_filter: true,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FlowError::InvalidParams(m.into()));
        if !(self.lambda_tv > 0.0 && self.lambda_tv.is_finite()) {
            return bad("lambda_tv must be positive");
        }
        if self.outer_warps == 0 || self.inner_iterations == 0 || self.pyramid_levels == 0 {
            return bad("iteration and level counts must be positive");
        }
        if !(self.pyramid_scale > 0.0 && self.pyramid_scale < 1.0) {
            return bad("pyramid_scale must lie strictly between 0 and 1");
        }
        if !(self.time_step > 0.0 && self.theta > 0.0) {
            return bad("time_step and theta must be positive");
        }
        Ok(())
    }
}

/// Energy after one outer warp. `accepted = false` marks a warp whose
/// result was discarded; `energy` is then the energy of the iterate kept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpRecord {
    /// 0 is full resolution.
    pub level: usize,
    pub warp: usize,
    pub energy: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct FlowSolution<T> {
    pub flow: FlowField<T>,
    /// Per level, the energy of the initial iterate followed by one record
    /// per outer warp, coarsest level first.
    pub trace: Vec<WarpRecord>,
}

#[derive(Debug, Clone)]
struct Image<T> {
    w: usize,
    h: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    fn at(&self, x: usize, y: usize) -> T {
        self.data[y * self.w + x]
    }

    /// Bilinear sample with edge clamping.
    fn sample(&self, x: T, y: T) -> T {
        let maxx = T::of((self.w - 1) as f64);
        let maxy = T::of((self.h - 1) as f64);
        let x = x.max(T::zero()).min(maxx);
        let y = y.max(T::zero()).min(maxy);
        let x0 = x.floor();
        let y0 = y.floor();
        let (fx, fy) = (x - x0, y - y0);
        let (x0, y0) = (x0.to_usize().unwrap_or(0), y0.to_usize().unwrap_or(0));
        let x1 = (x0 + 1).min(self.w - 1);
        let y1 = (y0 + 1).min(self.h - 1);
        let top = self.at(x0, y0) * (T::one() - fx) + self.at(x1, y0) * fx;
        let bottom = self.at(x0, y1) * (T::one() - fx) + self.at(x1, y1) * fx;
        top * (T::one() - fy) + bottom * fy
    }

    /// Central differences, one-sided at the borders.
    fn gradients(&self) -> (Image<T>, Image<T>) {
        let (w, h) = (self.w, self.h);
        let half = T::of(0.5);
        let mut gx = vec![T::zero(); w * h];
        let mut gy = vec![T::zero(); w * h];
        for y in 0..h {
            for x in 0..w {
                let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
                let sx = if xr - xl == 2 { half } else { T::one() };
                let sy = if yd - yu == 2 { half } else { T::one() };
                gx[y * w + x] = (self.at(xr, y) - self.at(xl, y)) * sx;
                gy[y * w + x] = (self.at(x, yd) - self.at(x, yu)) * sy;
            }
        }
        (Image { w, h, data: gx }, Image { w, h, data: gy })
    }

    fn blur(&self, sigma: f64) -> Image<T> {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil() as isize;
        let kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
        let norm: f64 = kernel.iter().sum();
        let kernel: Vec<T> = kernel.iter().map(|&k| T::of(k / norm)).collect();
        let (w, h) = (self.w as isize, self.h as isize);
        let pass = |src: &[T], horizontal: bool| -> Vec<T> {
            let mut out = vec![T::zero(); src.len()];
            for y in 0..h {
                for x in 0..w {
                    let mut acc = T::zero();
                    for (k, &kv) in kernel.iter().enumerate() {
                        let o = k as isize - radius;
                        let (sx, sy) = if horizontal {
                            ((x + o).clamp(0, w - 1), y)
                        } else {
                            (x, (y + o).clamp(0, h - 1))
                        };
                        acc += kv * src[(sy * w + sx) as usize];
                    }
                    out[(y * w + x) as usize] = acc;
                }
            }
            out
        };
        let tmp = pass(&self.data, true);
        Image {
            w: self.w,
            h: self.h,
            data: pass(&tmp, false),
        }
    }

    /// Pixel-centre aligned bilinear resize.
    fn resize(&self, w: usize, h: usize) -> Image<T> {
        let (sx, sy) = (self.w as f64 / w as f64, self.h as f64 / h as f64);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let fx = (x as f64 + 0.5) * sx - 0.5;
                let fy = (y as f64 + 0.5) * sy - 0.5;
                data.push(self.sample(T::of(fx), T::of(fy)));
            }
        }
        Image { w, h, data }
    }
}

/// Luma in [0, 1] with weights 0.299 / 0.587 / 0.114.
pub fn grayscale<T: Scalar>(frame: &Frame) -> Vec<T> {
    frame
        .data
        .chunks_exact(3)
        .map(|p| T::of((0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0))
        .collect()
}

fn check_dims(prev: &Frame, cur: &Frame) -> Result<()> {
    if prev.width != cur.width || prev.height != cur.height {
        return Err(FlowError::DimensionMismatch(prev.width, prev.height, cur.width, cur.height));
    }
    Ok(())
}

/// Forward differences, zero across the last row/column.
fn forward_gradient<T: Scalar>(u: &[T], w: usize, h: usize, gx: &mut [T], gy: &mut [T]) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            gx[i] = if x + 1 < w { u[i + 1] - u[i] } else { T::zero() };
            gy[i] = if y + 1 < h { u[i + w] - u[i] } else { T::zero() };
        }
    }
}

/// Negative adjoint of [`forward_gradient`].
fn divergence<T: Scalar>(px: &[T], py: &[T], w: usize, h: usize, out: &mut [T]) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let dx = match x {
                0 => px[i],
                _ if x + 1 == w => -px[i - 1],
                _ => px[i] - px[i - 1],
            };
            let dy = match y {
                0 => py[i],
                _ if y + 1 == h => -py[i - w],
                _ => py[i] - py[i - w],
            };
            out[i] = dx + dy;
        }
    }
}

fn total_variation<T: Scalar>(u: &[T], w: usize, h: usize) -> f64 {
    let mut gx = vec![T::zero(); u.len()];
    let mut gy = vec![T::zero(); u.len()];
    forward_gradient(u, w, h, &mut gx, &mut gy);
    gx.iter().zip(&gy).map(|(a, b)| (*a * *a + *b * *b).sqrt().as_f64()).sum()
}

fn energy<T: Scalar>(i0: &Image<T>, i1: &Image<T>, u1: &[T], u2: &[T], lambda_tv: f64) -> f64 {
    let (w, h) = (i0.w, i0.h);
    let mut data = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let warped = i1.sample(T::of(x as f64) + u1[i], T::of(y as f64) + u2[i]);
            data += (warped - i0.data[i]).abs().as_f64();
        }
    }
    data + lambda_tv * (total_variation(u1, w, h) + total_variation(u2, w, h))
}

fn median3x3<T: Scalar>(u: &[T], w: usize, h: usize) -> Vec<T> {
    let mut out = vec![T::zero(); u.len()];
    let mut win = Vec::with_capacity(9);
    for y in 0..h {
        for x in 0..w {
            win.clear();
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    win.push(u[sy * w + sx]);
                }
            }
            win.sort_by(|a, b| a.partial_cmp(b).expect("finite flow"));
            out[y * w + x] = win[4];
        }
    }
    out
}

/// Finest-first image pyramid. Levels stop before either side drops
/// below `MIN_LEVEL_SIDE`.
const MIN_LEVEL_SIDE: usize = 8;

fn pyramid<T: Scalar>(base: Image<T>, params: &FlowParams) -> Vec<Image<T>> {
    let sigma = 0.6 * (1.0 / (params.pyramid_scale * params.pyramid_scale) - 1.0).sqrt();
    let mut levels = vec![base];
    while levels.len() < params.pyramid_levels {
        let last = levels.last().expect("non-empty");
        let w = (last.w as f64 * params.pyramid_scale).round() as usize;
        let h = (last.h as f64 * params.pyramid_scale).round() as usize;
        if w < MIN_LEVEL_SIDE || h < MIN_LEVEL_SIDE {
            break;
        }
        let next = last.blur(sigma).resize(w, h);
        levels.push(next);
    }
    levels
}

/// Solves for the flow taking `prev` onto `cur`, i.e. `cur(x + u) ~ prev(x)`.
pub fn tvl1_flow<T: Scalar>(prev: &Frame, cur: &Frame, params: &FlowParams) -> Result<FlowField<T>> {
    Ok(tvl1_flow_traced(prev, cur, params)?.flow)
}

/// [`tvl1_flow`] plus the per-warp energy trace.
pub fn tvl1_flow_traced<T: Scalar>(prev: &Frame, cur: &Frame, params: &FlowParams) -> Result<FlowSolution<T>> {
    check_dims(prev, cur)?;
    params.validate()?;
    let (w, h) = (prev.width, prev.height);
    let p0 = pyramid(Image { w, h, data: grayscale(prev) }, params);
    let p1 = pyramid(Image { w, h, data: grayscale(cur) }, params);

    let lambda = T::of(1.0 / params.lambda_tv);
    let theta = T::of(params.theta);
    let l_t = lambda * theta;
    let taut = T::of(params.time_step / params.theta);
    let tiny = T::of(1e-10);

    let mut trace = Vec::new();
    let mut u1: Vec<T> = Vec::new();
    let mut u2: Vec<T> = Vec::new();
    let mut prev_dims = (0, 0);
    for level in (0..p0.len()).rev() {
        let (i0, i1) = (&p0[level], &p1[level]);
        let (lw, lh) = (i0.w, i0.h);
        let n = lw * lh;
        if u1.is_empty() {
            u1 = vec![T::zero(); n];
            u2 = vec![T::zero(); n];
        } else {
            let (cw, ch) = prev_dims;
            let up = |f: &[T], factor: f64| -> Vec<T> {
                let img = Image { w: cw, h: ch, data: f.to_vec() };
                img.resize(lw, lh).data.into_iter().map(|v| v * T::of(factor)).collect()
            };
            u1 = up(&u1, lw as f64 / cw as f64);
            u2 = up(&u2, lh as f64 / ch as f64);
        }
        prev_dims = (lw, lh);

        let (i1x, i1y) = i1.gradients();
        let mut current = energy(i0, i1, &u1, &u2, params.lambda_tv);
        trace.push(WarpRecord { level, warp: 0, energy: current, accepted: true });

        let zeros = || vec![T::zero(); n];
        let (mut p11, mut p12, mut p21, mut p22) = (zeros(), zeros(), zeros(), zeros());
        let (mut v1, mut v2, mut div1, mut div2) = (zeros(), zeros(), zeros(), zeros());
        let (mut gx, mut gy) = (zeros(), zeros());
        let (mut i1w, mut ix, mut iy, mut grad, mut rho_c) = (zeros(), zeros(), zeros(), zeros(), zeros());

        for warp in 1..=params.outer_warps {
            for y in 0..lh {
                for x in 0..lw {
                    let i = y * lw + x;
                    let (sx, sy) = (T::of(x as f64) + u1[i], T::of(y as f64) + u2[i]);
                    i1w[i] = i1.sample(sx, sy);
                    ix[i] = i1x.sample(sx, sy);
                    iy[i] = i1y.sample(sx, sy);
                    grad[i] = ix[i] * ix[i] + iy[i] * iy[i];
                    rho_c[i] = i1w[i] - ix[i] * u1[i] - iy[i] * u2[i] - i0.data[i];
                }
            }
            let (keep1, keep2) = (u1.clone(), u2.clone());
            for _ in 0..params.inner_iterations {
                for i in 0..n {
                    let rho = rho_c[i] + ix[i] * u1[i] + iy[i] * u2[i];
                    let (d1, d2) = if rho < -l_t * grad[i] {
                        (l_t * ix[i], l_t * iy[i])
                    } else if rho > l_t * grad[i] {
                        (-l_t * ix[i], -l_t * iy[i])
                    } else if grad[i] > tiny {
                        let f = -rho / grad[i];
                        (f * ix[i], f * iy[i])
                    } else {
                        (T::zero(), T::zero())
                    };
                    v1[i] = u1[i] + d1;
                    v2[i] = u2[i] + d2;
                }
                divergence(&p11, &p12, lw, lh, &mut div1);
                divergence(&p21, &p22, lw, lh, &mut div2);
                for i in 0..n {
                    u1[i] = v1[i] + theta * div1[i];
                    u2[i] = v2[i] + theta * div2[i];
                }
                for (u, px, py) in [(&u1, &mut p11, &mut p12), (&u2, &mut p21, &mut p22)] {
                    forward_gradient(u, lw, lh, &mut gx, &mut gy);
                    for i in 0..n {
                        let ng = T::one() + taut * (gx[i] * gx[i] + gy[i] * gy[i]).sqrt();
                        px[i] = (px[i] + taut * gx[i]) / ng;
                        py[i] = (py[i] + taut * gy[i]) / ng;
                    }
                }
            }
            if params.median_filter {
                u1 = median3x3(&u1, lw, lh);
                u2 = median3x3(&u2, lw, lh);
            }
            if !u1.iter().chain(&u2).all(|v| v.is_finite()) {
                return Err(FlowError::NonFinite { level, warp });
            }
            let e = energy(i0, i1, &u1, &u2, params.lambda_tv);
            if e > current + 1e-6 * current.max(1e-12) {
                u1 = keep1;
                u2 = keep2;
                trace.push(WarpRecord { level, warp, energy: current, accepted: false });
                continue;
            }
            current = e;
            trace.push(WarpRecord { level, warp, energy: e, accepted: true });
        }
    }
    let mut data = u1;
    data.extend(u2);
    Ok(FlowSolution {
        flow: FlowField { width: w, height: h, data },
        trace,
    })
}

/// Full-resolution TV-L1 energy of `flow` for the pair, grey levels in [0, 1].
pub fn flow_energy<T: Scalar>(prev: &Frame, cur: &Frame, flow: &FlowField<T>, lambda_tv: f64) -> Result<f64> {
    check_dims(prev, cur)?;
    if flow.width != prev.width || flow.height != prev.height || flow.data.len() != 2 * prev.width * prev.height {
        return Err(FlowError::DimensionMismatch(flow.width, flow.height, prev.width, prev.height));
    }
    let (w, h) = (prev.width, prev.height);
    let i0 = Image { w, h, data: grayscale::<T>(prev) };
    let i1 = Image { w, h, data: grayscale::<T>(cur) };
    Ok(energy(&i0, &i1, flow.u(), flow.v(), lambda_tv))
}

