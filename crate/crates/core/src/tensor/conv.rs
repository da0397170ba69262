//! 2D/3D convolution (cross-correlation) via im2col + GEMM, and inflation of
//! 2D kernels into 3D ones.

use super::{shape_err, Result, Tensor, TensorError};
use crate::Scalar;

/// How out-of-range temporal taps are filled. Spatial padding is always zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TemporalPadding {
    #[default]
    Zero,
    Replicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3dConfig {
    /// (t, h, w)
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub temporal_padding: TemporalPadding,
}

impl Default for Conv3dConfig {
    fn default() -> Self {
        Self {
            stride: [1; 3],
            padding: [0; 3],
            temporal_padding: TemporalPadding::Zero,
        }
    }
}

fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    (stride > 0 && padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

struct Geometry {
    n: usize,
    ci: usize,
    t: usize,
    h: usize,
    w: usize,
    co: usize,
    kt: usize,
    kh: usize,
    kw: usize,
    to: usize,
    ho: usize,
    wo: usize,
    cfg: Conv3dConfig,
}

impl Geometry {
    fn k(&self) -> usize {
        self.ci * self.kt * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.to * self.ho * self.wo
    }

    fn in_len(&self) -> usize {
        self.ci * self.t * self.h * self.w
    }

    /// Source temporal index for an output step and tap, if any.
    #[inline]
    fn src_t(&self, to: usize, a: usize) -> Option<usize> {
        let ti = (to * self.cfg.stride[0] + a) as isize - self.cfg.padding[0] as isize;
        if ti >= 0 && (ti as usize) < self.t {
            Some(ti as usize)
        } else {
            match self.cfg.temporal_padding {
                TemporalPadding::Zero => None,
                TemporalPadding::Replicate => Some(ti.clamp(0, self.t as isize - 1) as usize),
            }
        }
    }

    /// Valid output column range `[lo, hi)` along w for tap `c`, plus the
    /// source column of `lo`.
    #[inline]
    fn w_range(&self, c: usize) -> (usize, usize) {
        let (s, p) = (self.cfg.stride[2], self.cfg.padding[2]);
        // wi = wo*s + c - p must lie in [0, w)
        let lo = if c >= p { 0 } else { (p - c).div_ceil(s) };
        let hi_num = self.w + p;
        let hi = if hi_num > c { ((hi_num - c - 1) / s + 1).min(self.wo) } else { 0 };
        (lo.min(hi), hi)
    }

    fn im2col<T: Scalar>(&self, x: &[T], col: &mut [T]) {
        let p = self.p();
        let (sh, ph) = (self.cfg.stride[1], self.cfg.padding[1]);
        let sw = self.cfg.stride[2];
        let pw = self.cfg.padding[2] as isize;
        let mut row = 0;
        for ci in 0..self.ci {
            for a in 0..self.kt {
                for b in 0..self.kh {
                    for c in 0..self.kw {
                        let dst = &mut col[row * p..(row + 1) * p];
                        let (lo, hi) = self.w_range(c);
                        for to in 0..self.to {
                            let ti = self.src_t(to, a);
                            for ho in 0..self.ho {
                                let d = &mut dst[(to * self.ho + ho) * self.wo..][..self.wo];
                                let hi_idx = (ho * sh + b) as isize - ph as isize;
                                match ti {
                                    Some(ti) if hi_idx >= 0 && (hi_idx as usize) < self.h => {
                                        let base = ((ci * self.t + ti) * self.h + hi_idx as usize) * self.w;
                                        d[..lo].fill(T::zero());
                                        d[hi..].fill(T::zero());
                                        let src0 = (lo * sw) as isize + c as isize - pw;
                                        if sw == 1 {
                                            let s = base + src0 as usize;
                                            d[lo..hi].copy_from_slice(&x[s..s + (hi - lo)]);
                                        } else {
                                            for (j, v) in d[lo..hi].iter_mut().enumerate() {
                                                *v = x[base + src0 as usize + j * sw];
                                            }
                                        }
                                    }
                                    _ => d.fill(T::zero()),
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, col: &[T], dx: &mut [T]) {
        let p = self.p();
        let (sh, ph) = (self.cfg.stride[1], self.cfg.padding[1]);
        let sw = self.cfg.stride[2];
        let pw = self.cfg.padding[2] as isize;
        let mut row = 0;
        for ci in 0..self.ci {
            for a in 0..self.kt {
                for b in 0..self.kh {
                    for c in 0..self.kw {
                        let src = &col[row * p..(row + 1) * p];
                        let (lo, hi) = self.w_range(c);
                        for to in 0..self.to {
                            let Some(ti) = self.src_t(to, a) else { continue };
                            for ho in 0..self.ho {
                                let hi_idx = (ho * sh + b) as isize - ph as isize;
                                if hi_idx < 0 || hi_idx as usize >= self.h {
                                    continue;
                                }
                                let s = &src[(to * self.ho + ho) * self.wo..][..self.wo];
                                let base = ((ci * self.t + ti) * self.h + hi_idx as usize) * self.w;
                                let src0 = ((lo * sw) as isize + c as isize - pw) as usize;
                                for (j, &v) in s[lo..hi].iter().enumerate() {
                                    dx[base + src0 + j * sw] += v;
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }
}

/// 3D convolution. `x` is `[N, C_in, T, H, W]`, `weight` is
/// `[C_out, C_in, kt, kh, kw]`, `bias` is `[C_out]`.
pub fn conv3d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    cfg: Conv3dConfig,
) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape(), weight.shape());
    if xs.len() != 5 || ws.len() != 5 {
        return shape_err("conv3d", format!("input {xs:?}, weight {ws:?}"));
    }
    if xs[1] != ws[1] {
        return shape_err("conv3d", format!("channels: input {xs:?}, weight {ws:?}"));
    }
    if ws.iter().any(|&d| d == 0) || cfg.stride.iter().any(|&s| s == 0) {
        return Err(TensorError::Invalid(format!(
            "conv3d: weight {ws:?}, stride {:?}",
            cfg.stride
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [ws[0]] {
            return shape_err("conv3d", format!("bias {:?} for {} outputs", b.shape(), ws[0]));
        }
    }
    let extents = (
        out_extent(xs[2], ws[2], cfg.stride[0], cfg.padding[0]),
        out_extent(xs[3], ws[3], cfg.stride[1], cfg.padding[1]),
        out_extent(xs[4], ws[4], cfg.stride[2], cfg.padding[2]),
    );
    let (Some(to), Some(ho), Some(wo)) = extents else {
        return shape_err("conv3d", format!("kernel {ws:?} larger than padded input {xs:?}"));
    };
    let g = Geometry {
        n: xs[0],
        ci: xs[1],
        t: xs[2],
        h: xs[3],
        w: xs[4],
        co: ws[0],
        kt: ws[2],
        kh: ws[3],
        kw: ws[4],
        to,
        ho,
        wo,
        cfg,
    };
    let (k, p) = (g.k(), g.p());
    let mut out = vec![T::zero(); g.n * g.co * p];
    let mut col = vec![T::zero(); k * p];
    {
        let xd = x.data();
        let wd = weight.data();
        for n in 0..g.n {
            g.im2col(&xd[n * g.in_len()..(n + 1) * g.in_len()], &mut col);
            let o = &mut out[n * g.co * p..(n + 1) * g.co * p];
            if let Some(b) = bias {
                for (row, &bv) in o.chunks_exact_mut(p).zip(b.data().iter()) {
                    row.fill(bv);
                }
            }
            let beta = if bias.is_some() { T::one() } else { T::zero() };
            T::gemm(g.co, k, p, T::one(), &wd, (k as isize, 1), &col, (p as isize, 1), beta, o, (p as isize, 1));
        }
    }

    let mut parents = vec![x.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let (xc, wc) = (x.clone(), weight.clone());
    let has_bias = bias.is_some();
    let bias_tracked = bias.is_some_and(Tensor::requires_grad);
    let shape = vec![g.n, g.co, to, ho, wo];
    Ok(Tensor::from_op("conv3d", shape, out, parents, move |gout| {
        let (k, p) = (g.k(), g.p());
        let xd = xc.data();
        let wd = wc.data();
        let mut dx = xc.requires_grad().then(|| vec![T::zero(); xd.len()]);
        let mut dw = wc.requires_grad().then(|| vec![T::zero(); wd.len()]);
        let mut db = bias_tracked.then(|| vec![T::zero(); g.co]);
        let mut col = vec![T::zero(); k * p];
        let mut dcol = vec![T::zero(); if dx.is_some() { k * p } else { 0 }];
        for n in 0..g.n {
            let go = &gout[n * g.co * p..(n + 1) * g.co * p];
            if let Some(db) = db.as_mut() {
                for (acc, row) in db.iter_mut().zip(go.chunks_exact(p)) {
                    *acc += row.iter().copied().sum::<T>();
                }
            }
            if let Some(dw) = dw.as_mut() {
                g.im2col(&xd[n * g.in_len()..(n + 1) * g.in_len()], &mut col);
                // dW[co, k] += dY[co, p] * col[k, p]^T
                T::gemm(g.co, p, k, T::one(), go, (p as isize, 1), &col, (1, p as isize), T::one(), dw, (k as isize, 1));
            }
            if let Some(dx) = dx.as_mut() {
                // dcol[k, p] = W[co, k]^T * dY[co, p]
                T::gemm(k, g.co, p, T::one(), &wd, (1, k as isize), go, (p as isize, 1), T::zero(), &mut dcol, (p as isize, 1));
                g.col2im(&dcol, &mut dx[n * g.in_len()..(n + 1) * g.in_len()]);
            }
        }
        let mut grads = vec![dx, dw];
        if has_bias {
            grads.push(db);
        }
        grads
    }))
}

/// 2D convolution. `x` is `[N, C_in, H, W]`, `weight` is `[C_out, C_in, kh, kw]`.
/// Runs the 3D kernel with a unit temporal extent.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: [usize; 2],
    padding: [usize; 2],
) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape().to_vec(), weight.shape().to_vec());
    if xs.len() != 4 || ws.len() != 4 {
        return shape_err("conv2d", format!("input {xs:?}, weight {ws:?}"));
    }
    let x5 = x.reshape(&[xs[0], xs[1], 1, xs[2], xs[3]])?;
    let w5 = weight.reshape(&[ws[0], ws[1], 1, ws[2], ws[3]])?;
    let cfg = Conv3dConfig {
        stride: [1, stride[0], stride[1]],
        padding: [0, padding[0], padding[1]],
        temporal_padding: TemporalPadding::Zero,
    };
    let y = conv3d(&x5, &w5, bias, cfg)?;
    let s = y.shape().to_vec();
    y.reshape(&[s[0], s[1], s[3], s[4]])
}

/// Plain 2D kernel bank, `weight` laid out `[out, in, kh, kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights2D<T> {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Plain 3D kernel bank, `weight` laid out `[out, in, kt, kh, kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights3D<T> {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kt: usize,
    pub kh: usize,
    pub kw: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InflationMode {
    /// Every temporal slice is `w2d / kt`.
    #[default]
    Mean,
    /// Centre slice is `w2d`, the rest are zero.
    Center,
}

impl std::str::FromStr for InflationMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mean" => Ok(Self::Mean),
            "center" => Ok(Self::Center),
            _ => Err(format!("unknown inflation mode `{s}`")),
        }
    }
}

impl<T: Scalar> ConvWeights2D<T> {
    pub fn validate(&self) -> Result<()> {
        if [self.out_channels, self.in_channels, self.kh, self.kw].contains(&0) {
            return Err(TensorError::Invalid("conv weights need positive extents".into()));
        }
        if self.weight.len() != self.out_channels * self.in_channels * self.kh * self.kw {
            return Err(TensorError::DataLength {
                len: self.weight.len(),
                shape: vec![self.out_channels, self.in_channels, self.kh, self.kw],
            });
        }
        if !self.bias.is_empty() && self.bias.len() != self.out_channels {
            return shape_err("conv weights", "bias length");
        }
        Ok(())
    }
}

/// Builds a 3D kernel bank whose response to a temporally constant input
/// (mean mode) or to the centre frame (centre mode) reproduces the 2D one.
pub fn inflate_2d_to_3d<T: Scalar>(
    w2d: &ConvWeights2D<T>,
    kt: usize,
    mode: InflationMode,
) -> Result<ConvWeights3D<T>> {
    if kt < 1 {
        return Err(TensorError::Invalid("temporal extent must be at least 1".into()));
    }
    w2d.validate()?;
    let plane = w2d.kh * w2d.kw;
    let scale = T::one() / T::of(kt as f64);
    let centre = kt / 2;
    let mut weight = Vec::with_capacity(w2d.weight.len() * kt);
    for filter in w2d.weight.chunks_exact(plane) {
        for a in 0..kt {
            match mode {
                InflationMode::Mean => weight.extend(filter.iter().map(|&v| v * scale)),
                InflationMode::Center if a == centre => weight.extend_from_slice(filter),
                InflationMode::Center => weight.extend(std::iter::repeat_n(T::zero(), plane)),
            }
        }
    }
    Ok(ConvWeights3D {
        out_channels: w2d.out_channels,
        in_channels: w2d.in_channels,
        kt,
        kh: w2d.kh,
        kw: w2d.kw,
        weight,
        bias: w2d.bias.clone(),
    })
}
