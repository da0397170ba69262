use super::{shape_err, Result, Tensor};
use crate::Scalar;

/// Running statistics of one batch-norm layer. Both tensors are untracked.
#[derive(Debug, Clone)]
pub struct BatchNormState<T: Scalar> {
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    /// Weight of the old running value: `r = momentum * r + (1 - momentum) * batch`.
    pub momentum: T,
    pub eps: T,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum: T::of(0.9),
            eps: T::of(1e-5),
        }
    }
}

/// Per-channel normalisation over every axis except axis 1.
///
/// Training mode normalises with biased batch statistics and folds the
/// unbiased batch variance into the running estimate; eval mode uses the
/// running statistics and leaves them untouched.
pub fn batch_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    state: &BatchNormState<T>,
    train: bool,
) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() < 2 {
        return shape_err("batch_norm", format!("input {s:?}"));
    }
    let (n, c) = (s[0], s[1]);
    let inner: usize = s[2..].iter().product();
    if gamma.shape() != [c] || beta.shape() != [c] {
        return shape_err("batch_norm", format!("{c} channels, gamma {:?}", gamma.shape()));
    }
    let m = n * inner;
    if m == 0 {
        return shape_err("batch_norm", "empty input");
    }
    let xd = x.data();
    let idx = move |b: usize, ch: usize| (b * c + ch) * inner;

    let (mean, var) = if train {
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut acc = T::zero();
            for b in 0..n {
                acc += xd[idx(b, ch)..idx(b, ch) + inner].iter().copied().sum::<T>();
            }
            let mu = acc / T::of(m as f64);
            let mut sq = T::zero();
            for b in 0..n {
                sq += xd[idx(b, ch)..idx(b, ch) + inner]
                    .iter()
                    .map(|&v| (v - mu) * (v - mu))
                    .sum::<T>();
            }
            mean[ch] = mu;
            var[ch] = sq / T::of(m as f64);
        }
        let mom = state.momentum;
        let unbias = if m > 1 { T::of(m as f64 / (m - 1) as f64) } else { T::one() };
        {
            let mut rm = state.running_mean.data_mut();
            let mut rv = state.running_var.data_mut();
            for ch in 0..c {
                rm[ch] = mom * rm[ch] + (T::one() - mom) * mean[ch];
                rv[ch] = mom * rv[ch] + (T::one() - mom) * var[ch] * unbias;
            }
        }
        (mean, var)
    } else {
        (state.running_mean.to_vec(), state.running_var.to_vec())
    };

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + state.eps).sqrt()).collect();
    let gd = gamma.data();
    let bd = beta.data();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut out = vec![T::zero(); xd.len()];
    for b in 0..n {
        for ch in 0..c {
            let r = idx(b, ch)..idx(b, ch) + inner;
            for ((h, o), &v) in xhat[r.clone()].iter_mut().zip(&mut out[r.clone()]).zip(&xd[r]) {
                *h = (v - mean[ch]) * inv_std[ch];
                *o = gd[ch] * *h + bd[ch];
            }
        }
    }
    drop((xd, gd, bd));

    let g = gamma.clone();
    let (tx, tg, tb) = (x.requires_grad(), gamma.requires_grad(), beta.requires_grad());
    Ok(Tensor::from_op(
        "batch_norm",
        s.to_vec(),
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        move |gout| {
            let gd = g.data();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for b in 0..n {
                for ch in 0..c {
                    let r = idx(b, ch)..idx(b, ch) + inner;
                    for (&go, &h) in gout[r.clone()].iter().zip(&xhat[r]) {
                        dgamma[ch] += go * h;
                        dbeta[ch] += go;
                    }
                }
            }
            let dx = tx.then(|| {
                let mut dx = vec![T::zero(); gout.len()];
                let mf = T::of(m as f64);
                for b in 0..n {
                    for ch in 0..c {
                        let r = idx(b, ch)..idx(b, ch) + inner;
                        let k = gd[ch] * inv_std[ch];
                        for ((d, &go), &h) in dx[r.clone()].iter_mut().zip(&gout[r.clone()]).zip(&xhat[r]) {
                            *d = if train {
                                k * (go - dbeta[ch] / mf - h * dgamma[ch] / mf)
                            } else {
                                k * go
                            };
                        }
                    }
                }
                dx
            });
            vec![dx, tg.then_some(dgamma), tb.then_some(dbeta)]
        },
    ))
}

/// Max pooling over (t, h, w) windows without padding. `x` is `[N, C, T, H, W]`.
pub fn max_pool3d<T: Scalar>(x: &Tensor<T>, kernel: [usize; 3], stride: [usize; 3]) -> Result<Tensor<T>> {
    let s = x.shape().to_vec();
    if s.len() != 5 || kernel.contains(&0) || stride.contains(&0) {
        return shape_err("max_pool3d", format!("input {s:?}, kernel {kernel:?}, stride {stride:?}"));
    }
    if s[2] < kernel[0] || s[3] < kernel[1] || s[4] < kernel[2] {
        return shape_err("max_pool3d", format!("kernel {kernel:?} exceeds input {s:?}"));
    }
    let (t, h, w) = (s[2], s[3], s[4]);
    let to = (t - kernel[0]) / stride[0] + 1;
    let ho = (h - kernel[1]) / stride[1] + 1;
    let wo = (w - kernel[2]) / stride[2] + 1;
    let planes = s[0] * s[1];
    let xd = x.data();
    let mut out = Vec::with_capacity(planes * to * ho * wo);
    let mut arg = Vec::with_capacity(out.capacity());
    for pl in 0..planes {
        let base = pl * t * h * w;
        for a in 0..to {
            for b in 0..ho {
                for c in 0..wo {
                    let mut best = T::neg_infinity();
                    let mut best_i = base;
                    for i in 0..kernel[0] {
                        for j in 0..kernel[1] {
                            for k in 0..kernel[2] {
                                let src = base + ((a * stride[0] + i) * h + b * stride[1] + j) * w + c * stride[2] + k;
                                if xd[src] > best || xd[src].is_nan() && !best.is_nan() {
                                    best = xd[src];
                                    best_i = src;
                                }
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_i);
                }
            }
        }
    }
    let len = xd.len();
    drop(xd);
    Ok(Tensor::from_op(
        "max_pool3d",
        vec![s[0], s[1], to, ho, wo],
        out,
        vec![x.clone()],
        move |g| {
            let mut dx = vec![T::zero(); len];
            for (&gi, &src) in g.iter().zip(&arg) {
                dx[src] += gi;
            }
            vec![Some(dx)]
        },
    ))
}

/// Max pooling on `[N, C, H, W]`.
pub fn max_pool2d<T: Scalar>(x: &Tensor<T>, kernel: [usize; 2], stride: [usize; 2]) -> Result<Tensor<T>> {
    let s = x.shape().to_vec();
    if s.len() != 4 {
        return shape_err("max_pool2d", format!("input {s:?}"));
    }
    let y = max_pool3d(
        &x.reshape(&[s[0], s[1], 1, s[2], s[3]])?,
        [1, kernel[0], kernel[1]],
        [1, stride[0], stride[1]],
    )?;
    let ys = y.shape().to_vec();
    y.reshape(&[ys[0], ys[1], ys[3], ys[4]])
}

/// Mean over every axis after the channel axis: `[N, C, ...] -> [N, C]`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape().to_vec();
    if s.len() < 3 {
        return shape_err("global_avg_pool", format!("input {s:?}"));
    }
    let inner: usize = s[2..].iter().product();
    let inv = T::one() / T::of(inner as f64);
    let out = x
        .data()
        .chunks_exact(inner)
        .map(|c| c.iter().copied().sum::<T>() * inv)
        .collect();
    Ok(Tensor::from_op(
        "global_avg_pool",
        vec![s[0], s[1]],
        out,
        vec![x.clone()],
        move |g| {
            let mut dx = Vec::with_capacity(g.len() * inner);
            for &gi in g {
                dx.extend(std::iter::repeat_n(gi * inv, inner));
            }
            vec![Some(dx)]
        },
    ))
}

/// `x [N, F] * weight[O, F]^T + bias[O]`.
pub fn linear<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape().to_vec(), weight.shape().to_vec());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
        return shape_err("linear", format!("input {xs:?}, weight {ws:?}"));
    }
    let (n, f, o) = (xs[0], xs[1], ws[0]);
    if let Some(b) = bias {
        if b.shape() != [o] {
            return shape_err("linear", format!("bias {:?} for {o} outputs", b.shape()));
        }
    }
    let mut out = vec![T::zero(); n * o];
    if let Some(b) = bias {
        for row in out.chunks_exact_mut(o) {
            row.copy_from_slice(&b.data());
        }
    }
    let beta = if bias.is_some() { T::one() } else { T::zero() };
    T::gemm(n, f, o, T::one(), &x.data(), (f as isize, 1), &weight.data(), (1, f as isize), beta, &mut out, (o as isize, 1));

    let mut parents = vec![x.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let (xc, wc) = (x.clone(), weight.clone());
    let has_bias = bias.is_some();
    Ok(Tensor::from_op("linear", vec![n, o], out, parents, move |g| {
        let dx = xc.requires_grad().then(|| {
            let mut dx = vec![T::zero(); n * f];
            T::gemm(n, o, f, T::one(), g, (o as isize, 1), &wc.data(), (f as isize, 1), T::zero(), &mut dx, (f as isize, 1));
            dx
        });
        let dw = wc.requires_grad().then(|| {
            let mut dw = vec![T::zero(); o * f];
            T::gemm(o, n, f, T::one(), g, (1, o as isize), &xc.data(), (f as isize, 1), T::zero(), &mut dw, (f as isize, 1));
            dw
        });
        let mut grads = vec![dx, dw];
        if has_bias {
            let mut db = vec![T::zero(); o];
            for row in g.chunks_exact(o) {
                db.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
            }
            grads.push(Some(db));
        }
        grads
    }))
}
