use super::{shape_err, Result, Tensor};
use crate::Scalar;

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

fn grad_if<T: Scalar>(t: &Tensor<T>, f: impl FnOnce() -> Vec<T>) -> Option<Vec<T>> {
    t.requires_grad().then(f)
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| x + y).collect();
    let (ta, tb) = (a.requires_grad(), b.requires_grad());
    Ok(Tensor::from_op(
        "add",
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        move |g| vec![ta.then(|| g.to_vec()), tb.then(|| g.to_vec())],
    ))
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("sub", a, b)?;
    let data = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| x - y).collect();
    let (ta, tb) = (a.requires_grad(), b.requires_grad());
    Ok(Tensor::from_op(
        "sub",
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        move |g| {
            vec![
                ta.then(|| g.to_vec()),
                tb.then(|| g.iter().map(|&v| -v).collect()),
            ]
        },
    ))
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| x * y).collect();
    let (ca, cb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        "mul",
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        move |g| {
            vec![
                grad_if(&ca, || g.iter().zip(cb.data().iter()).map(|(&g, &y)| g * y).collect()),
                grad_if(&cb, || g.iter().zip(ca.data().iter()).map(|(&g, &x)| g * x).collect()),
            ]
        },
    ))
}

pub fn scale<T: Scalar>(a: &Tensor<T>, factor: T) -> Tensor<T> {
    let data = a.data().iter().map(|&x| x * factor).collect();
    Tensor::from_op("scale", a.shape().to_vec(), data, vec![a.clone()], move |g| {
        vec![Some(g.iter().map(|&v| v * factor).collect())]
    })
}

pub fn relu<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let data: Vec<T> = a.data().iter().map(|&x| if x < T::zero() { T::zero() } else { x }).collect();
    let mask: Vec<bool> = data.iter().map(|&y| y > T::zero()).collect();
    Tensor::from_op("relu", a.shape().to_vec(), data, vec![a.clone()], move |g| {
        vec![Some(
            g.iter()
                .zip(&mask)
                .map(|(&g, &m)| if m { g } else { T::zero() })
                .collect(),
        )]
    })
}

/// Subgradient 0 at the origin.
pub fn abs<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let data = a.data().iter().map(|&x| x.abs()).collect();
    let src = a.clone();
    Tensor::from_op("abs", a.shape().to_vec(), data, vec![a.clone()], move |g| {
        vec![Some(
            g.iter()
                .zip(src.data().iter())
                .map(|(&g, &x)| {
                    if x > T::zero() {
                        g
                    } else if x < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                })
                .collect(),
        )]
    })
}

pub fn square<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let data = a.data().iter().map(|&x| x * x).collect();
    let src = a.clone();
    Tensor::from_op("square", a.shape().to_vec(), data, vec![a.clone()], move |g| {
        let two = T::of(2.0);
        vec![Some(
            g.iter().zip(src.data().iter()).map(|(&g, &x)| two * x * g).collect(),
        )]
    })
}

pub fn sum<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let s = a.data().iter().copied().sum();
    let n = a.numel();
    Tensor::from_op("sum", vec![], vec![s], vec![a.clone()], move |g| {
        vec![Some(vec![g[0]; n])]
    })
}

pub fn mean<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let n = a.numel();
    let inv = T::one() / T::of(n as f64);
    let s: T = a.data().iter().copied().sum();
    Tensor::from_op("mean", vec![], vec![s * inv], vec![a.clone()], move |g| {
        vec![Some(vec![g[0] * inv; n])]
    })
}

pub fn reshape<T: Scalar>(a: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    if super::numel(shape) != a.numel() {
        return shape_err("reshape", format!("{:?} -> {:?}", a.shape(), shape));
    }
    Ok(Tensor::from_op(
        "reshape",
        shape.to_vec(),
        a.to_vec(),
        vec![a.clone()],
        |g| vec![Some(g.to_vec())],
    ))
}

fn rows<T: Scalar>(op: &'static str, a: &Tensor<T>) -> Result<(usize, usize)> {
    match a.shape() {
        [] => shape_err(op, "scalar input"),
        s => {
            let k = *s.last().unwrap();
            if k == 0 {
                return shape_err(op, "empty class axis");
            }
            Ok((a.numel() / k, k))
        }
    }
}

fn softmax_rows<T: Scalar>(x: &[T], k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (row, o) in x.chunks_exact(k).zip(out.chunks_exact_mut(k)) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for (o, &v) in o.iter_mut().zip(row) {
            *o = (v - m).exp();
            s += *o;
        }
        o.iter_mut().for_each(|v| *v /= s);
    }
    out
}

/// Softmax over the last axis.
pub fn softmax<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, k) = rows("softmax", a)?;
    let y = softmax_rows(&a.data(), k);
    let saved = y.clone();
    Ok(Tensor::from_op("softmax", a.shape().to_vec(), y, vec![a.clone()], move |g| {
        let mut dx = vec![T::zero(); g.len()];
        for ((gr, yr), dr) in g.chunks_exact(k).zip(saved.chunks_exact(k)).zip(dx.chunks_exact_mut(k)) {
            let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
            for ((d, &gi), &yi) in dr.iter_mut().zip(gr).zip(yr) {
                *d = yi * (gi - dot);
            }
        }
        vec![Some(dx)]
    }))
}

/// Log-softmax over the last axis.
pub fn log_softmax<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, k) = rows("log_softmax", a)?;
    let p = softmax_rows(&a.data(), k);
    let y: Vec<T> = p.iter().map(|&v| v.ln()).collect();
    Ok(Tensor::from_op("log_softmax", a.shape().to_vec(), y, vec![a.clone()], move |g| {
        let mut dx = vec![T::zero(); g.len()];
        for ((gr, pr), dr) in g.chunks_exact(k).zip(p.chunks_exact(k)).zip(dx.chunks_exact_mut(k)) {
            let s: T = gr.iter().copied().sum();
            for ((d, &gi), &pi) in dr.iter_mut().zip(gr).zip(pr) {
                *d = gi - pi * s;
            }
        }
        vec![Some(dx)]
    }))
}

fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}

/// Mean over rows of `-log softmax(logits)[label]`. `logits` is `[N, K]`.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let (n, k) = rows("cross_entropy", logits)?;
    if labels.len() != n {
        return shape_err("cross_entropy", format!("{n} rows, {} labels", labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(super::TensorError::Invalid(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let x = logits.data();
    let mut total = T::zero();
    for (row, &l) in x.chunks_exact(k).zip(labels) {
        total += log_sum_exp(row) - row[l];
    }
    let inv_n = T::one() / T::of(n as f64);
    let p = softmax_rows(&x, k);
    let labels = labels.to_vec();
    drop(x);
    Ok(Tensor::from_op(
        "cross_entropy",
        vec![],
        vec![total * inv_n],
        vec![logits.clone()],
        move |g| {
            let mut dx = p.clone();
            for (row, &l) in dx.chunks_exact_mut(k).zip(&labels) {
                row[l] -= T::one();
                row.iter_mut().for_each(|v| *v *= g[0] * inv_n);
            }
            vec![Some(dx)]
        },
    ))
}

/// Mean over rows of `-sum_k target[k] * log softmax(logits)[k]`, with
/// `target` treated as a constant distribution.
pub fn soft_cross_entropy<T: Scalar>(logits: &Tensor<T>, target: &[T]) -> Result<Tensor<T>> {
    let (n, k) = rows("soft_cross_entropy", logits)?;
    if target.len() != logits.numel() {
        return shape_err(
            "soft_cross_entropy",
            format!("{} logits, {} targets", logits.numel(), target.len()),
        );
    }
    let x = logits.data();
    let mut total = T::zero();
    for (row, t) in x.chunks_exact(k).zip(target.chunks_exact(k)) {
        let lse = log_sum_exp(row);
        total += row.iter().zip(t).map(|(&v, &p)| p * (lse - v)).sum::<T>();
    }
    let inv_n = T::one() / T::of(n as f64);
    let p = softmax_rows(&x, k);
    drop(x);
    let target = target.to_vec();
    Ok(Tensor::from_op(
        "soft_cross_entropy",
        vec![],
        vec![total * inv_n],
        vec![logits.clone()],
        move |g| {
            let mut dx = vec![T::zero(); p.len()];
            for ((d, pr), tr) in dx.chunks_exact_mut(k).zip(p.chunks_exact(k)).zip(target.chunks_exact(k)) {
                let mass: T = tr.iter().copied().sum();
                for ((d, &pi), &ti) in d.iter_mut().zip(pr).zip(tr) {
                    *d = (mass * pi - ti) * g[0] * inv_n;
                }
            }
            vec![Some(dx)]
        },
    ))
}

/// Row-wise softmax of plain values, rows of length `k` (no graph).
pub fn softmax_values<T: Scalar>(x: &[T], k: usize) -> Vec<T> {
    softmax_rows(x, k)
}
