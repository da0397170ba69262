use super::{Result, Tensor, TensorError};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

/// One momentum-SGD update in place:
/// `v = momentum * v + (g + wd * p)`, `p -= lr * v`.
pub fn sgd_update<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    velocity: &mut [T],
    cfg: &SgdConfig,
) -> Result<()> {
    if param.len() != grad.len() || param.len() != velocity.len() {
        return Err(TensorError::Shape {
            op: "sgd",
            detail: format!("param {}, grad {}, velocity {}", param.len(), grad.len(), velocity.len()),
        });
    }
    let (lr, mom, wd) = (T::of(cfg.lr), T::of(cfg.momentum), T::of(cfg.weight_decay));
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = mom * *v + g + wd * *p;
        *p -= lr * *v;
    }
    Ok(())
}

/// Momentum SGD over a fixed, ordered parameter list.
#[derive(Debug)]
pub struct Sgd<T: Scalar> {
    pub cfg: SgdConfig,
    params: Vec<Tensor<T>>,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(params: Vec<Tensor<T>>, cfg: SgdConfig) -> Self {
        let velocity = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
        Self { cfg, params, velocity }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// Applies accumulated gradients and clears them. Parameters without a
    /// gradient are left alone.
    pub fn step(&mut self) -> Result<()> {
        for (p, v) in self.params.iter().zip(self.velocity.iter_mut()) {
            let Some(g) = p.grad() else { continue };
            sgd_update(&mut p.data_mut(), &g, v, &self.cfg)?;
            p.zero_grad();
        }
        Ok(())
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(Tensor::zero_grad);
    }
}
