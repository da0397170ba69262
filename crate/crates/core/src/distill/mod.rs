//! Classification, feature-mimicry and soft-label losses for training the
//! P-stream against a frozen flow teacher.
//!
//! `L_p = CE + lambda1 * D(f_p, f_of) + lambda2 * S(z_p, z_of)`

use std::str::FromStr;

use crate::tensor::{self, softmax_values, Result, Tensor, TensorError};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureNorm {
    #[default]
    L1,
    L2,
}

impl FromStr for FeatureNorm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "l1" => Ok(Self::L1),
            "l2" => Ok(Self::L2),
            _ => Err(format!("unknown feature norm `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Feature-distance weight.
    pub lambda1: f64,
    /// Soft-label weight.
    pub lambda2: f64,
    pub temperature: f64,
    pub norm: FeatureNorm,
    /// Multiply the soft-label term by `T^2`.
    pub temperature_squared: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda1: 50.0,
            lambda2: 0.0,
            temperature: 8.0,
            norm: FeatureNorm::L1,
            temperature_squared: false,
        }
    }
}

impl LossConfig {
    /// Plain cross-entropy.
    pub fn supervised() -> Self {
        Self {
            lambda1: 0.0,
            lambda2: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(TensorError::Invalid("loss weights must be non-negative".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(TensorError::Invalid("temperature must be positive".into()));
        }
        Ok(())
    }

    pub fn needs_teacher(&self) -> bool {
        self.lambda1 > 0.0 || self.lambda2 > 0.0
    }
}

/// Batch mean of `-log softmax(logits)[label]`.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    tensor::cross_entropy(logits, labels)
}

/// Mean over every element of `|f_p - f_of|` or `(f_p - f_of)^2`. The
/// teacher feature is detached.
pub fn feature_distance<T: Scalar>(f_p: &Tensor<T>, f_of: &Tensor<T>, norm: FeatureNorm) -> Result<Tensor<T>> {
    if f_p.shape() != f_of.shape() {
        return Err(TensorError::Shape {
            op: "feature_distance",
            detail: format!("{:?} vs {:?}", f_p.shape(), f_of.shape()),
        });
    }
    let d = f_p.sub(&f_of.detach())?;
    Ok(match norm {
        FeatureNorm::L1 => d.abs().mean(),
        FeatureNorm::L2 => d.square().mean(),
    })
}

/// Cross-entropy from `softmax(teacher / T)` to `softmax(student / T)`,
/// averaged over the batch; no gradient reaches the teacher.
pub fn soft_label_ce<T: Scalar>(
    student: &Tensor<T>,
    teacher: &Tensor<T>,
    temperature: f64,
    temperature_squared: bool,
) -> Result<Tensor<T>> {
    if student.shape() != teacher.shape() || student.rank() != 2 {
        return Err(TensorError::Shape {
            op: "soft_label_ce",
            detail: format!("{:?} vs {:?}", student.shape(), teacher.shape()),
        });
    }
    if !(temperature > 0.0) {
        return Err(TensorError::Invalid("temperature must be positive".into()));
    }
    let k = student.shape()[1];
    let inv_t = T::of(1.0 / temperature);
    let softened: Vec<T> = teacher.data().iter().map(|&v| v * inv_t).collect();
    let target = softmax_values(&softened, k);
    let loss = tensor::soft_cross_entropy(&student.scale(inv_t), &target)?;
    Ok(if temperature_squared {
        loss.scale(T::of(temperature * temperature))
    } else {
        loss
    })
}

/// Teacher signals for one batch.
#[derive(Debug, Clone, Copy)]
pub struct TeacherOutputs<'a, T: Scalar> {
    pub feature: &'a Tensor<T>,
    pub logits: &'a Tensor<T>,
}

/// The individual terms and their weighted sum.
#[derive(Debug, Clone)]
pub struct LossParts<T: Scalar> {
    pub total: Tensor<T>,
    pub ce: T,
    pub feature: Option<T>,
    pub soft: Option<T>,
}

/// `CE + lambda1 * D + lambda2 * S`. Terms with a zero weight are not
/// evaluated, so with both weights zero `total` is the cross-entropy
/// tensor itself.
pub fn p_stream_loss<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
    feature: &Tensor<T>,
    teacher: Option<TeacherOutputs<'_, T>>,
    cfg: &LossConfig,
) -> Result<LossParts<T>> {
    cfg.validate()?;
    let ce = cross_entropy(logits, labels)?;
    let mut parts = LossParts {
        ce: ce.item(),
        total: ce,
        feature: None,
        soft: None,
    };
    if !cfg.needs_teacher() {
        return Ok(parts);
    }
    let teacher = teacher.ok_or_else(|| TensorError::Invalid("distillation weights need teacher outputs".into()))?;
    if cfg.lambda1 > 0.0 {
        let d = feature_distance(feature, teacher.feature, cfg.norm)?;
        parts.feature = Some(d.item());
        parts.total = parts.total.add(&d.scale(T::of(cfg.lambda1)))?;
    }
    if cfg.lambda2 > 0.0 {
        let s = soft_label_ce(logits, teacher.logits, cfg.temperature, cfg.temperature_squared)?;
        parts.soft = Some(s.item());
        parts.total = parts.total.add(&s.scale(T::of(cfg.lambda2)))?;
    }
    Ok(parts)
}

