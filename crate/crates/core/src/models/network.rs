use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelError, NetworkSpec, NUM_STAGES};
use crate::tensor::{
    batch_norm, conv3d, global_avg_pool, inflate_2d_to_3d, linear, max_pool3d, BatchNormState,
    Checkpoint, CheckpointEntry, Conv3dConfig, ConvWeights2D, InflationMode, Tensor,
};
use crate::Scalar;

type Result<T> = std::result::Result<T, ModelError>;

/// Convolution (no bias) followed by batch norm.
#[derive(Debug)]
pub struct ConvBn<T: Scalar> {
    pub name: String,
    /// `[out, in, kt, k, k]`
    pub weight: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub bn: BatchNormState<T>,
    pub cfg: Conv3dConfig,
}

impl<T: Scalar> ConvBn<T> {
    #[allow(clippy::too_many_arguments)]
    fn new(
        name: String,
        ci: usize,
        co: usize,
        kt: usize,
        k: usize,
        stride: [usize; 3],
        spec: &NetworkSpec,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = (ci * kt * k * k) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
        let data: Vec<T> = (0..co * ci * kt * k * k).map(|_| T::of(normal.sample(rng))).collect();
        Self {
            name,
            weight: Tensor::param(&[co, ci, kt, k, k], data).expect("shape"),
            gamma: Tensor::param(&[co], vec![T::one(); co]).expect("shape"),
            beta: Tensor::param(&[co], vec![T::zero(); co]).expect("shape"),
            bn: BatchNormState::new(co),
            cfg: Conv3dConfig {
                stride,
                padding: [kt / 2, k / 2, k / 2],
                temporal_padding: spec.temporal_padding,
            },
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn temporal_extent(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[3]
    }

    fn forward(&self, x: &Tensor<T>, train: bool, relu: bool) -> Result<Tensor<T>> {
        let y = conv3d(x, &self.weight, None, self.cfg)?;
        let y = batch_norm(&y, &self.gamma, &self.beta, &self.bn, train)?;
        Ok(if relu { y.relu() } else { y })
    }

    fn tensors(&self, out: &mut Vec<(String, Tensor<T>)>) {
        let n = &self.name;
        out.push((format!("{n}.weight"), self.weight.clone()));
        out.push((format!("{n}.bn.gamma"), self.gamma.clone()));
        out.push((format!("{n}.bn.beta"), self.beta.clone()));
        out.push((format!("{n}.bn.running_mean"), self.bn.running_mean.clone()));
        out.push((format!("{n}.bn.running_var"), self.bn.running_var.clone()));
    }

    fn deep_clone(&self) -> Self {
        Self {
            name: self.name.clone(),
            weight: self.weight.deep_clone(),
            gamma: self.gamma.deep_clone(),
            beta: self.beta.deep_clone(),
            bn: BatchNormState {
                running_mean: self.bn.running_mean.deep_clone(),
                running_var: self.bn.running_var.deep_clone(),
                momentum: self.bn.momentum,
                eps: self.bn.eps,
            },
            cfg: self.cfg,
        }
    }
}

/// conv-BN-ReLU, conv-BN, plus an identity or 1x1 projection shortcut.
#[derive(Debug)]
pub struct ResBlock<T: Scalar> {
    pub conv1: ConvBn<T>,
    pub conv2: ConvBn<T>,
    pub shortcut: Option<ConvBn<T>>,
}

impl<T: Scalar> ResBlock<T> {
    fn forward(&self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let h = self.conv1.forward(x, train, true)?;
        let h = self.conv2.forward(&h, train, false)?;
        let skip = match &self.shortcut {
            Some(s) => s.forward(x, train, false)?,
            None => x.clone(),
        };
        Ok(h.add(&skip)?.relu())
    }

    pub fn layers(&self) -> impl Iterator<Item = &ConvBn<T>> {
        [&self.conv1, &self.conv2].into_iter().chain(self.shortcut.as_ref())
    }
}

/// Pooled feature and class scores of one stream.
#[derive(Debug, Clone)]
pub struct StreamOutput<T: Scalar> {
    /// `[N, feature_width]`
    pub feature: Tensor<T>,
    /// `[N, num_classes]`
    pub logits: Tensor<T>,
}

/// [`StreamOutput`] plus the last stage activation `[N, C, T, H, W]`.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T: Scalar> {
    pub output: StreamOutput<T>,
    pub last_activation: Tensor<T>,
}

/// A built residual network. Every layer works on `[N, C, T, H, W]`; 2D
/// layers simply have a unit temporal extent.
#[derive(Debug)]
pub struct Network<T: Scalar> {
    spec: NetworkSpec,
    pub stem: Vec<ConvBn<T>>,
    /// Stages 2..=5.
    pub stages: Vec<Vec<ResBlock<T>>>,
    /// `[num_classes, feature_width]`
    pub head_weight: Tensor<T>,
    pub head_bias: Tensor<T>,
}

pub const STEM_POOL: [usize; 3] = [1, 2, 2];

/// Standard deviation of the classifier weights at initialisation, small
/// enough that a fresh network predicts a near-uniform distribution.
pub const HEAD_INIT_STD: f64 = 1e-3;

impl<T: Scalar> Network<T> {
    /// Builds with He-normal convolutions and a small normal head, all drawn from
    /// a ChaCha8 stream seeded with `seed`.
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kt_for = |s: usize| if spec.stage_is_3d(s) { spec.temporal_kernel } else { 1 };
        let tstride_for = |s: usize| if spec.first_3d_stage() == Some(s) { 2 } else { 1 };
        let w = spec.stage_widths;

        let mut stem = Vec::new();
        for j in 0..spec.blocks_per_stage[0] {
            let (ci, stride) = if j == 0 {
                (spec.input_channels, [tstride_for(1), 2, 2])
            } else {
                (w[0], [1, 1, 1])
            };
            stem.push(ConvBn::new(format!("stem.{j}"), ci, w[0], kt_for(1), 3, stride, spec, &mut rng));
        }

        let mut stages = Vec::new();
        for s in 2..=NUM_STAGES {
            let co = w[s - 1];
            let mut blocks = Vec::new();
            for b in 0..spec.blocks_per_stage[s - 1] {
                let ci = if b == 0 { w[s - 2] } else { co };
                let stride = if b == 0 {
                    [tstride_for(s), if s >= 3 { 2 } else { 1 }, if s >= 3 { 2 } else { 1 }]
                } else {
                    [1, 1, 1]
                };
                let name = format!("s{s}.{b}");
                let conv1 = ConvBn::new(format!("{name}.conv1"), ci, co, kt_for(s), 3, stride, spec, &mut rng);
                let conv2 = ConvBn::new(format!("{name}.conv2"), co, co, kt_for(s), 3, [1, 1, 1], spec, &mut rng);
                let shortcut = (ci != co || stride != [1, 1, 1])
                    .then(|| ConvBn::new(format!("{name}.shortcut"), ci, co, 1, 1, stride, spec, &mut rng));
                blocks.push(ResBlock { conv1, conv2, shortcut });
            }
            stages.push(blocks);
        }

        let f = spec.feature_width();
        let head_init = Normal::new(0.0, HEAD_INIT_STD).expect("finite std");
        let head: Vec<T> = (0..spec.num_classes * f).map(|_| T::of(head_init.sample(&mut rng))).collect();
        Ok(Self {
            spec: spec.clone(),
            stem,
            stages,
            head_weight: Tensor::param(&[spec.num_classes, f], head)?,
            head_bias: Tensor::param(&[spec.num_classes], vec![T::zero(); spec.num_classes])?,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Every convolution with its 1-based stage index, in forward order.
    pub fn conv_layers(&self) -> Vec<(usize, &ConvBn<T>)> {
        let mut out: Vec<(usize, &ConvBn<T>)> = self.stem.iter().map(|l| (1, l)).collect();
        for (i, blocks) in self.stages.iter().enumerate() {
            for b in blocks {
                out.extend(b.layers().map(|l| (i + 2, l)));
            }
        }
        out
    }

    /// Accepts `[N, C, H, W]` (treated as single-frame clips) or
    /// `[N, C, T, H, W]`.
    pub fn forward_trace(&self, input: &Tensor<T>, train: bool) -> Result<ForwardTrace<T>> {
        let s = input.shape().to_vec();
        let x = match s.len() {
            4 => input.reshape(&[s[0], s[1], 1, s[2], s[3]])?,
            5 => input.clone(),
            _ => return Err(ModelError::Input(format!("expected rank 4 or 5 input, got {s:?}"))),
        };
        let xs = x.shape();
        if xs[1] != self.spec.input_channels {
            return Err(ModelError::Input(format!(
                "network expects {} input channels, got {}",
                self.spec.input_channels, xs[1]
            )));
        }
        if xs[2] < self.spec.temporal_stride() {
            return Err(ModelError::Input(format!(
                "clip of {} frames is shorter than the temporal downsampling {}",
                xs[2],
                self.spec.temporal_stride()
            )));
        }
        let mut h = x;
        for layer in &self.stem {
            h = layer.forward(&h, train, true)?;
        }
        h = max_pool3d(&h, STEM_POOL, STEM_POOL)?;
        for blocks in &self.stages {
            for block in blocks {
                h = block.forward(&h, train)?;
            }
        }
        let feature = global_avg_pool(&h)?;
        let logits = linear(&feature, &self.head_weight, Some(&self.head_bias))?;
        Ok(ForwardTrace {
            output: StreamOutput { feature, logits },
            last_activation: h,
        })
    }

    pub fn forward(&self, input: &Tensor<T>, train: bool) -> Result<StreamOutput<T>> {
        Ok(self.forward_trace(input, train)?.output)
    }

    /// Parameters and batch-norm buffers under stable names.
    pub fn named_tensors(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for (_, layer) in self.conv_layers() {
            layer.tensors(&mut out);
        }
        out.push(("head.weight".into(), self.head_weight.clone()));
        out.push(("head.bias".into(), self.head_bias.clone()));
        out
    }

    /// Trainable tensors (excludes running statistics).
    pub fn parameters(&self) -> Vec<Tensor<T>> {
        let mut out = Vec::new();
        for (_, l) in self.conv_layers() {
            out.extend([l.weight.clone(), l.gamma.clone(), l.beta.clone()]);
        }
        out.push(self.head_weight.clone());
        out.push(self.head_bias.clone());
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(Tensor::numel).sum()
    }

    /// Stops gradient flow into every parameter.
    pub fn freeze(&self) {
        self.parameters().iter().for_each(|p| p.set_requires_grad(false));
    }

    pub fn is_frozen(&self) -> bool {
        self.parameters().iter().all(|p| !p.requires_grad())
    }

    /// Independent copy of all parameters and statistics.
    pub fn deep_clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            stem: self.stem.iter().map(ConvBn::deep_clone).collect(),
            stages: self
                .stages
                .iter()
                .map(|blocks| {
                    blocks
                        .iter()
                        .map(|b| ResBlock {
                            conv1: b.conv1.deep_clone(),
                            conv2: b.conv2.deep_clone(),
                            shortcut: b.shortcut.as_ref().map(ConvBn::deep_clone),
                        })
                        .collect()
                })
                .collect(),
            head_weight: self.head_weight.deep_clone(),
            head_bias: self.head_bias.deep_clone(),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            architecture: self.spec.descriptor(),
            entries: self
                .named_tensors()
                .iter()
                .map(|(name, t)| CheckpointEntry::from_tensor(name, t))
                .collect(),
        }
    }

    /// Rebuilds the network described by the checkpoint and loads every
    /// tensor; missing, extra or mis-shaped entries are errors.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let spec: NetworkSpec = ck.architecture.parse()?;
        let net = Self::build(&spec, 0)?;
        let named = net.named_tensors();
        if named.len() != ck.entries.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, checkpoint has {}",
                named.len(),
                ck.entries.len()
            )));
        }
        for (name, t) in &named {
            let e = ck
                .get(name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor `{name}`")))?;
            if e.shape != t.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "`{name}` has shape {:?}, expected {:?}",
                    e.shape,
                    t.shape()
                )));
            }
            t.set_data(e.to_scalars())?;
        }
        Ok(net)
    }

    /// Copy of this network with `inflate_at` changed. Layers whose temporal
    /// extent grows from 1 are inflated; everything else, including
    /// batch-norm statistics and the head, is copied verbatim.
    pub fn inflate(&self, inflate_at: Option<usize>, mode: InflationMode) -> Result<Self> {
        let spec = self.spec.clone().with_inflate_at(inflate_at);
        let target = Self::build(&spec, 0)?;
        for ((name, src), (_, dst)) in self.named_tensors().iter().zip(target.named_tensors()) {
            if src.shape() == dst.shape() {
                dst.set_data(src.to_vec())?;
                continue;
            }
            let (ss, ds) = (src.shape(), dst.shape());
            if ss.len() != 5 || ss[2] != 1 || ss[0] != ds[0] || ss[1] != ds[1] || ss[3..] != ds[3..] {
                return Err(ModelError::Spec(format!(
                    "cannot inflate `{name}` from {ss:?} to {ds:?}"
                )));
            }
            let w2d = ConvWeights2D {
                out_channels: ss[0],
                in_channels: ss[1],
                kh: ss[3],
                kw: ss[4],
                weight: src.to_vec(),
                bias: Vec::new(),
            };
            dst.set_data(inflate_2d_to_3d(&w2d, ds[2], mode)?.weight)?;
        }
        Ok(target)
    }
}
