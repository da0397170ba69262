//! Analytic FLOP counting and wall-clock throughput.
//!
//! Convolutions and linear layers cost one MAC per multiply (padded taps
//! included) and two FLOPs per MAC. Batch norm, ReLU, residual additions
//! and pooling cost one FLOP per element they read.

mod timing;

pub use timing::{measure_vps, InferenceRunner, NetworkRunner, Timing, MAX_WARMUP_CV};

use serde::{Deserialize, Serialize};

use crate::models::{ConvBn, ModelError, Network, STEM_POOL};
use crate::pipeline::PipelineError;
use crate::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("input shape {shape:?} does not fit the network: {detail}")]
    Shape { shape: Vec<usize>, detail: String },
    #[error("invalid benchmark settings: {0}")]
    Config(String),
    #[error("no videos to time")]
    EmptyDataset,
    #[error("warm-up timings vary too much (coefficient of variation {cv:.2}); rerun on an idle machine")]
    Unstable { cv: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

pub type Result<T> = std::result::Result<T, BenchError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    BatchNorm,
    Relu,
    Add,
    MaxPool,
    AvgPool,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub kind: LayerKind,
    pub output_shape: Vec<usize>,
    pub macs: u64,
    pub flops: u64,
}

/// Analytic cost of one network on one input shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamCost {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerCost>,
    pub macs: u64,
    pub flops: u64,
}

impl StreamCost {
    pub fn gflops(&self) -> f64 {
        self.flops as f64 / 1e9
    }
}

/// Per-stream analytic costs, optionally with measured timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub streams: Vec<StreamCost>,
    pub total_macs: u64,
    pub total_flops: u64,
    pub timing: Option<Timing>,
}

impl CostReport {
    pub fn new(streams: Vec<StreamCost>, timing: Option<Timing>) -> Self {
        Self {
            total_macs: streams.iter().map(|s| s.macs).sum(),
            total_flops: streams.iter().map(|s| s.flops).sum(),
            streams,
            timing,
        }
    }

    pub fn stream(&self, name: &str) -> Option<&StreamCost> {
        self.streams.iter().find(|s| s.name == name)
    }
}

/// Output extent of a sliding window, `None` if the window does not fit.
pub fn conv_out(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    (input + 2 * pad >= kernel && stride > 0).then(|| (input + 2 * pad - kernel) / stride + 1)
}

/// MACs of a convolution over `[n, ci, t, h, w]` with a
/// `[co, ci, kt, kh, kw]` kernel: every output element times every tap.
pub fn conv_macs(input: [usize; 5], kernel: [usize; 5], stride: [usize; 3], padding: [usize; 3]) -> Option<(u64, [usize; 5])> {
    let [n, ci, t, h, w] = input;
    let [co, kci, kt, kh, kw] = kernel;
    if ci != kci {
        return None;
    }
    let to = conv_out(t, kt, stride[0], padding[0])?;
    let ho = conv_out(h, kh, stride[1], padding[1])?;
    let wo = conv_out(w, kw, stride[2], padding[2])?;
    let out = [n, co, to, ho, wo];
    let macs = out.iter().product::<usize>() as u64 * (ci * kt * kh * kw) as u64;
    Some((macs, out))
}

pub fn linear_macs(batch: usize, in_features: usize, out_features: usize) -> u64 {
    (batch * in_features * out_features) as u64
}

struct Counter {
    layers: Vec<LayerCost>,
    shape: Vec<usize>,
}

impl Counter {
    fn elementwise(&mut self, name: String, kind: LayerKind) {
        let n: usize = self.shape.iter().product();
        self.layers.push(LayerCost {
            name,
            kind,
            output_shape: self.shape.clone(),
            macs: 0,
            flops: n as u64,
        });
    }

    fn conv<T: Scalar>(&mut self, layer: &ConvBn<T>, relu: bool) -> Result<()> {
        let input: [usize; 5] = self.shape.clone().try_into().expect("rank 5");
        let kernel: [usize; 5] = layer.weight.shape().try_into().expect("rank 5 kernel");
        let (macs, out) = conv_macs(input, kernel, layer.cfg.stride, layer.cfg.padding).ok_or_else(|| BenchError::Shape {
            shape: self.shape.clone(),
            detail: format!("layer {} with kernel {kernel:?}", layer.name),
        })?;
        self.shape = out.to_vec();
        self.layers.push(LayerCost {
            name: format!("{}.conv", layer.name),
            kind: LayerKind::Conv,
            output_shape: self.shape.clone(),
            macs,
            flops: 2 * macs,
        });
        self.elementwise(format!("{}.bn", layer.name), LayerKind::BatchNorm);
        if relu {
            self.elementwise(format!("{}.relu", layer.name), LayerKind::Relu);
        }
        Ok(())
    }
}

/// Per-layer analytic cost of `net` on `input_shape` (`[N, C, H, W]` or
/// `[N, C, T, H, W]`), following the same layer order as the forward pass.
pub fn count_flops<T: Scalar>(net: &Network<T>, input_shape: &[usize]) -> Result<StreamCost> {
    let spec = net.spec();
    let shape5 = match *input_shape {
        [n, c, h, w] => vec![n, c, 1, h, w],
        [n, c, t, h, w] => vec![n, c, t, h, w],
        _ => {
            return Err(BenchError::Shape {
                shape: input_shape.to_vec(),
                detail: "expected rank 4 or 5".into(),
            })
        }
    };
    if shape5[1] != spec.input_channels || shape5[2] < spec.temporal_stride() {
        return Err(BenchError::Shape {
            shape: input_shape.to_vec(),
            detail: format!("network takes {} channels and at least {} frames", spec.input_channels, spec.temporal_stride()),
        });
    }
    let mut c = Counter {
        layers: Vec::new(),
        shape: shape5,
    };
    for layer in &net.stem {
        c.conv(layer, true)?;
    }
    let n_in: usize = c.shape.iter().product();
    let [n, ch, t, h, w]: [usize; 5] = c.shape.clone().try_into().expect("rank 5");
    let pooled = [STEM_POOL[0], STEM_POOL[1], STEM_POOL[2]];
    let out = [t, h, w]
        .iter()
        .zip(pooled)
        .map(|(&d, k)| conv_out(d, k, k, 0))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| BenchError::Shape {
            shape: input_shape.to_vec(),
            detail: "input too small for the stem pooling".into(),
        })?;
    c.shape = vec![n, ch, out[0], out[1], out[2]];
    c.layers.push(LayerCost {
        name: "stem.pool".into(),
        kind: LayerKind::MaxPool,
        output_shape: c.shape.clone(),
        macs: 0,
        flops: n_in as u64,
    });
    for blocks in &net.stages {
        for block in blocks {
            let entry = c.shape.clone();
            c.conv(&block.conv1, true)?;
            c.conv(&block.conv2, false)?;
            let main = c.shape.clone();
            if let Some(s) = &block.shortcut {
                c.shape = entry;
                c.conv(s, false)?;
            }
            c.shape = main;
            let name = block.conv1.name.trim_end_matches(".conv1").to_string();
            c.elementwise(format!("{name}.add"), LayerKind::Add);
            c.elementwise(format!("{name}.relu"), LayerKind::Relu);
        }
    }
    let n_in: usize = c.shape.iter().product();
    let (n, f) = (c.shape[0], c.shape[1]);
    c.shape = vec![n, f];
    c.layers.push(LayerCost {
        name: "gap".into(),
        kind: LayerKind::AvgPool,
        output_shape: c.shape.clone(),
        macs: 0,
        flops: n_in as u64,
    });
    let k = spec.num_classes;
    let macs = linear_macs(n, f, k);
    c.layers.push(LayerCost {
        name: "head".into(),
        kind: LayerKind::Linear,
        output_shape: vec![n, k],
        macs,
        flops: 2 * macs,
    });
    Ok(StreamCost {
        name: String::new(),
        input_shape: input_shape.to_vec(),
        macs: c.layers.iter().map(|l| l.macs).sum(),
        flops: c.layers.iter().map(|l| l.flops).sum(),
        layers: c.layers,
    })
}

/// Costs of the I-stream on a `[segments, 3, crop, crop]` batch and the
/// P-stream on one `[1, 5, segments, crop, crop]` clip.
pub fn two_stream_costs<T: Scalar>(i_net: &Network<T>, p_net: &Network<T>, segments: usize, crop: usize) -> Result<Vec<StreamCost>> {
    let mut i = count_flops(i_net, &[segments, 3, crop, crop])?;
    i.name = "i_stream".into();
    let mut p = count_flops(p_net, &[1, 5, segments, crop, crop])?;
    p.name = "p_stream".into();
    Ok(vec![i, p])
}

