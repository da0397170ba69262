use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{PipelineError, Result};
use crate::codec::{decode_gop_video, read_gvc_file, GopVideo};
use crate::data::{
    make_flow_clip_with, make_i_batch_with, make_p_clip_with, Augment, ClipGeometry, Manifest, ManifestEntry,
    NormStats, SamplePlan, Split,
};
use crate::flow::{read_flo, tvl1_flow, write_flo, FlowField, FlowParams};
use crate::tensor::Tensor;
use crate::Scalar;

/// Flow fields are cached under `<dataset>/flow_cache/<params key>/`.
pub const FLOW_CACHE_DIR: &str = "flow_cache";

/// What a network consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    /// `[segments, 3, c, c]` I-frames.
    Rgb,
    /// `[1, 5, T, c, c]` MV + residual clip.
    MotionResidual,
    /// `[1, 2, T, c, c]` flow clip at the P-frame positions.
    Flow,
}

#[derive(Debug, Clone)]
pub struct LoadedVideo {
    pub entry: ManifestEntry,
    pub video: GopVideo,
    /// `flows[k]` is the flow from frame `k - 1` to P-frame `k`.
    flows: Option<Vec<Option<FlowField<f32>>>>,
}

impl LoadedVideo {
    pub fn label(&self) -> usize {
        self.entry.label
    }

    pub fn has_flows(&self) -> bool {
        self.flows.is_some()
    }
}

/// A manifest with every video decoded into memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub videos: Vec<LoadedVideo>,
}

fn fnv1a(text: &str) -> u64 {
    text.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl Dataset {
    /// `root` is a dataset directory or a manifest file.
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let manifest = Manifest::load(root)?;
        let root = if root.is_dir() {
            root.to_path_buf()
        } else {
            root.parent().map(Path::to_path_buf).unwrap_or_default()
        };
        let videos = manifest
            .entries
            .iter()
            .map(|e| {
                Ok(LoadedVideo {
                    entry: e.clone(),
                    video: read_gvc_file(manifest.resolve(&root, e))?,
                    flows: None,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { root, manifest, videos })
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes
    }

    pub fn stats(&self) -> &NormStats {
        &self.manifest.stats
    }

    /// Video indices of `split` in manifest order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.videos.len()).filter(|&i| self.videos[i].entry.split == split).collect()
    }

    fn cache_file(&self, params: &FlowParams, entry: &ManifestEntry) -> PathBuf {
        let key = format!("{:016x}", fnv1a(&format!("{params:?}")));
        let stem = entry.path.to_string_lossy().replace(['/', '\\'], "_");
        self.root.join(FLOW_CACHE_DIR).join(key).join(format!("{stem}.flo"))
    }

    /// Computes (or reads back from the on-disk cache when `use_cache`)
    /// the flow of every P-frame of the videos in `split`.
    pub fn prepare_flows(&mut self, split: Split, params: &FlowParams, use_cache: bool) -> Result<()> {
        params.validate()?;
        let mut missing = Vec::new();
        for i in self.indices(split) {
            if self.videos[i].flows.is_some() {
                continue;
            }
            let path = self.cache_file(params, &self.videos[i].entry);
            match use_cache.then(|| read_flow_cache(&path, &self.videos[i].video)).flatten() {
                Some(f) => self.videos[i].flows = Some(f),
                None => missing.push((i, path)),
            }
        }
        let videos = &self.videos;
        let computed: Vec<_> = missing
            .par_iter()
            .map(|(i, _)| compute_flows(&videos[*i].video, params))
            .collect();
        for ((i, path), flows) in missing.into_iter().zip(computed) {
            let flows = flows?;
            if use_cache {
                write_flow_cache(&path, &flows)?;
            }
            self.videos[i].flows = Some(flows);
        }
        Ok(())
    }

    /// Network input for video `idx`. Flow input needs [`Self::prepare_flows`].
    pub fn input<T: Scalar>(
        &self,
        idx: usize,
        kind: InputKind,
        plan: &SamplePlan,
        geometry: &ClipGeometry,
        aug: &Augment,
    ) -> Result<Tensor<T>> {
        let lv = &self.videos[idx];
        let stats = self.stats();
        Ok(match kind {
            InputKind::Rgb => make_i_batch_with(&lv.video, plan, geometry, aug, stats)?,
            InputKind::MotionResidual => make_p_clip_with(&lv.video, plan, geometry, aug, stats)?,
            InputKind::Flow => {
                let flows = lv.flows.as_ref().ok_or_else(|| {
                    PipelineError::Config(format!("flow of {} has not been computed", lv.entry.path.display()))
                })?;
                let fields = plan
                    .p_indices
                    .iter()
                    .map(|&k| {
                        flows.get(k).and_then(Option::as_ref).ok_or_else(|| {
                            PipelineError::Config(format!("no flow for frame {k} of {}", lv.entry.path.display()))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                make_flow_clip_with(&fields, geometry, aug, stats)?
            }
        })
    }
}

fn compute_flows(video: &GopVideo, params: &FlowParams) -> Result<Vec<Option<FlowField<f32>>>> {
    let frames = decode_gop_video(video)?;
    (0..frames.len())
        .map(|k| {
            if k == 0 || video.is_intra_index(k) {
                Ok(None)
            } else {
                Ok(Some(tvl1_flow(&frames[k - 1], &frames[k], params)?))
            }
        })
        .collect()
}

fn write_flow_cache(path: &Path, flows: &[Option<FlowField<f32>>]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut buf = Vec::new();
    for (k, f) in flows.iter().enumerate() {
        if let Some(f) = f {
            write_flo(f, k as u32, &mut buf)?;
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, buf)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

/// `None` when the file is absent or does not fit `video`.
fn read_flow_cache(path: &Path, video: &GopVideo) -> Option<Vec<Option<FlowField<f32>>>> {
    let bytes = std::fs::read(path).ok()?;
    let record = 16 + video.width * video.height * 8;
    if bytes.len() % record != 0 {
        return None;
    }
    let mut flows = vec![None; video.frame_count()];
    for chunk in bytes.chunks_exact(record) {
        let (f, k) = read_flo::<f32>(chunk).ok()?;
        let k = k as usize;
        if k >= flows.len() || f.width != video.width || f.height != video.height {
            return None;
        }
        flows[k] = Some(f);
    }
    let complete = (1..video.frame_count()).all(|k| video.is_intra_index(k) || flows[k].is_some());
    complete.then_some(flows)
}
