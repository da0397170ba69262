use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use cvip::bench::{count_flops, measure_vps, CostReport, NetworkRunner};
use cvip::codec::{decode_gop_video, encode_gop_video, read_gvc_file, write_gvc_file};
use cvip::data::{generate_synthetic_dataset, ClipGeometry, Split, SyntheticConfig, MANIFEST_FILE};
use cvip::distill::{FeatureNorm, LossConfig};
use cvip::flow::{tvl1_flow, write_flo_file, FlowParams};
use cvip::models::Network;
use cvip::pipeline::{
    evaluate, load_stage_network, prerequisites, run_stage, run_training_schedule, save_stage, stage_checkpoint_path,
    Dataset, EpochLog, FusionConfig, LrSchedule, Stage, StageInputs, TrainConfig, TRAIN_LOG_FILE,
};
use cvip::tensor::{Checkpoint, InflationMode};
use serde::Serialize;

use crate::report::{emit, log_config, table};
use crate::{BenchArgs, Cli, Command, DecodeArgs, EncodeArgs, EvalArgs, FlowArgs, GenDataArgs, TrainArgs};

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        ensure!(n > 0, "--threads must be positive");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let seed = match &cli.command {
        Command::GenData(a) => Some(a.seed),
        Command::Train(a) => Some(a.seed),
        _ => None,
    };
    log_config(cli, seed);
    match &cli.command {
        Command::Encode(a) => encode(cli, a),
        Command::Decode(a) => decode(cli, a),
        Command::Flow(a) => flow(cli, a),
        Command::GenData(a) => gen_data(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Bench(a) => bench(cli, a),
    }
}

/// Working resolution in the 4:3 proportion of the default geometry.
fn geometry(crop: usize) -> ClipGeometry {
    let d = ClipGeometry::default();
    ClipGeometry {
        work_width: (crop * d.work_width + d.crop / 2) / d.crop,
        work_height: crop * d.work_height / d.crop,
        crop,
    }
}

fn load_net(path: &Path) -> Result<Network<f32>> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(Network::from_checkpoint(&ck)?)
}

#[derive(Serialize)]
struct VideoSummary {
    path: String,
    width: usize,
    height: usize,
    frames: usize,
    gop_size: usize,
    intra_frames: usize,
    predicted_frames: usize,
    label: Option<u16>,
}

fn summary(path: &Path, v: &cvip::codec::GopVideo) -> VideoSummary {
    VideoSummary {
        path: path.display().to_string(),
        width: v.width,
        height: v.height,
        frames: v.frame_count(),
        gop_size: v.gop_size,
        intra_frames: v.intra_indices().len(),
        predicted_frames: v.predicted_indices().len(),
        label: v.label,
    }
}

fn summary_table(s: &VideoSummary) -> String {
    table(&[
        ("file".into(), s.path.clone()),
        ("size".into(), format!("{}x{}", s.width, s.height)),
        ("frames".into(), format!("{} ({} I, {} P)", s.frames, s.intra_frames, s.predicted_frames)),
        ("gop".into(), s.gop_size.to_string()),
    ])
}

fn encode(cli: &Cli, a: &EncodeArgs) -> Result<()> {
    let frames = if a.input.is_dir() {
        crate::frames::read_png_dir(&a.input)?
    } else {
        let (Some(w), Some(h)) = (a.width, a.height) else {
            bail!("raw input {} needs --width and --height", a.input.display());
        };
        crate::frames::read_raw(&a.input, w, h)?
    };
    let video = encode_gop_video(&frames, a.gop, a.range, a.label)?;
    write_gvc_file(&video, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let s = summary(&a.out, &video);
    emit(cli, "encode", &s, || summary_table(&s))
}

fn decode(cli: &Cli, a: &DecodeArgs) -> Result<()> {
    let video = read_gvc_file(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let frames = decode_gop_video(&video)?;
    std::fs::create_dir_all(&a.out)?;
    for (k, f) in frames.iter().enumerate() {
        crate::frames::write_png(f, &a.out.join(format!("frame_{k:05}.png")))?;
    }
    let s = summary(&a.input, &video);
    emit(cli, "decode", &s, || summary_table(&s))
}

#[derive(Serialize)]
struct FlowReport {
    pairs: Vec<u32>,
    width: usize,
    height: usize,
    max_abs: f64,
    out: String,
}

fn flow(cli: &Cli, a: &FlowArgs) -> Result<()> {
    let params = FlowParams {
        lambda_tv: a.lambda,
        outer_warps: a.warps,
        inner_iterations: a.inner,
        pyramid_levels: a.levels,
        ..FlowParams::default()
    };
    params.validate()?;
    let video = read_gvc_file(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let frames = decode_gop_video(&video)?;
    let pairs: Vec<usize> = (1..frames.len()).filter(|&k| !a.p_only || !video.is_intra_index(k)).collect();
    std::fs::create_dir_all(&a.out)?;
    let fields = {
        use rayon::prelude::*;
        pairs
            .par_iter()
            .map(|&k| tvl1_flow::<f32>(&frames[k - 1], &frames[k], &params))
            .collect::<Result<Vec<_>, _>>()?
    };
    let mut max_abs = 0.0f64;
    for (&k, f) in pairs.iter().zip(&fields) {
        write_flo_file(f, k as u32, a.out.join(format!("pair_{k:05}.flo")))?;
        max_abs = max_abs.max(f.max_abs());
    }
    let r = FlowReport {
        pairs: pairs.iter().map(|&k| k as u32).collect(),
        width: video.width,
        height: video.height,
        max_abs,
        out: a.out.display().to_string(),
    };
    emit(cli, "flow", &r, || {
        table(&[
            ("pairs".into(), r.pairs.len().to_string()),
            ("size".into(), format!("{}x{}", r.width, r.height)),
            ("max |flow|".into(), format!("{:.3}", r.max_abs)),
            ("out".into(), r.out.clone()),
        ])
    })
}

#[derive(Serialize)]
struct GenDataReport {
    out: String,
    classes: usize,
    videos: usize,
    train: usize,
    test: usize,
    seed: u64,
}

fn gen_data(cli: &Cli, a: &GenDataArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        classes: a.classes,
        clips_per_class: a.clips,
        frames: a.frames,
        size: a.size,
        train_fraction: a.train_fraction,
        gop_size: a.gop,
        search_range: a.range,
    };
    let manifest = generate_synthetic_dataset(&cfg, a.seed, &a.out)?;
    let r = GenDataReport {
        out: a.out.join(MANIFEST_FILE).display().to_string(),
        classes: manifest.num_classes,
        videos: manifest.entries.len(),
        train: manifest.split(Split::Train).count(),
        test: manifest.split(Split::Test).count(),
        seed: a.seed,
    };
    emit(cli, "gen-data", &r, || {
        table(&[
            ("manifest".into(), r.out.clone()),
            ("classes".into(), r.classes.to_string()),
            ("videos".into(), format!("{} ({} train, {} test)", r.videos, r.train, r.test)),
        ])
    })
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let inflate_at = match a.inflate_at.as_str() {
        "none" => None,
        s => Some(s.parse::<usize>().ok().filter(|k| (1..=5).contains(k)).with_context(|| {
            format!("--inflate-at must be 1 to 5 or none, got `{s}`")
        })?),
    };
    let norm: FeatureNorm = a.feat_norm.parse().map_err(anyhow::Error::msg)?;
    let inflation: InflationMode = a.inflation.parse().map_err(anyhow::Error::msg)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        schedule: LrSchedule {
            lr: a.lr,
            ..LrSchedule::default()
        },
        batch_size: a.batch_size,
        seed: a.seed,
        loss: LossConfig {
            lambda1: a.lambda1,
            lambda2: a.lambda2,
            temperature: a.temperature,
            norm,
            ..LossConfig::default()
        },
        inflate_at,
        inflation,
        segments: a.segments,
        i_segments: a.i_segments,
        geometry: geometry(a.crop),
        augment: !a.no_augment,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct StageSummary {
    stage: String,
    checkpoints: Vec<String>,
    final_epochs: Vec<EpochLog>,
}

#[derive(Serialize)]
struct TrainReport {
    seed: u64,
    out: String,
    stages: Vec<StageSummary>,
}

fn stage_summary<T: cvip::Scalar>(dir: &Path, r: &cvip::pipeline::StageResult<T>) -> StageSummary {
    let mut final_epochs: Vec<EpochLog> = Vec::new();
    for line in &r.log {
        match final_epochs.iter_mut().find(|l| l.role == line.role) {
            Some(l) if l.epoch <= line.epoch => *l = line.clone(),
            Some(_) => {}
            None => final_epochs.push(line.clone()),
        }
    }
    StageSummary {
        stage: r.stage.name().into(),
        checkpoints: r
            .networks
            .iter()
            .map(|(role, _)| stage_checkpoint_path(dir, r.stage, *role).display().to_string())
            .collect(),
        final_epochs,
    }
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let cfg = train_config(a)?;
    eprintln!("{}", serde_json::json!({ "event": "resolved", "train_config": cfg.describe() }));
    let mut data = Dataset::load(&a.data)?;
    std::fs::create_dir_all(&a.out)?;
    let mut stages = Vec::new();
    if a.stage == "all" {
        let log = a.out.join(TRAIN_LOG_FILE);
        if log.exists() {
            std::fs::remove_file(&log)?;
        }
        let results = run_training_schedule::<f32>(&cfg, &mut data, Some(&a.out))?;
        stages.extend(results.iter().map(|r| stage_summary(&a.out, r)));
        let i = run_stage::<f32>(Stage::IStream, &cfg, &mut data, StageInputs::default())?;
        save_stage(&a.out, &i)?;
        stages.push(stage_summary(&a.out, &i));
    } else {
        let stage: Stage = a.stage.parse()?;
        let from = a.from.as_deref().unwrap_or(&a.out);
        let nets = prerequisites(stage)
            .into_iter()
            .map(|(s, role)| load_stage_network::<f32>(from, s, role, stage))
            .collect::<Result<Vec<_>, _>>()?;
        let inputs = StageInputs {
            student: nets.first(),
            teacher: nets.get(1),
        };
        let r = run_stage(stage, &cfg, &mut data, inputs)?;
        save_stage(&a.out, &r)?;
        stages.push(stage_summary(&a.out, &r));
    }
    let r = TrainReport {
        seed: a.seed,
        out: a.out.display().to_string(),
        stages,
    };
    emit(cli, "train", &r, || {
        let mut rows = Vec::new();
        for s in &r.stages {
            for l in &s.final_epochs {
                rows.push((
                    format!("{} {:?}", s.stage, l.role).to_lowercase(),
                    format!("epoch {} loss {:.4} train top-1 {:.1}%", l.epoch + 1, l.loss, l.train_top1),
                ));
            }
        }
        rows.push(("checkpoints".into(), r.out.clone()));
        table(&rows)
    })
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let fusion: FusionConfig = a.fuse_weights.parse()?;
    let split: Split = a.split.parse()?;
    let data = Dataset::load(&a.data)?;
    let i_net = a.i_ckpt.as_deref().map(load_net).transpose()?;
    let p_net = a.p_ckpt.as_deref().map(load_net).transpose()?;
    let report = evaluate(&data, split, i_net.as_ref(), p_net.as_ref(), &fusion, a.segments, &geometry(a.crop))?;
    emit(cli, "eval", &report, || {
        let pct = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.2}%"));
        table(&[
            ("split".into(), format!("{} ({} videos)", report.split, report.videos)),
            ("top-1 I".into(), pct(report.top1_i)),
            ("top-1 P".into(), pct(report.top1_p)),
            ("top-1 fused".into(), pct(Some(report.top1_fused))),
        ])
    })
}

fn bench(cli: &Cli, a: &BenchArgs) -> Result<()> {
    let i_net = a.i_ckpt.as_deref().map(load_net).transpose()?;
    let p_net = a.p_ckpt.as_deref().map(load_net).transpose()?;
    let mut streams = Vec::new();
    if a.flops {
        if let Some(net) = &i_net {
            let mut c = count_flops(net, &[a.segments, 3, a.crop, a.crop])?;
            c.name = "i_stream".into();
            streams.push(c);
        }
        if let Some(net) = &p_net {
            let mut c = count_flops(net, &[1, 5, a.segments, a.crop, a.crop])?;
            c.name = "p_stream".into();
            streams.push(c);
        }
    }
    let timing = if a.vps {
        let dir = a.data.as_deref().context("--vps needs --data")?;
        let data = Dataset::load(dir)?;
        let runner = NetworkRunner {
            data: &data,
            i_net: i_net.as_ref(),
            p_net: p_net.as_ref(),
            segments: a.segments,
            geometry: geometry(a.crop),
        };
        Some(measure_vps(&runner, a.reps, a.warmup)?)
    } else {
        None
    };
    let report = CostReport::new(streams, timing);
    emit(cli, "bench", &report, || {
        let mut rows: Vec<(String, String)> = report
            .streams
            .iter()
            .map(|s| (s.name.clone(), format!("{:.4} GFLOPs", s.gflops())))
            .collect();
        if a.flops {
            rows.push(("total".into(), format!("{:.4} GFLOPs", report.total_flops as f64 / 1e9)));
        }
        if let Some(t) = &report.timing {
            rows.push(("videos/s".into(), format!("{:.2}", t.vps)));
            rows.push(("preprocess s/video".into(), format!("{:.4}", t.preprocessing)));
            rows.push(("I-stream s/video".into(), format!("{:.4}", t.i_stream)));
            rows.push(("P-stream s/video".into(), format!("{:.4}", t.p_stream)));
        }
        table(&rows)
    })
}
