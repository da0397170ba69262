use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cvip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvip"))
        .args(args)
        .env_remove("CVIP_THREADS")
        .output()
        .expect("spawn cvip")
}

fn ok_json(args: &[&str]) -> Value {
    let out = cvip(args);
    assert!(
        out.status.success(),
        "cvip {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON document")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_dataset(dir: &Path) {
    ok_json(&[
        "gen-data", "--classes", "4", "--clips", "4", "--frames", "24", "--size", "32", "--seed", "3", "--out",
        s(dir),
    ]);
}

const TINY_TRAIN: &[&str] = &[
    "--epochs", "1", "--batch-size", "4", "--segments", "4", "--i-segments", "2", "--crop", "32", "--seed", "7",
];

#[test]
fn encode_without_input_is_a_usage_error() {
    let out = cvip(&["encode"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--in") && err.contains("Usage"), "{err}");
}

#[test]
fn unknown_flags_and_subcommands_are_usage_errors() {
    assert_eq!(cvip(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(cvip(&["decode", "--in", "a", "--out", "b", "--bogus"]).status.code(), Some(2));
    assert_eq!(cvip(&["bench", "--flops"]).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_one_with_a_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = cvip(&["decode", "--in", s(&dir.path().join("missing.gvc")), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let line = String::from_utf8_lossy(&out.stderr).lines().last().unwrap().to_string();
    let err: Value = serde_json::from_str(&line).unwrap();
    assert!(err["error"].as_str().unwrap().contains("missing.gvc"));
}

#[test]
fn resolved_config_and_seed_are_logged() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cvip"))
        .args(["gen-data", "--classes", "2", "--clips", "2", "--frames", "16", "--size", "32", "--seed", "11"])
        .args(["--out", s(dir.path())])
        .env("CVIP_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
    let log: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).lines().next().unwrap()).unwrap();
    assert_eq!(log["event"], "config");
    assert_eq!(log["seed"], 11);
    assert_eq!(log["threads"], 2);
    assert_eq!(log["cli"]["command"]["gen-data"]["frames"], 16);
}

#[test]
fn png_round_trip_reproduces_the_container() {
    let dir = tempfile::tempdir().unwrap();
    tiny_dataset(&dir.path().join("ds"));
    let src = dir.path().join("ds/clips/c01_000.gvc");
    let dec = ok_json(&["decode", "--in", s(&src), "--out", s(&dir.path().join("png"))]);
    assert_eq!(dec["schema"], "cvip.decode");
    assert_eq!(dec["frames"], 24);
    assert!(dir.path().join("png/frame_00023.png").exists());
    let out = dir.path().join("re.gvc");
    let enc = ok_json(&["encode", "--in", s(&dir.path().join("png")), "--out", s(&out), "--label", "1"]);
    assert_eq!(enc["intra_frames"], 2);
    assert_eq!(std::fs::read(&src).unwrap(), std::fs::read(&out).unwrap());
}

#[test]
fn raw_input_needs_a_size() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("clip.rgb");
    std::fs::write(&raw, vec![128u8; 16 * 16 * 3 * 5]).unwrap();
    let out = dir.path().join("clip.gvc");
    assert_eq!(cvip(&["encode", "--in", s(&raw), "--out", s(&out)]).status.code(), Some(1));
    let enc = ok_json(&["encode", "--in", s(&raw), "--out", s(&out), "--width", "16", "--height", "16", "--gop", "2"]);
    assert_eq!(enc["frames"], 5);
    assert_eq!(enc["intra_frames"], 3);
}

#[test]
fn flow_writes_one_record_per_pair() {
    let dir = tempfile::tempdir().unwrap();
    tiny_dataset(&dir.path().join("ds"));
    let flo = dir.path().join("flo");
    let r = ok_json(&[
        "flow", "--in", s(&dir.path().join("ds/clips/c02_001.gvc")), "--out", s(&flo), "--warps", "3", "--inner", "10",
        "--levels", "2", "--p-only",
    ]);
    assert_eq!(r["pairs"].as_array().unwrap().len(), 22);
    let bytes = std::fs::read(flo.join("pair_00005.flo")).unwrap();
    assert_eq!(&bytes[..4], b"FLO1");
    assert_eq!(bytes.len(), 16 + 32 * 32 * 2 * 4);
    assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 5);
    assert!(!flo.join("pair_00012.flo").exists());
}

#[test]
fn bench_flops_reports_both_streams() {
    let dir = tempfile::tempdir().unwrap();
    tiny_dataset(&dir.path().join("ds"));
    let (ds, ck) = (dir.path().join("ds"), dir.path().join("ck"));
    let mut args = vec!["train", "--stage", "istream", "--data", s(&ds), "--out", s(&ck)];
    args.extend_from_slice(TINY_TRAIN);
    ok_json(&args);
    let mut args = vec!["train", "--stage", "mr2d", "--data", s(&ds), "--out", s(&ck)];
    args.extend_from_slice(TINY_TRAIN);
    ok_json(&args);
    let r = ok_json(&[
        "bench", "--flops", "--i-ckpt", s(&ck.join("istream.ckpt")), "--p-ckpt", s(&ck.join("mr2d.ckpt")),
        "--segments", "4", "--crop", "32",
    ]);
    assert_eq!(r["schema"], "cvip.bench");
    let streams = r["streams"].as_array().unwrap();
    let flops = |i: usize| streams[i]["flops"].as_u64().unwrap();
    assert_eq!(streams[0]["name"], "i_stream");
    assert!(flops(1) < flops(0));
    assert_eq!(r["total_flops"].as_u64().unwrap(), flops(0) + flops(1));
    assert!(r["timing"].is_null());

    let r = ok_json(&[
        "bench", "--vps", "--p-ckpt", s(&ck.join("mr2d.ckpt")), "--data", s(&ds), "--segments", "4",
        "--crop", "32", "--reps", "3", "--warmup", "1",
    ]);
    assert!(r["timing"]["vps"].as_f64().unwrap() > 0.0);
}

#[test]
fn a_stage_without_its_inputs_fails() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    tiny_dataset(&ds);
    let mut args = vec!["train", "--stage", "distill2d", "--data", s(&ds), "--out", s(dir.path())];
    args.extend_from_slice(TINY_TRAIN);
    let out = cvip(&args);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mr2d.ckpt"));
}

#[test]
fn train_all_is_reproducible_and_eval_follows_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    tiny_dataset(&ds);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let mut args = vec!["train", "--stage", "all", "--data", s(&ds), "--out", s(&out)];
        args.extend_from_slice(TINY_TRAIN);
        let report = ok_json(&args);
        assert_eq!(report["stages"].as_array().unwrap().len(), 6);
        let eval = cvip(&[
            "eval", "--data", s(&ds), "--i-ckpt", s(&out.join("istream.ckpt")), "--p-ckpt",
            s(&out.join("distill3d.ckpt")), "--fuse-weights", "1,1", "--segments", "4", "--crop", "32",
        ]);
        assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
        (out, eval.stdout)
    };
    let (a, eval_a) = run("a");
    let (b, eval_b) = run("b");
    for name in [
        "mr2d.ckpt", "of2d.ckpt", "distill2d.ckpt", "inflate.ckpt", "inflate_teacher.ckpt", "distill3d.ckpt",
        "istream.ckpt", "train_log.jsonl",
    ] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    assert_eq!(eval_a, eval_b);
    let v: Value = serde_json::from_slice(&eval_a).unwrap();
    assert_eq!(v["schema"], "cvip.eval");
    assert_eq!(v["schema_version"], 1);
    for key in ["top1_i", "top1_p", "top1_fused"] {
        let x = v[key].as_f64().unwrap_or_else(|| panic!("{key} missing"));
        assert!((0.0..=100.0).contains(&x));
    }
    assert_eq!(v["videos"], 8);
}

#[test]
fn pretty_prints_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = cvip(&[
        "gen-data", "--classes", "2", "--clips", "2", "--frames", "16", "--size", "32", "--out", s(dir.path()),
        "--pretty", "--report", s(&dir.path().join("r.json")),
    ]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("manifest"), "{text}");
    let saved: Value = serde_json::from_slice(&std::fs::read(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(saved["schema"], "cvip.gen-data");
    assert_eq!(saved["videos"], 4);
}
