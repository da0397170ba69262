use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cvip::codec::Frame;
use cvip::flow::*;

/// Smooth random RGB texture: uniform noise box-blurred twice.
fn texture(seed: u64, w: usize, h: usize) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plane: Vec<f64> = (0..w * h * 3).map(|_| rng.random_range(0.0..255.0)).collect();
    for _ in 0..2 {
        let src = plane.clone();
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let mut acc = 0.0;
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            let sx = (x as isize + dx).rem_euclid(w as isize) as usize;
                            let sy = (y as isize + dy).rem_euclid(h as isize) as usize;
                            acc += src[(sy * w + sx) * 3 + c];
                        }
                    }
                    plane[(y * w + x) * 3 + c] = acc / 9.0;
                }
            }
        }
    }
    // stretch the contrast lost to blurring
    let (lo, hi) = plane.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let data = plane.iter().map(|v| ((v - lo) / (hi - lo) * 255.0).round() as u8).collect();
    Frame::new(w, h, data).unwrap()
}

/// Content moved by `(dx, dy)` with wrap-around, so the true flow is `(dx, dy)`.
fn shifted(f: &Frame, dx: isize, dy: isize) -> Frame {
    let (w, h) = (f.width as isize, f.height as isize);
    let mut data = vec![0u8; f.data.len()];
    for y in 0..h {
        for x in 0..w {
            let sx = (x - dx).rem_euclid(w);
            let sy = (y - dy).rem_euclid(h);
            let (d, s) = (((y * w + x) * 3) as usize, ((sy * w + sx) * 3) as usize);
            data[d..d + 3].copy_from_slice(&f.data[s..s + 3]);
        }
    }
    Frame::new(f.width, f.height, data).unwrap()
}

fn interior_epe(flow: &FlowField<f32>, dx: f64, dy: f64, margin: usize) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for y in margin..flow.height - margin {
        for x in margin..flow.width - margin {
            let (u, v) = flow.at(x, y);
            sum += ((u as f64 - dx).powi(2) + (v as f64 - dy).powi(2)).sqrt();
            n += 1;
        }
    }
    sum / n as f64
}

fn accepted_energies_never_rise(trace: &[WarpRecord]) -> bool {
    trace.windows(2).all(|w| {
        w[0].level != w[1].level || w[1].energy <= w[0].energy * (1.0 + 1e-6) + 1e-12
    })
}

#[test]
fn identical_frames_give_zero_flow() {
    let f = texture(1, 48, 40);
    let flow: FlowField<f32> = tvl1_flow(&f, &f, &FlowParams::default()).unwrap();
    assert!(flow.max_abs() < 1e-3, "{}", flow.max_abs());
}

#[test]
fn recovers_a_global_translation() {
    let prev = texture(2, 64, 64);
    let cur = shifted(&prev, 2, 1);
    let sol = tvl1_flow_traced::<f32>(&prev, &cur, &FlowParams::default()).unwrap();
    let epe = interior_epe(&sol.flow, 2.0, 1.0, 8);
    assert!(epe < 0.5, "epe {epe}");
    assert!(accepted_energies_never_rise(&sol.trace));

    let e_solved = flow_energy(&prev, &cur, &sol.flow, 0.15).unwrap();
    let e_zero = flow_energy(&prev, &cur, &FlowField::<f32>::zeros(64, 64), 0.15).unwrap();
    assert!(e_solved < e_zero);
}

#[test]
fn a_moving_patch_keeps_its_outline() {
    // a 20x20 textured patch moves (2, 1) over a static texture
    let (bg, fg) = (texture(7, 64, 64), texture(8, 64, 64));
    let paste = |ox: usize, oy: usize| {
        let mut data = bg.data.clone();
        for y in oy..oy + 20 {
            for x in ox..ox + 20 {
                let i = (y * 64 + x) * 3;
                data[i..i + 3].copy_from_slice(&fg.data[((y - oy) * 64 + x - ox) * 3..][..3]);
            }
        }
        Frame::new(64, 64, data).unwrap()
    };
    let (prev, cur) = (paste(20, 22), paste(22, 23));
    let params = cvip::pipeline::dataset_flow_params();
    let flow: FlowField<f32> = tvl1_flow(&prev, &cur, &params).unwrap();
    let mean_epe = |xs: std::ops::Range<usize>, ys: std::ops::Range<usize>, dx: f64, dy: f64| {
        let n = xs.len() * ys.len();
        let mut sum = 0.0;
        for y in ys {
            for x in xs.clone() {
                let (u, v) = flow.at(x, y);
                sum += ((u as f64 - dx).powi(2) + (v as f64 - dy).powi(2)).sqrt();
            }
        }
        sum / n as f64
    };
    let inside = mean_epe(25..37, 27..39, 2.0, 1.0);
    let outside = mean_epe(48..60, 4..16, 0.0, 0.0);
    assert!(inside < 0.5, "inside {inside}");
    assert!(outside < 0.2, "outside {outside}");
}

#[test]
fn huge_smoothness_weight_pins_flow_to_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut noise = || Frame::new(32, 32, (0..32 * 32 * 3).map(|_| rng.random()).collect()).unwrap();
    let (a, b) = (noise(), noise());
    let params = FlowParams { lambda_tv: 1e4, ..FlowParams::default() };
    let flow: FlowField<f32> = tvl1_flow(&a, &b, &params).unwrap();
    assert!(flow.max_abs() < 0.05, "{}", flow.max_abs());
}

#[test]
fn energy_examples() {
    let a = texture(4, 16, 12);
    let zero = FlowField::<f64>::zeros(16, 12);
    assert_eq!(flow_energy(&a, &a, &zero, 0.15).unwrap(), 0.0);

    let b = texture(5, 16, 12);
    let ga: Vec<f64> = grayscale(&a);
    let gb: Vec<f64> = grayscale(&b);
    let sad: f64 = ga.iter().zip(&gb).map(|(x, y)| (x - y).abs()).sum();
    assert!((flow_energy(&a, &b, &zero, 0.15).unwrap() - sad).abs() < 1e-9);

    // a constant flow has no variation; a ramp has TV equal to its slopes
    let mut ramp = FlowField::<f64>::zeros(4, 3);
    for y in 0..3 {
        for x in 0..4 {
            ramp.data[y * 4 + x] = x as f64;
        }
    }
    let flat = Frame::filled(4, 3, [9, 9, 9]);
    // 3 rows with 3 unit steps each; the last column has no forward neighbour
    assert!((flow_energy(&flat, &flat, &ramp, 2.0).unwrap() - 2.0 * 9.0).abs() < 1e-12);
}

#[test]
fn solver_is_deterministic() {
    let prev = texture(6, 40, 32);
    let cur = shifted(&prev, -1, 2);
    let a: FlowField<f32> = tvl1_flow(&prev, &cur, &FlowParams::default()).unwrap();
    let b: FlowField<f32> = tvl1_flow(&prev, &cur, &FlowParams::default()).unwrap();
    assert_eq!(a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn trace_covers_every_level() {
    let prev = texture(7, 64, 64);
    let cur = shifted(&prev, 1, -1);
    let params = FlowParams { median_filter: false, ..FlowParams::default() };
    let sol = tvl1_flow_traced::<f64>(&prev, &cur, &params).unwrap();
    let levels: std::collections::BTreeSet<usize> = sol.trace.iter().map(|r| r.level).collect();
    assert_eq!(levels.into_iter().collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    assert!(accepted_energies_never_rise(&sol.trace));
    assert!(interior_epe(&FlowField { width: 64, height: 64, data: sol.flow.data.iter().map(|&v| v as f32).collect() }, 1.0, -1.0, 8) < 0.5);
}

#[test]
fn rejects_bad_input() {
    let a = Frame::filled(8, 8, [0, 0, 0]);
    let b = Frame::filled(8, 9, [0, 0, 0]);
    assert!(matches!(tvl1_flow::<f32>(&a, &b, &FlowParams::default()), Err(FlowError::DimensionMismatch(..))));
    for params in [
        FlowParams { pyramid_scale: 1.0, ..FlowParams::default() },
        FlowParams { lambda_tv: 0.0, ..FlowParams::default() },
        FlowParams { outer_warps: 0, ..FlowParams::default() },
    ] {
        assert!(matches!(tvl1_flow::<f32>(&a, &a, &params), Err(FlowError::InvalidParams(_))));
    }
    let zero = FlowField::<f32>::zeros(8, 8);
    assert!(flow_energy(&a, &b, &zero, 0.1).is_err());
}

#[test]
fn flo_round_trip_and_corruption() {
    let mut f = FlowField::<f32>::zeros(3, 2);
    f.data.iter_mut().enumerate().for_each(|(i, v)| *v = i as f32 * 0.25 - 1.0);
    let mut bytes = Vec::new();
    write_flo(&f, 7, &mut bytes).unwrap();
    assert_eq!(bytes.len(), 16 + 3 * 2 * 2 * 4);
    assert_eq!(&bytes[..4], FLO_MAGIC);
    assert_eq!(&bytes[4..16], &[3, 0, 0, 0, 2, 0, 0, 0, 7, 0, 0, 0]);
    let (back, pair) = read_flo::<f32>(&bytes).unwrap();
    assert_eq!((back, pair), (f, 7));
    assert!(read_flo::<f32>(&bytes[..bytes.len() - 4]).is_err());
    assert!(read_flo::<f32>(&bytes[..10]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'G';
    assert!(read_flo::<f32>(&bad).is_err());
}

