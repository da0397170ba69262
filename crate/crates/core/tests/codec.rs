use cvip::codec::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_frame(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Frame {
    let data = (0..w * h * 3).map(|_| rng.random::<u8>()).collect();
    Frame::new(w, h, data).unwrap()
}

fn textured(w: usize, h: usize) -> Frame {
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let v = ((x * 37 + y * 91 + (x * y) % 13 * 17) % 251) as u8;
            data.extend_from_slice(&[v, v.wrapping_mul(3), 255 - v]);
        }
    }
    Frame::new(w, h, data).unwrap()
}

fn shift_right_circular(f: &Frame, d: usize) -> Frame {
    let mut data = vec![0; f.data.len()];
    for y in 0..f.height {
        for x in 0..f.width {
            let sx = (x + f.width - d) % f.width;
            let (s, t) = ((y * f.width + sx) * 3, (y * f.width + x) * 3);
            data[t..t + 3].copy_from_slice(&f.data[s..s + 3]);
        }
    }
    Frame::new(f.width, f.height, data).unwrap()
}

/// Independent exhaustive search: nested loops over blocks, candidates and
/// pixels with its own clamping and its own tie-break ordering.
fn brute_force_motion(prev: &Frame, cur: &Frame, range: i32) -> Vec<(i32, i32)> {
    let (w, h) = (cur.width as i32, cur.height as i32);
    let bxs = (w + 15) / 16;
    let bys = (h + 15) / 16;
    let mut out = Vec::new();
    for by in 0..bys {
        for bx in 0..bxs {
            let mut best: Option<(u64, i32, i32)> = None;
            for dy in -range..=range {
                for dx in -range..=range {
                    let mut sad = 0u64;
                    for y in by * 16..((by + 1) * 16).min(h) {
                        for x in bx * 16..((bx + 1) * 16).min(w) {
                            let rx = (x + dx).max(0).min(w - 1);
                            let ry = (y + dy).max(0).min(h - 1);
                            for c in 0..3 {
                                let a = cur.data[((y * w + x) * 3 + c) as usize] as i64;
                                let b = prev.data[((ry * w + rx) * 3 + c) as usize] as i64;
                                sad += (a - b).unsigned_abs();
                            }
                        }
                    }
                    let better = match best {
                        None => true,
                        Some((bs, bdx, bdy)) => {
                            if sad != bs {
                                sad < bs
                            } else if dx.abs() + dy.abs() != bdx.abs() + bdy.abs() {
                                dx.abs() + dy.abs() < bdx.abs() + bdy.abs()
                            } else if dy != bdy {
                                dy < bdy
                            } else {
                                dx < bdx
                            }
                        }
                    };
                    if better {
                        best = Some((sad, dx, dy));
                    }
                }
            }
            let (_, dx, dy) = best.unwrap();
            out.push((dx, dy));
        }
    }
    out
}

#[test]
fn identical_frames_give_zero_motion() {
    let f = textured(48, 32);
    let mv = estimate_motion(&f, &f, 7).unwrap();
    assert!(mv.vectors.iter().all(|v| *v == MotionVector::ZERO));
}

#[test]
fn circular_right_shift_gives_minus_two() {
    let prev = textured(32, 16);
    let cur = shift_right_circular(&prev, 2);
    let mv = estimate_motion(&prev, &cur, 7).unwrap();
    let oracle = brute_force_motion(&prev, &cur, 7);
    assert_eq!(oracle, vec![(-2, 0), (-2, 0)]);
    assert!(mv.vectors.iter().all(|v| *v == MotionVector::new(-2, 0)));
}

#[test]
fn random_pair_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let prev = random_frame(&mut rng, 48, 48);
    let cur = random_frame(&mut rng, 48, 48);
    let mv = estimate_motion(&prev, &cur, 3).unwrap();
    let got: Vec<_> = mv.vectors.iter().map(|v| (v.dx as i32, v.dy as i32)).collect();
    assert_eq!(got, brute_force_motion(&prev, &cur, 3));
}

#[test]
fn partial_edge_blocks_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let prev = textured(37, 21);
    let mut cur = shift_right_circular(&prev, 1);
    for v in cur.data.iter_mut().step_by(7) {
        *v = v.wrapping_add(rng.random_range(0..3));
    }
    let mv = estimate_motion(&prev, &cur, 4).unwrap();
    assert_eq!((mv.blocks_x, mv.blocks_y), (3, 2));
    let got: Vec<_> = mv.vectors.iter().map(|v| (v.dx as i32, v.dy as i32)).collect();
    assert_eq!(got, brute_force_motion(&prev, &cur, 4));
}

#[test]
fn motion_search_rejects_mismatched_dims() {
    let a = textured(32, 32);
    let b = textured(32, 16);
    assert!(matches!(
        estimate_motion(&a, &b, 7),
        Err(CodecError::DimensionMismatch(..))
    ));
}

#[test]
fn zero_motion_compensation_is_identity() {
    let f = textured(40, 24);
    let mv = MotionField::zeros(40, 24, 7);
    assert_eq!(motion_compensate(&f, &mv).unwrap(), f);
}

#[test]
fn compensation_reproduces_shift_in_interior() {
    let prev = textured(32, 16);
    let cur = shift_right_circular(&prev, 2);
    let mv = MotionField::uniform(32, 16, 7, MotionVector::new(-2, 0));
    let pred = motion_compensate(&prev, &mv).unwrap();
    for y in 0..16 {
        for x in 2..32 {
            assert_eq!(pred.pixel(x, y), cur.pixel(x, y));
        }
    }
}

#[test]
fn compensation_rejects_out_of_range_vector() {
    let f = textured(16, 16);
    let mv = MotionField::uniform(16, 16, 7, MotionVector::new(20, 0));
    assert!(matches!(
        motion_compensate(&f, &mv),
        Err(CodecError::MotionOutOfRange { .. })
    ));
}

#[test]
fn compensation_rejects_wrong_grid() {
    let f = textured(32, 32);
    let mv = MotionField::zeros(16, 16, 7);
    assert!(matches!(
        motion_compensate(&f, &mv),
        Err(CodecError::GridMismatch { .. })
    ));
}

#[test]
fn residual_arithmetic() {
    let cur = Frame::filled(2, 1, [10, 10, 10]);
    let pred = Frame::filled(2, 1, [255, 10, 0]);
    let r = compute_residual(&cur, &pred).unwrap();
    assert_eq!(r.data, vec![-245, 0, 10, -245, 0, 10]);
    assert!(compute_residual(&cur, &cur).unwrap().data.iter().all(|&v| v == 0));
}

#[test]
fn residual_reconstructs_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cur = random_frame(&mut rng, 20, 20);
    let pred = random_frame(&mut rng, 20, 20);
    let r = compute_residual(&cur, &pred).unwrap();
    assert!(r.data.iter().all(|&v| (-255..=255).contains(&v)));
    assert_eq!(apply_residual(&pred, &r).unwrap(), cur);
}

#[test]
fn gop_layout_thirteen_frames() {
    let frames: Vec<_> = (0..13).map(|k| shift_right_circular(&textured(32, 32), k)).collect();
    let v = encode_gop_video(&frames, 12, 7, None).unwrap();
    assert_eq!(v.intra_indices(), vec![0, 12]);
    assert_eq!(v.predicted_indices(), (1..12).collect::<Vec<_>>());
    for (k, f) in v.frames.iter().enumerate() {
        assert_eq!(f.is_intra(), k % 12 == 0);
    }
}

#[test]
fn single_frame_video() {
    let v = encode_gop_video(&[textured(16, 16)], 12, 7, Some(3)).unwrap();
    assert_eq!(v.frame_count(), 1);
    assert!(v.frames[0].is_intra());
    assert_eq!(decode_gop_video(&v).unwrap(), vec![textured(16, 16)]);
}

#[test]
fn encode_rejects_bad_input() {
    assert!(matches!(encode_gop_video(&[], 12, 7, None), Err(CodecError::Empty)));
    let mixed = vec![textured(16, 16), textured(32, 16)];
    assert!(matches!(
        encode_gop_video(&mixed, 12, 7, None),
        Err(CodecError::DimensionMismatch(..))
    ));
    assert!(matches!(
        encode_gop_video(&mixed[..1], 0, 7, None),
        Err(CodecError::InvalidGopSize)
    ));
}

#[test]
fn synthetic_clip_round_trip() {
    let base = textured(48, 32);
    let frames: Vec<_> = (0..24).map(|k| shift_right_circular(&base, k % 5)).collect();
    let v = encode_gop_video(&frames, 12, 7, None).unwrap();
    assert_eq!(decode_gop_video(&v).unwrap(), frames);
}

#[test]
fn all_intra_decode_is_concatenation() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let frames: Vec<_> = (0..4).map(|_| random_frame(&mut rng, 17, 9)).collect();
    let v = encode_gop_video(&frames, 1, 7, None).unwrap();
    assert!(v.frames.iter().all(CodedFrame::is_intra));
    assert_eq!(decode_gop_video(&v).unwrap(), frames);
}

#[test]
fn container_round_trip_and_corruption() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let frames: Vec<_> = (0..14).map(|_| random_frame(&mut rng, 33, 18)).collect();
    let v = encode_gop_video(&frames, 12, 3, Some(5)).unwrap();
    let mut bytes = Vec::new();
    write_gvc(&v, &mut bytes).unwrap();
    assert_eq!(&bytes[..4], b"GVC1");
    let back = read_gvc(&bytes).unwrap();
    assert_eq!(back.label, Some(5));
    assert_eq!(decode_gop_video(&back).unwrap(), frames);

    // frame_count larger than the payload
    let mut bad = bytes.clone();
    bad[12..16].copy_from_slice(&15u32.to_le_bytes());
    assert!(matches!(read_gvc(&bad), Err(CodecError::Truncated(_))));

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(read_gvc(&bad), Err(CodecError::Malformed(_))));

    assert!(matches!(
        read_gvc(&bytes[..bytes.len() - 1]),
        Err(CodecError::Truncated(_))
    ));

    // an intra frame where the GOP layout demands a predicted one
    let mut bad = bytes.clone();
    bad[24 + 33 * 18 * 3] = 0;
    assert!(read_gvc(&bad).is_err());
}

#[test]
fn container_header_layout() {
    let v = encode_gop_video(&[Frame::filled(2, 1, [1, 2, 3])], 12, 7, None).unwrap();
    let mut bytes = Vec::new();
    write_gvc(&v, &mut bytes).unwrap();
    let mut expect = b"GVC1".to_vec();
    for x in [2u32, 1, 1, 12] {
        expect.extend_from_slice(&x.to_le_bytes());
    }
    expect.extend_from_slice(&[0, 0, 1, 2, 3, 1, 2, 3]);
    assert_eq!(bytes, expect);
}

#[test]
fn dense_motion_block_fill() {
    let mut mv = MotionField::zeros(32, 32, 7);
    mv.vectors = vec![
        MotionVector::new(1, 0),
        MotionVector::new(0, 2),
        MotionVector::new(-1, 0),
        MotionVector::new(0, 0),
    ];
    let d = mv_to_dense(&mv, 32, 32).unwrap();
    for y in 0..16 {
        for x in 0..16 {
            assert_eq!((d.at(0, x, y), d.at(1, x, y)), (1.0, 0.0));
            assert_eq!((d.at(0, x + 16, y), d.at(1, x + 16, y)), (0.0, 2.0));
            assert_eq!((d.at(0, x, y + 16), d.at(1, x, y + 16)), (-1.0, 0.0));
            assert_eq!((d.at(0, x + 16, y + 16), d.at(1, x + 16, y + 16)), (0.0, 0.0));
        }
    }
    let zero = mv_to_dense(&MotionField::zeros(20, 12, 7), 20, 12).unwrap();
    assert!(zero.data.iter().all(|&v| v == 0.0));
    assert!(mv_to_dense(&mv, 48, 32).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn round_trip_is_lossless(seed in any::<u64>(), w in 1usize..40, h in 1usize..40,
                              n in 1usize..16, gop in 1usize..6, drift in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = random_frame(&mut rng, w, h);
        let frames: Vec<_> = (0..n)
            .map(|k| {
                let mut f = shift_right_circular(&base, (k * drift) % w);
                for v in f.data.iter_mut().step_by(5) {
                    *v = rng.random();
                }
                f
            })
            .collect();
        let v = encode_gop_video(&frames, gop, 2, None).unwrap();
        for (k, f) in v.frames.iter().enumerate() {
            prop_assert_eq!(f.is_intra(), k % gop == 0);
        }
        prop_assert_eq!(decode_gop_video(&v).unwrap(), frames);
    }

    #[test]
    fn random_field_dense_fill(seed in any::<u64>(), w in 1usize..70, h in 1usize..70) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mv = MotionField::zeros(w, h, 7);
        for v in mv.vectors.iter_mut() {
            *v = MotionVector::new(rng.random_range(-7..=7), rng.random_range(-7..=7));
        }
        let d = mv_to_dense(&mv, w, h).unwrap();
        for y in 0..h {
            for x in 0..w {
                let v = mv.vectors[(y / 16) * mv.blocks_x + x / 16];
                prop_assert_eq!(d.at(0, x, y), v.dx as f32);
                prop_assert_eq!(d.at(1, x, y), v.dy as f32);
            }
        }
    }
}
