use std::cell::Cell;
use std::time::Duration;

use proptest::prelude::*;

use cvip::bench::*;
use cvip::models::{build_i_stream, build_p_stream, NetworkSpec};

/// Counts multiplications one at a time, visiting every output element and
/// every kernel tap, padded or not.
fn naive_conv_mults(input: [usize; 5], kernel: [usize; 5], stride: [usize; 3], padding: [usize; 3]) -> u64 {
    let [n, _, t, h, w] = input;
    let [co, ci, kt, kh, kw] = kernel;
    let mut count = 0u64;
    for _ in 0..n {
        for _ in 0..co {
            let mut ot = 0;
            while ot * stride[0] + kt <= t + 2 * padding[0] {
                let mut oh = 0;
                while oh * stride[1] + kh <= h + 2 * padding[1] {
                    let mut ow = 0;
                    while ow * stride[2] + kw <= w + 2 * padding[2] {
                        for _ in 0..ci * kt * kh * kw {
                            count += 1;
                        }
                        ow += 1;
                    }
                    oh += 1;
                }
                ot += 1;
            }
        }
    }
    count
}

#[test]
fn small_conv2d_example() {
    let (macs, out) = conv_macs([1, 1, 1, 4, 4], [1, 1, 1, 3, 3], [1; 3], [0, 1, 1]).unwrap();
    assert_eq!((macs, 2 * macs), (144, 288));
    assert_eq!(out, [1, 1, 1, 4, 4]);
    assert_eq!(naive_conv_mults([1, 1, 1, 4, 4], [1, 1, 1, 3, 3], [1; 3], [0, 1, 1]), 144);
}

#[test]
fn linear_example() {
    assert_eq!(linear_macs(1, 128, 8), 1024);
}

#[test]
fn temporal_kernel_scales_linearly() {
    let x = [2, 4, 8, 10, 10];
    let (m1, _) = conv_macs(x, [6, 4, 1, 3, 3], [1; 3], [0, 1, 1]).unwrap();
    let (m3, _) = conv_macs(x, [6, 4, 3, 3, 3], [1; 3], [1, 1, 1]).unwrap();
    assert_eq!(m3, 3 * m1);
}

proptest! {
    #[test]
    fn conv_formula_matches_naive_count(
        n in 1usize..3, ci in 1usize..4, co in 1usize..4,
        t in 1usize..5, h in 1usize..9, w in 1usize..9,
        kt in 1usize..4, k in 1usize..4,
        st in 1usize..3, s in 1usize..3, pt in 0usize..2, p in 0usize..2,
    ) {
        let (x, kern, stride, pad) = ([n, ci, t, h, w], [co, ci, kt, k, k], [st, s, s], [pt, p, p]);
        match conv_macs(x, kern, stride, pad) {
            Some((macs, _)) => prop_assert_eq!(macs, naive_conv_mults(x, kern, stride, pad)),
            None => prop_assert_eq!(naive_conv_mults(x, kern, stride, pad), 0),
        }
    }
}

#[test]
fn network_layers_match_the_naive_count() {
    let spec = NetworkSpec::p_stream(8);
    let net = build_p_stream::<f32>(&spec, 0).unwrap();
    let cost = count_flops(&net, &[1, 5, 16, 64, 64]).unwrap();
    let convs: Vec<_> = cost.layers.iter().filter(|l| l.kind == LayerKind::Conv).collect();
    assert_eq!(convs.len(), net.conv_layers().len());
    let x: cvip::tensor::Tensor<f32> = cvip::tensor::Tensor::zeros(&[1, 5, 16, 64, 64]);
    let trace = net.forward_trace(&x, false).unwrap();
    assert_eq!(&cost.layers.iter().find(|l| l.name == "gap").unwrap().output_shape, trace.output.feature.shape());
    for l in &cost.layers {
        if matches!(l.kind, LayerKind::Conv | LayerKind::Linear) {
            assert_eq!(l.flops, 2 * l.macs, "{}", l.name);
        } else {
            assert_eq!(l.macs, 0);
        }
    }
    assert_eq!(cost.macs, cost.layers.iter().map(|l| l.macs).sum::<u64>());
    assert_eq!(cost.flops, cost.layers.iter().map(|l| l.flops).sum::<u64>());
}

#[test]
fn p_stream_is_cheaper_than_i_stream() {
    let i = build_i_stream::<f32>(&NetworkSpec::i_stream(8), 0).unwrap();
    let p = build_p_stream::<f32>(&NetworkSpec::p_stream(8), 0).unwrap();
    let costs = two_stream_costs(&i, &p, 16, 64).unwrap();
    let report = CostReport::new(costs, None);
    let (ci, cp) = (report.stream("i_stream").unwrap(), report.stream("p_stream").unwrap());
    assert!(cp.flops < ci.flops, "{} vs {}", cp.flops, ci.flops);
    assert_eq!(report.total_flops, ci.flops + cp.flops);
}

#[test]
fn doubling_the_side_quadruples_cost() {
    let p = build_p_stream::<f32>(&NetworkSpec::p_stream(8), 0).unwrap();
    let small = count_flops(&p, &[1, 5, 16, 64, 64]).unwrap().flops as f64;
    let large = count_flops(&p, &[1, 5, 16, 128, 128]).unwrap().flops as f64;
    let r = large / small;
    assert!((3.8..=4.1).contains(&r), "ratio {r}");
}

#[test]
fn rejects_mismatched_inputs() {
    let p = build_p_stream::<f32>(&NetworkSpec::p_stream(8), 0).unwrap();
    assert!(count_flops(&p, &[1, 3, 16, 64, 64]).is_err());
    assert!(count_flops(&p, &[1, 5, 1, 64, 64]).is_err());
    assert!(count_flops(&p, &[5, 64, 64]).is_err());
}

struct Stub {
    pre: Duration,
    i: Duration,
    p: Duration,
    warm_spike: Cell<Option<Duration>>,
}

impl InferenceRunner for Stub {
    type Prepared = ();

    fn videos(&self) -> usize {
        3
    }

    fn preprocess(&self, _: usize) -> Result<()> {
        std::thread::sleep(self.pre + self.warm_spike.take().unwrap_or_default());
        Ok(())
    }

    fn run_i(&self, _: &()) -> Result<()> {
        std::thread::sleep(self.i);
        Ok(())
    }

    fn run_p(&self, _: &()) -> Result<()> {
        std::thread::sleep(self.p);
        Ok(())
    }
}

fn stub(pre: u64, i: u64, p: u64) -> Stub {
    Stub {
        pre: Duration::from_millis(pre),
        i: Duration::from_millis(i),
        p: Duration::from_millis(p),
        warm_spike: Cell::new(None),
    }
}

#[test]
fn stub_timings_are_recovered() {
    let t = measure_vps(&stub(5, 10, 20), 3, 1).unwrap();
    for (got, want) in [(t.preprocessing, 0.005), (t.i_stream, 0.010), (t.p_stream, 0.020)] {
        assert!((got - want).abs() / want < 0.2, "{got} vs {want}");
    }
    assert!((t.seconds_per_video - 0.035).abs() / 0.035 < 0.2);
    assert!((t.vps * t.seconds_per_video - 1.0).abs() < 1e-9);
}

#[test]
fn added_load_slows_the_measurement() {
    let fast = measure_vps(&stub(1, 2, 2), 3, 1).unwrap();
    let slow = measure_vps(&stub(1, 2, 12), 3, 1).unwrap();
    assert!(slow.p_stream > fast.p_stream && slow.vps < fast.vps);
}

#[test]
fn unstable_warmup_is_refused() {
    let s = stub(1, 1, 1);
    s.warm_spike.set(Some(Duration::from_millis(40)));
    assert!(matches!(measure_vps(&s, 3, 2), Err(BenchError::Unstable { .. })));
}

#[test]
fn timing_arguments_are_checked() {
    assert!(matches!(measure_vps(&stub(0, 0, 0), 2, 1), Err(BenchError::Config(_))));
    assert!(matches!(measure_vps(&stub(0, 0, 0), 3, 0), Err(BenchError::Config(_))));
}
