use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cvip::distill::*;
use cvip::tensor::gradcheck::check_gradients;
use cvip::tensor::{softmax_values, Tensor};

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, v).unwrap()
}

const LN2: f64 = std::f64::consts::LN_2;

#[test]
fn cross_entropy_examples() {
    assert!((cross_entropy(&t(&[1, 2], &[0.0, 0.0]), &[0]).unwrap().item() - LN2).abs() < 1e-12);
    assert!(cross_entropy(&t(&[1, 2], &[1000.0, 0.0]), &[0]).unwrap().item().abs() < 1e-12);
    let batch = t(&[2, 3], &[0.3, -1.0, 2.0, 1.5, 0.0, 0.2]);
    let mean = cross_entropy(&batch, &[2, 0]).unwrap().item();
    let a = cross_entropy(&t(&[1, 3], &[0.3, -1.0, 2.0]), &[2]).unwrap().item();
    let b = cross_entropy(&t(&[1, 3], &[1.5, 0.0, 0.2]), &[0]).unwrap().item();
    assert!((mean - (a + b) / 2.0).abs() < 1e-12);
    assert!(cross_entropy(&batch, &[3, 0]).is_err());
}

#[test]
fn feature_distance_examples() {
    let fp = t(&[1, 2], &[1.0, 2.0]);
    let zero = t(&[1, 2], &[0.0, 0.0]);
    assert_eq!(feature_distance(&fp, &fp, FeatureNorm::L1).unwrap().item(), 0.0);
    assert_eq!(feature_distance(&fp, &zero, FeatureNorm::L1).unwrap().item(), 1.5);
    assert_eq!(feature_distance(&fp, &zero, FeatureNorm::L2).unwrap().item(), 2.5);
    assert!(feature_distance(&fp, &t(&[1, 3], &[0.0; 3]), FeatureNorm::L1).is_err());
}

#[test]
fn soft_label_examples() {
    let teacher = t(&[1, 2], &[2.0, 0.0]);
    let student = t(&[1, 2], &[0.0, 0.0]);
    assert!((soft_label_ce(&student, &teacher, 8.0, false).unwrap().item() - LN2).abs() < 1e-12);
    let p = softmax_values(&[0.25f64, 0.0], 2);
    assert!((p[0] - 0.5622).abs() < 1e-4 && (p[1] - 0.4378).abs() < 1e-4);

    // matching student: loss equals the entropy of the softened teacher
    let entropy = -(p[0] * p[0].ln() + p[1] * p[1].ln());
    let matched = soft_label_ce(&teacher, &teacher, 8.0, false).unwrap().item();
    assert!((matched - entropy).abs() < 1e-12);

    // very hot: both sides uniform
    let s = t(&[1, 3], &[5.0, -2.0, 1.0]);
    let te = t(&[1, 3], &[-3.0, 4.0, 0.5]);
    assert!((soft_label_ce(&s, &te, 1e9, false).unwrap().item() - 3f64.ln()).abs() < 1e-6);

    let scaled = soft_label_ce(&student, &teacher, 8.0, true).unwrap().item();
    assert!((scaled - 64.0 * LN2).abs() < 1e-10);
    assert!(soft_label_ce(&student, &teacher, 0.0, false).is_err());
}

#[test]
fn p_stream_loss_examples() {
    let logits = t(&[1, 2], &[0.0, 0.0]);
    let fp = t(&[1, 2], &[1.0, 2.0]);
    let f_of = t(&[1, 2], &[0.0, 0.0]);
    let teacher_logits = t(&[1, 2], &[2.0, 0.0]);
    let teacher = Some(TeacherOutputs { feature: &f_of, logits: &teacher_logits });

    let plain = p_stream_loss(&logits, &[0], &fp, teacher, &LossConfig::supervised()).unwrap();
    let ce = cross_entropy(&logits, &[0]).unwrap();
    assert_eq!(plain.total.item().to_bits(), ce.item().to_bits());

    let best = p_stream_loss(&logits, &[0], &fp, teacher, &LossConfig::default()).unwrap();
    assert!((best.total.item() - (LN2 + 75.0)).abs() < 1e-12);
    assert!((best.total.item() - 75.6931).abs() < 1e-4);

    let soft_cfg = LossConfig { lambda1: 0.0, lambda2: 50.0, ..LossConfig::default() };
    let soft = p_stream_loss(&logits, &[0], &fp, teacher, &soft_cfg).unwrap();
    let expect = LN2 + 50.0 * soft_label_ce(&logits, &teacher_logits, 8.0, false).unwrap().item();
    assert!((soft.total.item() - expect).abs() < 1e-12);
    assert!((soft.total.item() - 51.0 * LN2).abs() < 1e-12);

    assert!(p_stream_loss(&logits, &[0], &fp, None, &LossConfig::default()).is_err());
    let negative = LossConfig { lambda1: -1.0, ..LossConfig::default() };
    assert!(p_stream_loss(&logits, &[0], &fp, teacher, &negative).is_err());
}

#[test]
fn teacher_side_receives_no_gradient() {
    let fp = Tensor::<f64>::param(&[1, 2], vec![1.0, 2.0]).unwrap();
    let f_of = Tensor::<f64>::param(&[1, 2], vec![0.5, -0.5]).unwrap();
    let zs = Tensor::<f64>::param(&[1, 2], vec![0.1, 0.3]).unwrap();
    let zt = Tensor::<f64>::param(&[1, 2], vec![1.0, -1.0]).unwrap();
    let cfg = LossConfig { lambda2: 3.0, ..LossConfig::default() };
    let parts = p_stream_loss(&zs, &[1], &fp, Some(TeacherOutputs { feature: &f_of, logits: &zt }), &cfg).unwrap();
    parts.total.backward().unwrap();
    assert!(fp.grad().is_some() && zs.grad().is_some());
    assert!(f_of.grad().is_none() && zt.grad().is_none());
}

#[test]
fn lambda_scales_gradient_exactly() {
    let fp = Tensor::<f64>::param(&[1, 4], vec![0.3, -0.8, 1.2, 0.1]).unwrap();
    let f_of = t(&[1, 4], &[0.0, 0.5, 0.0, -0.4]);
    feature_distance(&fp, &f_of, FeatureNorm::L1).unwrap().backward().unwrap();
    let g1 = fp.grad().unwrap();
    fp.zero_grad();
    feature_distance(&fp, &f_of, FeatureNorm::L1).unwrap().scale(50.0).backward().unwrap();
    let g50 = fp.grad().unwrap();
    for (a, b) in g1.iter().zip(&g50) {
        assert_eq!(a * 50.0, *b);
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for shape in [[2, 3], [3, 5], [1, 8], [4, 2], [2, 6]] {
        let n = shape[0] * shape[1];
        let away = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(0.2..1.0) * if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
        };
        let fp = Tensor::param(&shape, away(&mut rng)).unwrap();
        let f_of = t(&shape, &vec![0.0; n]);
        for norm in [FeatureNorm::L1, FeatureNorm::L2] {
            let r = check_gradients(&[fp.clone()], |x| feature_distance(&x[0], &f_of, norm), 1e-4).unwrap();
            assert!(r.max_rel_error < 1e-4, "{norm:?} {r:?}");
        }
        let zs = Tensor::param(&shape, away(&mut rng)).unwrap();
        let zt = t(&shape, &away(&mut rng));
        let r = check_gradients(&[zs], |x| soft_label_ce(&x[0], &zt, 8.0, false), 1e-4).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}

proptest! {
    #[test]
    fn components_are_non_negative(
        a in prop::collection::vec(-20.0f64..20.0, 6),
        b in prop::collection::vec(-20.0f64..20.0, 6),
        label in 0usize..3,
        temp in 0.5f64..20.0,
    ) {
        let za = t(&[2, 3], &a);
        let zb = t(&[2, 3], &b);
        prop_assert!(cross_entropy(&za, &[label, 2 - label]).unwrap().item() >= 0.0);
        prop_assert!(feature_distance(&za, &zb, FeatureNorm::L1).unwrap().item() >= 0.0);
        prop_assert!(feature_distance(&za, &zb, FeatureNorm::L2).unwrap().item() >= 0.0);
        prop_assert!(soft_label_ce(&za, &zb, temp, false).unwrap().item() >= 0.0);
    }

    #[test]
    fn zero_weights_reduce_to_cross_entropy(
        z in prop::collection::vec(-10.0f32..10.0, 8),
        f in prop::collection::vec(-10.0f32..10.0, 4),
        labels in prop::collection::vec(0usize..4, 2),
    ) {
        let logits = Tensor::<f32>::new(&[2, 4], z).unwrap();
        let feat = Tensor::<f32>::new(&[2, 2], f).unwrap();
        let parts = p_stream_loss(&logits, &labels, &feat, None, &LossConfig::supervised()).unwrap();
        let ce = cross_entropy(&logits, &labels).unwrap().item();
        prop_assert_eq!(parts.total.item().to_bits(), ce.to_bits());
    }
}
