mod common;

use common::{calibrate, check_store, randn, rng};
use tagcn::model::{
    build_stgcn_baseline, build_tagcn, ensemble, predict_logits, softmax, LayerPlan, ModelConfig, MultiStream, Network,
};
use tagcn::streams::Stream;
use tagcn::tensor::ops::Mode;
use tagcn::tensor::Tensor;

fn toy(seed: u64) -> Network<f64> {
    let mut cfg = ModelConfig::tagcn_toy(16, 8, 4);
    cfg.seed = seed;
    build_tagcn(&cfg).unwrap()
}

fn is_pre_norm_bias(name: &str) -> bool {
    name.ends_with("spatial.bias") || name.ends_with("temporal.bias")
}

#[test]
fn canonical_forward_shapes() {
    let net: Network<f64> = build_tagcn(&ModelConfig::tagcn_ntu(150)).unwrap();
    let x = randn(&[1, 6, 300, 25], &mut rng(1)).map(|v| v * 0.1);
    let (logits, trace) = net.forward_traced(&x).unwrap();
    assert_eq!(logits.shape(), &[1, 60]);
    let trace = trace.unwrap();
    assert_eq!(trace.scores[0].len(), 300);
    assert_eq!(trace.indices[0].len(), 150);
    assert_eq!(net.config().temporal_extents().unwrap().last(), Some(&38));
}

#[test]
fn full_selection_variant() {
    let mut cfg = ModelConfig::tagcn_toy(16, 16, 3);
    cfg.seed = 3;
    let net: Network<f64> = build_tagcn(&cfg).unwrap();
    let x = randn(&[2, 6, 16, 5], &mut rng(2));
    let (_, trace) = net.forward_traced(&x).unwrap();
    for ix in trace.unwrap().indices {
        assert_eq!(ix, (0..16).collect::<Vec<_>>());
    }
}

#[test]
fn baseline_shapes() {
    let cfg = ModelConfig::stgcn_ntu();
    assert_eq!(cfg.layers.len(), 9);
    assert_eq!(cfg.temporal_extents().unwrap().last(), Some(&75));
    let toy_cfg = ModelConfig {
        topology: "toy-5".into(),
        num_joints: 5,
        sequence_length: 12,
        num_classes: 3,
        temporal_kernel: 3,
        ..ModelConfig::stgcn_ntu().with_width_scale(1.0 / 16.0)
    };
    let net: Network<f64> = build_stgcn_baseline(&toy_cfg).unwrap();
    let logits = net.forward(&randn(&[2, 3, 12, 5], &mut rng(4))).unwrap();
    assert_eq!(logits.shape(), &[2, 3]);
    assert!(build_stgcn_baseline::<f64>(&ModelConfig::tagcn_ntu(150)).is_err());
    assert!(build_tagcn::<f64>(&cfg).is_err());
}

#[test]
fn input_shape_is_checked() {
    let net = toy(0);
    let err = net.forward(&Tensor::zeros(&[1, 3, 16, 5])).unwrap_err();
    assert_eq!(err.category(), "shape");
}

#[test]
fn zero_classifier_gives_uniform_scores() {
    let mut net = toy(5);
    let w = net.classifier_weight();
    net.store_mut().get_mut(w).value.fill(0.0);
    let b = net.classifier_bias().unwrap();
    net.store_mut().get_mut(b).value.fill(0.0);
    for p in net.predict(&randn(&[3, 6, 16, 5], &mut rng(6))).unwrap() {
        for s in p.scores {
            assert!((s - 0.25).abs() < 1e-15);
        }
        assert_eq!(p.class, 0);
    }
}

#[test]
fn softmax_closed_form_and_oracle() {
    let z = Tensor::<f64>::from_f64(&[1, 2], &[2.0, 0.0]).unwrap();
    let s = &softmax(&z)[0];
    let e2 = 2f64.exp();
    assert!((s[0] - e2 / (e2 + 1.0)).abs() < 1e-15);
    assert!((s[1] - 1.0 / (e2 + 1.0)).abs() < 1e-15);

    let net = toy(7);
    let logits = net.forward(&randn(&[4, 6, 16, 5], &mut rng(8))).unwrap();
    for (row, p) in logits.data().chunks(4).zip(predict_logits(&logits)) {
        let denom: f64 = row.iter().map(|v| v.exp()).sum();
        let oracle: Vec<f64> = row.iter().map(|v| v.exp() / denom).collect();
        let total: f64 = p.scores.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        for (a, b) in p.scores.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        let best = (0..4).fold(0, |b, i| if oracle[i] > oracle[b] { i } else { b });
        assert_eq!(p.class, best);
    }
}

#[test]
fn ensemble_rules() {
    let (fused, cls) = ensemble::<f64>(&[vec![vec![0.6, 0.4]], vec![vec![0.1, 0.9]]]).unwrap();
    assert!((fused[0][0] - 0.7).abs() < 1e-15 && (fused[0][1] - 1.3).abs() < 1e-15);
    // second class, counting from zero
    assert_eq!(cls, vec![1]);

    let one = vec![vec![0.2, 0.5, 0.3], vec![0.4, 0.4, 0.2]];
    assert_eq!(ensemble(&[one.clone(), one.clone()]).unwrap().1, vec![1, 0]);

    let mut r = rng(9);
    let sets: Vec<Vec<Vec<f64>>> = (0..4)
        .map(|_| (0..6).map(|_| randn(&[5], &mut r).data().to_vec()).collect())
        .collect();
    let (fused, _) = ensemble(&sets).unwrap();
    for i in 0..6 {
        for k in 0..5 {
            let mut s = 0.0;
            for set in &sets {
                s += set[i][k];
            }
            assert!((fused[i][k] - s).abs() < 1e-15);
        }
    }
    assert_eq!(
        ensemble(&[one.clone(), vec![vec![1.0, 0.0]]]).unwrap_err().category(),
        "shape"
    );

    // a per-class-uniform logit shift leaves each stream's softmax unchanged
    let z = randn(&[3, 5], &mut r);
    let shifted = Tensor::from_fn(&[3, 5], |k| z.data()[k] + 4.0 * (k / 5) as f64);
    let a = softmax(&z);
    let b = softmax(&shifted);
    for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
        assert!((x - y).abs() < 1e-14);
    }
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let net = toy(11);
    net.save(&path).unwrap();
    let x = randn(&[2, 6, 16, 5], &mut rng(12));
    let mut other = toy(99);
    assert_ne!(other.forward(&x).unwrap(), net.forward(&x).unwrap());
    other.load(&path).unwrap();
    let (a, b) = (net.forward(&x).unwrap(), other.forward(&x).unwrap());
    let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn config_changes_are_validated() {
    let mut cfg = ModelConfig::tagcn_toy(16, 8, 4);
    cfg.layers.push(LayerPlan::new(32, 4, false, false));
    assert_eq!(build_tagcn::<f64>(&cfg).unwrap_err().category(), "config");
    let mut cfg = ModelConfig::tagcn_toy(16, 8, 4);
    cfg.num_joints = 6;
    assert_eq!(build_tagcn::<f64>(&cfg).unwrap_err().category(), "config");
}

#[test]
fn multi_stream_members() {
    let mut cfg = ModelConfig::tagcn_toy(16, 8, 4);
    cfg.stream = Stream::Joint;
    cfg.input_channels = 3;
    let single: Network<f64> = build_tagcn(&cfg).unwrap();
    let four: MultiStream<f64> = MultiStream::build(&cfg, 3, &Stream::SEPARATE).unwrap();
    assert_eq!(four.param_count(), 4 * single.param_count());
    let joints = randn(&[2, 3, 16, 5], &mut rng(13));
    assert_eq!(four.predict(&joints).unwrap().len(), 2);
}

#[test]
fn end_to_end_gradients() {
    for seed in 0..3 {
        let mut net = toy(seed);
        let x = randn(&[2, 6, 16, 5], &mut rng(seed + 100));
        calibrate(&mut net, &x);
        let net = net;
        let f = |ctx: &mut tagcn::layers::Ctx<'_, f64>, xv| Ok(net.forward_with(ctx, xv, None)?.logits);
        let r = check_store(net.store(), &x, Mode::Eval, 6, seed, |_| false, f);
        assert!(r.max_rel_error < 1e-4, "eval {r:?}");
        let r = check_store(net.store(), &x, Mode::Train, 6, seed, is_pre_norm_bias, f);
        assert!(r.max_rel_error < 1e-4, "train {r:?}");
        assert!(r.checked > 100, "{r:?}");
    }
}

#[test]
fn f32_network_runs() {
    let net: Network<f32> = build_tagcn(&ModelConfig::tagcn_toy(16, 8, 4)).unwrap();
    let x = Tensor::<f32>::from_fn(&[1, 6, 16, 5], |i| (i % 7) as f32 * 0.1);
    let p = net.predict(&x).unwrap();
    let total: f32 = p[0].scores.iter().sum();
    assert!((total - 1.0).abs() < 1e-5);
}
