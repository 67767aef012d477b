use tagcn::complexity::{analyze, compare, count_flops, count_params, Stage, PUBLISHED_RATIOS};
use tagcn::model::{build_tagcn, ModelConfig, Network};

fn tagcn(t_prime: usize) -> ModelConfig {
    ModelConfig::tagcn_ntu(t_prime)
}

#[test]
fn rows_sum_to_totals() {
    for cfg in [tagcn(150), ModelConfig::stgcn_ntu(), ModelConfig::tagcn_toy(16, 8, 4)] {
        let r = analyze(&cfg).unwrap();
        assert_eq!(r.rows.iter().map(|x| x.params).sum::<u64>(), r.total_params);
        assert_eq!(r.rows.iter().map(|x| x.flops).sum::<u64>(), r.total_flops);
    }
}

#[test]
fn analytic_params_match_allocated_tensors() {
    for cfg in [tagcn(150), ModelConfig::tagcn_toy(16, 8, 4), ModelConfig::stgcn_ntu()] {
        let net: Network<f32> = Network::build(&cfg).unwrap();
        assert_eq!(analyze(&cfg).unwrap().total_params, count_params(&net));
        assert_eq!(count_flops(&net), analyze(&cfg).unwrap().total_flops);
    }
    let net: Network<f64> = build_tagcn(&ModelConfig::tagcn_toy(16, 8, 4)).unwrap();
    let by_prefix = |p: &str| {
        net.store()
            .iter()
            .filter(|x| x.name.starts_with(p))
            .map(|x| x.value.numel() as u64)
            .sum::<u64>()
    };
    let r = analyze(net.config()).unwrap();
    for row in &r.rows {
        let prefix = match row.name.as_str() {
            "head" => "classifier.".to_string(),
            "tam" => "tam.".to_string(),
            other => format!("{other}."),
        };
        assert_eq!(row.params, by_prefix(&prefix), "{}", row.name);
    }
}

#[test]
fn first_layer_by_hand() {
    // 6 -> 64 channels, 300 frames, 25 joints, no temporal branch
    let r = analyze(&tagcn(150)).unwrap();
    let row = &r.rows[0];
    let (t, n) = (300u64, 25u64);
    let convs = 3 * 2 * 64 * 6 * t * n;
    let graph = 3 * 2 * 64 * t * n * n + 3 * n * n;
    let elementwise = (2 + 1 + 2) * 64 * t * n; // partition sum, bias, norm, relu
    assert_eq!(row.flops, convs + graph + elementwise);
    assert_eq!(row.params, 3 * (64 * 6 + 625) + 64 + 128);
    assert_eq!(row.output_shape, vec![64, 300, 25]);
}

#[test]
fn theta_contributes_t_squared() {
    let mut a = ModelConfig::tagcn_toy(16, 8, 4);
    let p16 = analyze(&a).unwrap();
    a.sequence_length = 32;
    let p32 = analyze(&a).unwrap();
    assert_eq!(p32.total_params - p16.total_params, 32 * 32 - 16 * 16);
    let tam = |r: &tagcn::complexity::CostReport| r.rows.iter().find(|x| x.name == "tam").unwrap().params;
    assert_eq!(tam(&p16), 256);
    assert_eq!(tam(&p32), 1024);
}

#[test]
fn doubling_frames_doubles_pre_attention_work() {
    let mut cfg = tagcn(150);
    let a = analyze(&cfg).unwrap();
    cfg.sequence_length = 600;
    let b = analyze(&cfg).unwrap();
    // mask combination (3N² per layer) does not depend on T
    let masks = 2 * 3 * 25 * 25;
    assert_eq!(
        b.stage_flops(Stage::PreAttention) + masks,
        2 * a.stage_flops(Stage::PreAttention)
    );
    assert_eq!(b.total_params - a.total_params, 600 * 600 - 300 * 300);
}

#[test]
fn post_attention_cost_is_affine_in_t_prime() {
    let post = |t| {
        let r = analyze(&tagcn(t)).unwrap();
        r.stage_flops(Stage::PostAttention) + r.stage_flops(Stage::Head)
    };
    // extents that halve exactly through both strided layers
    let (a, b, c) = (post(100), post(200), post(300));
    assert_eq!(c - b, b - a);
    // odd intermediate extents round up (75 -> 38), so other triples are
    // off by at most the half frame gained at the smallest extent
    let (x, y, z) = (post(150) as f64, post(225) as f64, post(300) as f64);
    let dev = ((z - x) - 2.0 * (y - x)).abs() / (z - x);
    assert!(dev > 0.0 && dev < 1.0 / 38.0, "{dev}");
}

#[test]
fn flops_grow_with_t_prime() {
    let flops: Vec<u64> = [10, 30, 50, 100, 150, 200, 250, 300]
        .iter()
        .map(|&t| analyze(&tagcn(t)).unwrap().total_flops)
        .collect();
    assert!(flops.windows(2).all(|w| w[0] < w[1]), "{flops:?}");
}

#[test]
fn comparisons() {
    let a = analyze(&tagcn(150)).unwrap();
    let self_cmp = compare(&[a.clone(), a.clone().renamed("copy")], "ta-gcn").unwrap();
    for row in &self_cmp.rows {
        assert_eq!((row.params_ratio, row.flops_ratio), (1.0, 1.0));
    }
    let two = a.streams(2);
    let four = a.streams(4);
    let t = compare(&[a.clone(), two.clone(), four.clone()], "ta-gcn").unwrap();
    assert_eq!(t.row(&two.name).unwrap().flops_ratio, 2.0);
    assert_eq!(t.row(&two.name).unwrap().params_ratio, 2.0);
    assert_eq!(t.row(&four.name).unwrap().flops_ratio, 4.0);
    assert_eq!(four.streams(1).total_flops, 4 * a.total_flops);
    assert_eq!(
        compare(std::slice::from_ref(&a), "ta-gcn").unwrap_err().category(),
        "config"
    );
    assert_eq!(compare(&[a.clone(), two], "nope").unwrap_err().category(), "config");
    assert_eq!(PUBLISHED_RATIOS[0].method, "ST-GCN");
}

#[test]
fn output_formats() {
    let r = analyze(&ModelConfig::tagcn_toy(16, 8, 4)).unwrap();
    let text = r.to_table();
    assert!(text.contains("layer6") && text.contains("MAC=2"));
    let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(json["total_params"].as_u64(), Some(r.total_params));
    assert_eq!(json["rows"][2]["stage"], "attention");
}
