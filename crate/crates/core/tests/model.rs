use ddcnet::model::{
    count_params, default_config, infer, load_checkpoint, save_checkpoint, ModelConfig, ModelParams,
};
use ddcnet::{Error, Shape4, Tensor4};

fn frames(h: usize, w: usize) -> (Tensor4, Tensor4) {
    let shape = Shape4::new(1, 3, h, w);
    let a = Tensor4::from_fn(shape, |_, c, y, x| ((x * 7 + y * 3 + c * 11) % 17) as f32 / 16.0);
    let b = Tensor4::from_fn(shape, |_, c, y, x| ((x * 5 + y * 9 + c * 2) % 13) as f32 / 12.0);
    (a, b)
}

#[test]
fn default_parameter_count_is_within_budget() {
    let cfg = default_config();
    // 3x3 kernels plus one bias per output channel, summed independently of the library
    let by_hand: usize = cfg.layers().iter().map(|l| 9 * l.in_channels * l.out_channels + l.out_channels).sum();
    assert_eq!(cfg.param_count(), by_hand);
    assert_eq!(count_params(&ModelParams::init(&cfg, 0)), by_hand);
    assert!((5_370_000..=5_710_000).contains(&by_hand), "{by_hand}");
    assert_eq!(cfg.layers().len(), 54);
}

#[test]
fn shape_ladder() {
    let cfg = default_config();
    let params = ModelParams::init(&cfg, 1);
    for (h, w) in [(64, 64), (128, 96)] {
        let (a, b) = frames(h, w);
        let out = infer(&cfg, &params, &a, &b).unwrap();
        assert_eq!(out.raw_uv_quarter.shape(), Shape4::new(1, 2, h / 4, w / 4));
        assert_eq!(out.raw_uv_half.shape(), Shape4::new(1, 2, h / 2, w / 2));
        assert_eq!(out.flow_final.shape(), Shape4::new(1, 2, h, w));
        assert_eq!(out.flow_coarsest.shape(), Shape4::new(1, 2, h, w));
        assert_eq!(out.flow_finer.shape(), Shape4::new(1, 2, h, w));
        assert!(out.flow_final.is_finite());
    }
}

#[test]
fn frames_must_be_multiples_of_four_and_in_range() {
    let cfg = ModelConfig::compact(2, 4);
    let params = ModelParams::init(&cfg, 0);
    let (a, b) = frames(18, 16);
    assert!(matches!(infer(&cfg, &params, &a, &b), Err(Error::Input(_))));
    let (mut a, b) = frames(16, 16);
    a.data_mut()[5] = 1.5;
    assert!(matches!(infer(&cfg, &params, &a, &b), Err(Error::Input(_))));
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let cfg = default_config();
    let params = ModelParams::init(&cfg, 42);
    let bytes = save_checkpoint(&cfg, &params).unwrap();
    let (cfg2, params2) = load_checkpoint(&bytes).unwrap();
    assert_eq!(cfg2, cfg);
    assert_eq!(params2, params);
    assert_eq!(save_checkpoint(&cfg2, &params2).unwrap(), bytes);

    assert!(load_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(load_checkpoint(&bad).is_err());
}

#[test]
fn inference_is_deterministic() {
    let cfg = ModelConfig::compact(2, 8);
    let params = ModelParams::init(&cfg, 3);
    let (a, b) = frames(32, 24);
    let x = infer(&cfg, &params, &a, &b).unwrap();
    let y = infer(&cfg, &params, &a, &b).unwrap();
    assert_eq!(x.flow_final, y.flow_final);
}
