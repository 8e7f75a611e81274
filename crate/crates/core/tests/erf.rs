mod common;

use common::{random_tensor, rng};
use ddcnet::erf::{
    compute_erf, compute_stack_erf, gridding_score, read_profile_csv, render_erf, write_profile_csv, ErfChannel,
    ErfMap,
};
use ddcnet::flow_io::{generate_sample, GenConfig};
use ddcnet::layers::{he_init, theoretical_rf, ConvLayerSpec, ConvWeights};
use ddcnet::model::{ModelConfig, ModelParams, Stage};
use ddcnet::{Shape4, Tensor4};

fn linear_stack(dilations: &[usize], seed: u64) -> ErfMap {
    let specs: Vec<_> = dilations.iter().map(|&d| ConvLayerSpec::linear(1, 1, d, 1)).collect();
    let weights: Vec<_> = specs.iter().enumerate().map(|(i, s)| he_init(s, seed + i as u64)).collect();
    let mut r = rng(seed);
    let inputs = vec![random_tensor(&mut r, Shape4::new(1, 1, 31, 31), 1.0)];
    compute_stack_erf(&specs, &weights, &inputs).unwrap()
}

fn width(support: (usize, usize, usize, usize)) -> (usize, usize) {
    (support.2 - support.0 + 1, support.3 - support.1 + 1)
}

#[test]
fn single_linear_layer_support_is_3x3() {
    let erf = linear_stack(&[1], 0);
    let s = erf.support().unwrap();
    assert_eq!(width(s), (3, 3));
    assert_eq!((s.0, s.1), (14, 14));
    assert_eq!(erf.grid.iter().cloned().fold(0.0, f64::max), 1.0);
}

#[test]
fn dilated_stack_support_equals_theoretical_rf() {
    for (dil, seed) in [(vec![1, 2, 3], 1), (vec![1, 1, 2, 4], 2), (vec![2, 2], 3)] {
        let specs: Vec<_> = dil.iter().map(|&d| ConvLayerSpec::linear(1, 1, d, 1)).collect();
        let rf = theoretical_rf(&specs);
        let erf = linear_stack(&dil, seed);
        assert_eq!(width(erf.support().unwrap()), (rf, rf), "{dil:?}");
    }
    assert_eq!(theoretical_rf(&[1, 2, 3].map(|d| ConvLayerSpec::linear(1, 1, d, 1))), 13);
}

fn box_stack(dilation: usize, depth: usize) -> ErfMap {
    let specs = vec![ConvLayerSpec::linear(1, 1, dilation, 1); depth];
    let weights: Vec<_> = specs
        .iter()
        .map(|s| {
            let mut w = ConvWeights::zeros(s);
            w.kernels = w.kernels.map(|_| 1.0);
            w
        })
        .collect();
    let inputs = vec![Tensor4::zeros(Shape4::new(1, 1, 65, 65))];
    compute_stack_erf(&specs, &weights, &inputs).unwrap()
}

#[test]
fn repeated_dilation_grids_and_dense_stack_does_not() {
    let sparse = box_stack(2, 12);
    let dense = box_stack(1, 24);
    let (cy, cx) = sparse.center;
    // only even offsets are reachable with all-even dilations
    for dx in [1, 3, 5] {
        assert_eq!(sparse.at(cy, cx + dx), 0.0);
    }
    let gs = gridding_score(&sparse.center_profile()).unwrap();
    let gd = gridding_score(&dense.center_profile()).unwrap();
    assert!(gs > 0.1 && gd < 0.01, "{gs} vs {gd}");
}

/// Radius (in input pixels) of the region that can influence each stage
/// output, following concatenations and bilinear upsampling.
fn stage_radii(cfg: &ModelConfig) -> [usize; 3] {
    fn stack(mut r: usize, mut jump: usize, layers: &[ConvLayerSpec]) -> (usize, usize) {
        for l in layers {
            r += l.dilation * jump;
            jump *= l.stride;
        }
        (r, jump)
    }
    let (rs, _) = stack(0, 1, &cfg.spatial_extractor);
    let (r, j) = stack(rs, 1, &cfg.flow_extractor);
    let (r, j) = stack(r, j, &[cfg.head_coarse]);
    // a full-res pixel between source samples can read one up to 1.5f - 0.5 away
    let reach = |f: usize| (3 * f - 1) / 2;
    let coarse = r + reach(j);
    let (r, j) = stack(rs.max(coarse), 1, &cfg.refiner1);
    let (r, j) = stack(r, j, &[cfg.head_fine]);
    let fine = r + reach(j);
    let (r, _) = stack(rs.max(coarse).max(fine), 1, &cfg.refiner2);
    let (finest, _) = stack(r, 1, &[cfg.head_final]);
    [coarse, fine, finest]
}

#[test]
fn model_erf_stays_inside_receptive_field() {
    let cfg = ModelConfig::compact(2, 4);
    let params = ModelParams::init(&cfg, 11);
    let samples: Vec<_> = (0..2).map(|s| generate_sample(s, &GenConfig::new(64, 2, 3.0)).unwrap()).collect();
    for (stage, radius) in Stage::ALL.into_iter().zip(stage_radii(&cfg)) {
        let erf = compute_erf(&cfg, &params, stage, &samples, ErfChannel::Both).unwrap();
        let (cy, cx) = erf.center;
        assert_eq!((cy, cx), (32, 32));
        let (y0, x0, y1, x1) = erf.support().expect("non-empty ERF");
        assert!(y0 + radius >= cy && x0 + radius >= cx, "{stage:?}: {y0},{x0} r{radius}");
        assert!(y1 <= cy + radius && x1 <= cx + radius, "{stage:?}: {y1},{x1} r{radius}");
        assert!(erf.grid.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn profile_csv_round_trip() {
    let erf = linear_stack(&[1, 2], 7);
    let (img, profile) = render_erf(&erf);
    assert_eq!((img.width(), img.height()), (31, 31));
    assert_eq!(profile.len(), 31);
    assert_eq!(profile.iter().find(|p| p.0 == 0).unwrap().1, erf.at(erf.peak().0, erf.center.1));
    let dir = std::path::PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("erf");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("profile.csv");
    write_profile_csv(&path, &profile).unwrap();
    assert_eq!(read_profile_csv(&path).unwrap(), profile);
}
