use ddcnet::flow_io::FlowField;
use ddcnet::metrics::{aee, color_wheel, error_map, fl_all, flow_to_color, is_outlier, wheel_position, WHEEL_LEN};
use proptest::prelude::*;

fn field(h: usize, w: usize, vals: &[(f32, f32)]) -> FlowField {
    FlowField::from_fn(h, w, |y, x| vals[y * w + x])
}

fn oracle(pred: &FlowField, gt: &FlowField, mask: Option<&[bool]>) -> (f64, f64) {
    let (mut sum, mut out, mut n) = (0.0f64, 0usize, 0usize);
    for y in 0..gt.h {
        for x in 0..gt.w {
            if let Some(m) = mask {
                if !m[y * gt.w + x] {
                    continue;
                }
            }
            let (pu, pv) = pred.get(y, x);
            let (gu, gv) = gt.get(y, x);
            let du = pu as f64 - gu as f64;
            let dv = pv as f64 - gv as f64;
            let ee = (du * du + dv * dv).sqrt();
            let mag = ((gu as f64).powi(2) + (gv as f64).powi(2)).sqrt();
            sum += ee;
            if ee >= 3.0 && ee >= 0.05 * mag {
                out += 1;
            }
            n += 1;
        }
    }
    (sum / n as f64, out as f64 / n as f64)
}

fn arb_fields() -> impl Strategy<Value = (FlowField, FlowField, Vec<bool>)> {
    (1usize..10, 1usize..10).prop_flat_map(|(h, w)| {
        let n = h * w;
        (
            prop::collection::vec((-40.0f32..40.0, -40.0f32..40.0), n),
            prop::collection::vec((-40.0f32..40.0, -40.0f32..40.0), n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_map(move |(p, g, mut m)| {
                m[0] = true;
                (field(h, w, &p), field(h, w, &g), m)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn metrics_match_the_per_pixel_oracle((pred, gt, mask) in arb_fields()) {
        let (oa, of) = oracle(&pred, &gt, None);
        let a = aee(&pred, &gt, None).unwrap();
        prop_assert!((a - oa).abs() <= 1e-6 * oa.max(1.0));
        prop_assert_eq!(fl_all(&pred, &gt, None).unwrap(), of);
        let (oa, of) = oracle(&pred, &gt, Some(&mask));
        let a = aee(&pred, &gt, Some(&mask)).unwrap();
        prop_assert!((a - oa).abs() <= 1e-6 * oa.max(1.0));
        prop_assert_eq!(fl_all(&pred, &gt, Some(&mask)).unwrap(), of);
    }

    #[test]
    fn constant_offset_shifts_error_by_its_norm(cu in -5.0f32..5.0, cv in -5.0f32..5.0, gu in -9.0f32..9.0, gv in -9.0f32..9.0) {
        let gt = FlowField::uniform(3, 3, gu, gv);
        let pred = FlowField::uniform(3, 3, gu + cu, gv + cv);
        let expected = ((cu as f64).powi(2) + (cv as f64).powi(2)).sqrt();
        prop_assert!((aee(&pred, &gt, None).unwrap() - expected).abs() < 1e-5);
    }

    #[test]
    fn opposite_directions_sit_half_a_wheel_apart(angle in -3.1f32..3.1, mag in 0.1f32..50.0) {
        let (u, v) = (mag * angle.cos(), mag * angle.sin());
        let d = (wheel_position(u, v) - wheel_position(-u, -v)).abs();
        prop_assert!((d - (WHEEL_LEN - 1) as f32 / 2.0).abs() < 1e-3, "{}", d);
    }

    #[test]
    fn color_coding_is_total(vals in prop::collection::vec((-1e6f32..1e6, -1e6f32..1e6), 16)) {
        let f = field(4, 4, &vals);
        let a = flow_to_color(&f, None);
        let b = flow_to_color(&f, None);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn error_map_is_scale_invariant(vals in prop::collection::vec((-10.0f32..10.0, -10.0f32..10.0), 12), k in 0.5f32..4.0) {
        let pred = field(3, 4, &vals);
        let scaled = FlowField::from_fn(3, 4, |y, x| { let (u, v) = pred.get(y, x); (u * k, v * k) });
        let gt = FlowField::zeros(3, 4);
        let a = error_map(&pred, &gt).unwrap();
        let b = error_map(&scaled, &gt).unwrap();
        let close = a.pixels().zip(b.pixels()).all(|(p, q)| (p[0] as i32 - q[0] as i32).abs() <= 1);
        prop_assert!(close);
    }
}

#[test]
fn outlier_definition_boundaries() {
    assert!(is_outlier(4.0, 10.0));
    assert!(!is_outlier(4.0, 100.0));
    assert!(is_outlier(3.0, 0.0));
    assert!(!is_outlier(2.999, 0.0));
    let gt = FlowField::uniform(1, 1, 0.0, 10.0);
    let pred = FlowField::uniform(1, 1, 0.0, 6.0);
    assert_eq!(fl_all(&pred, &gt, None).unwrap(), 1.0);
    let gt = FlowField::uniform(1, 1, 0.0, 100.0);
    let pred = FlowField::uniform(1, 1, 0.0, 96.0);
    assert_eq!(fl_all(&pred, &gt, None).unwrap(), 0.0);
}

#[test]
fn unit_rightward_flow_takes_the_first_wheel_colour() {
    let wheel = color_wheel();
    let f = FlowField::uniform(1, 1, 1.0, 0.0);
    // magnitude 1 of max 1: fully saturated wheel entry
    let px = flow_to_color(&f, Some(1.0)).get_pixel(0, 0).0;
    assert_eq!(px, wheel[0]);
    assert_eq!(wheel_position(1.0, 0.0), 0.0);
}

#[test]
fn half_magnitude_blends_toward_white() {
    let f = FlowField::uniform(1, 1, 0.5, 0.0);
    let px = flow_to_color(&f, Some(1.0)).get_pixel(0, 0).0;
    // entry 0 is pure red; half saturation keeps red at 255 and lifts g, b to half
    assert_eq!(px, [255, 128, 128]);
}
