mod common;

use common::norm_deficit;
use dpfg::rng::{substream, Stream};
use dpfg::transform::{clip_l2, l2_norm, tanh_filter, GradientTransform};
use proptest::prelude::*;
use rand::Rng;

/// Vectors mixing ordinary, tiny and huge (up to 1e12) magnitudes.
fn gradient() -> impl Strategy<Value = Vec<f64>> {
    let entry = prop_oneof![
        -10.0f64..10.0,
        -1e-6f64..1e-6,
        -1e12f64..1e12,
        Just(0.0),
        Just(1e12),
        Just(-1e12),
    ];
    prop::collection::vec(entry, 1..64)
}

fn params() -> impl Strategy<Value = (f64, f64)> {
    (0.1f64..10.0, 0.1f64..100.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn tanh_output_is_bounded(g in gradient(), (c, k) in params()) {
        let f = tanh_filter(&g, c, k);
        prop_assert!(f.iter().all(|v| v.abs() < c));
        prop_assert!(norm_deficit(&f, c) > 0.0);
    }

    #[test]
    fn tanh_preserves_order_and_sign(g in gradient(), (c, k) in params()) {
        let f = tanh_filter(&g, c, k);
        for i in 0..g.len() {
            prop_assert_eq!(f[i].signum() * (f[i] != 0.0) as i32 as f64,
                            g[i].signum() * (g[i] != 0.0) as i32 as f64);
            for j in 0..g.len() {
                if g[i] < g[j] {
                    prop_assert!(f[i] <= f[j]);
                    // strict wherever the filter is far from saturation
                    if (g[j] / k).abs() < 5.0 && (g[i] / k).abs() < 5.0 && g[j] - g[i] > 1e-9 * k {
                        prop_assert!(f[i] < f[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn tanh_is_odd(g in gradient(), (c, k) in params()) {
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let a = tanh_filter(&g, c, k);
        let b = tanh_filter(&neg, c, k);
        for (x, y) in a.iter().zip(b) {
            prop_assert!(*x == -y);
        }
    }

    #[test]
    fn tanh_linear_regime(x in -1e-3f64..1e-3, (c, k) in params()) {
        let g = x * k;
        let y = tanh_filter(&[g], c, k)[0];
        let r = (g / k).abs();
        // cubic remainder plus a few ulps of rounding in c * tanh(g / k)
        let bound = c * r.powi(3) / 2.0 + 4.0 * c * r * f64::EPSILON;
        prop_assert!((y - c / k * g).abs() <= bound, "{} vs {}", (y - c / k * g).abs(), bound);
    }

    #[test]
    fn clip_contract(g in gradient(), clip in 0.01f64..100.0) {
        let out = clip_l2(&g, clip);
        prop_assert!(l2_norm(&out) <= clip + 1e-12);
        let (ng, no) = (l2_norm(&g), l2_norm(&out));
        if ng > 0.0 {
            let dot: f64 = g.iter().zip(&out).map(|(a, b)| (a / ng) * (b / no)).sum();
            prop_assert!((dot - 1.0).abs() <= 1e-12, "cosine {}", dot);
        }
        if ng <= clip {
            prop_assert_eq!(out, g);
        }
    }
}

#[test]
fn tanh_sensitivity_bound_holds_on_random_vectors() {
    let t = GradientTransform::tanh(3.0, 1.0).unwrap();
    let bound = t.sensitivity_bound(100);
    assert_eq!(bound, 30.0);
    let mut rng = substream(17, Stream::Data);
    let mut worst: f64 = 0.0;
    for _ in 0..2000 {
        let scale = 10f64.powi(rng.random_range(-3..13));
        let g: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        let f = t.apply(&g);
        assert!(norm_deficit(&f, 3.0) > 0.0);
        worst = worst.max(l2_norm(&f));
    }
    // saturated vectors approach the bound to within rounding
    assert!(worst > 29.9 && worst <= bound * (1.0 + 1e-14), "{worst}");
}

#[test]
fn transforms_dispatch() {
    let g = [3.0, -4.0];
    let clip = GradientTransform::clip(1.0).unwrap();
    assert_eq!(clip.apply(&g), clip_l2(&g, 1.0));
    let tanh = GradientTransform::tanh(2.0, 3.0).unwrap();
    assert_eq!(tanh.apply(&g), tanh_filter(&g, 2.0, 3.0));
}
