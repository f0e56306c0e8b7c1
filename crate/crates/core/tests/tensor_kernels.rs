mod common;

use common::*;
use proptest::prelude::*;
use voxgen::tensor::{
    activation, concat_channels, conv3d, conv_transpose3d, instance_norm, reduce_mean,
    split_channels, Activation, ConvSpec,
};
use voxgen::Tensor;

fn zeros_bias(c: usize) -> Tensor<f32> {
    Tensor::zeros(&[c]).unwrap()
}

#[test]
fn conv3d_matches_naive_on_seeded_strided_case() {
    let x = uniform(&[1, 2, 4, 4, 4], 0.0, 1.0, 11);
    let k = uniform(&[4, 2, 2, 2, 2], -1.0, 1.0, 12);
    let b = uniform(&[4], -1.0, 1.0, 13);
    let y = conv3d(&x, &k, &b, &ConvSpec::cubic(2, 4, 2, 2, 0)).unwrap();
    assert_eq!(y.shape(), &[1, 4, 2, 2, 2]);
    let (want, ws) = naive_conv3d(&widen(&x), shape5(&x), &widen(&k), shape5(&k), &widen(&b), 2, 0);
    assert_eq!(ws, [1, 4, 2, 2, 2]);
    assert!(max_abs_diff(&widen(&y), &want) <= 1e-5);
}

/// Sweeps every spatial extent triple up to 6 with cubic kernels 1..=3,
/// channels 1..=3, strides {1,2} and pads {0,1}.
fn sweep(mut check: impl FnMut([usize; 3], usize, usize, usize, usize, usize)) {
    for d in 1..=6 {
        for h in 1..=6 {
            for w in 1..=6 {
                for cin in 1..=3 {
                    for cout in 1..=3 {
                        for k in 1..=3 {
                            for s in 1..=2 {
                                for p in 0..=1 {
                                    check([d, h, w], cin, cout, k, s, p);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn conv3d_exhaustive_small_sweep() {
    let mut worst = 0f64;
    let mut cases = 0;
    sweep(|[d, h, w], cin, cout, k, s, p| {
        if [d, h, w].iter().any(|&e| e + 2 * p < k) {
            return;
        }
        let seed = (d * 1000 + h * 100 + w * 10 + cin) as u64 * 97 + (cout * 31 + k * 7 + s * 3 + p) as u64;
        let x = uniform(&[1, cin, d, h, w], -1.0, 1.0, seed);
        let kk = uniform(&[cout, cin, k, k, k], -1.0, 1.0, seed + 1);
        let b = uniform(&[cout], -1.0, 1.0, seed + 2);
        let y = conv3d(&x, &kk, &b, &ConvSpec::cubic(cin, cout, k, s, p)).unwrap();
        let (want, ws) = naive_conv3d(&widen(&x), shape5(&x), &widen(&kk), shape5(&kk), &widen(&b), s, p);
        assert_eq!(y.shape(), &ws);
        worst = worst.max(max_abs_diff(&widen(&y), &want));
        cases += 1;
    });
    assert!(cases > 10_000);
    assert!(worst <= 1e-5, "max |Δ| = {worst}");
}

#[test]
fn conv_transpose3d_exhaustive_small_sweep() {
    let mut worst = 0f64;
    sweep(|[d, h, w], cin, cout, k, s, p| {
        if [d, h, w].iter().any(|&e| s * (e - 1) + k <= 2 * p) {
            return;
        }
        let seed = (d * 1000 + h * 100 + w * 10 + cin) as u64 * 89 + (cout * 31 + k * 7 + s * 3 + p) as u64;
        let x = uniform(&[1, cin, d, h, w], -1.0, 1.0, seed);
        let kk = uniform(&[cin, cout, k, k, k], -1.0, 1.0, seed + 1);
        let b = uniform(&[cout], -1.0, 1.0, seed + 2);
        let y = conv_transpose3d(&x, &kk, &b, &ConvSpec::cubic(cin, cout, k, s, p)).unwrap();
        let (want, ws) =
            naive_conv_transpose3d(&widen(&x), shape5(&x), &widen(&kk), shape5(&kk), &widen(&b), s, p);
        assert_eq!(y.shape(), &ws);
        worst = worst.max(max_abs_diff(&widen(&y), &want));
    });
    assert!(worst <= 1e-5, "max |Δ| = {worst}");
}

#[test]
fn batched_conv_matches_naive() {
    let x = uniform(&[3, 2, 5, 4, 6], -1.0, 1.0, 3);
    let k = uniform(&[3, 2, 3, 3, 3], -1.0, 1.0, 4);
    let b = uniform(&[3], -1.0, 1.0, 5);
    let y = conv3d(&x, &k, &b, &ConvSpec::cubic(2, 3, 3, 2, 1)).unwrap();
    let (want, _) = naive_conv3d(&widen(&x), shape5(&x), &widen(&k), shape5(&k), &widen(&b), 2, 1);
    assert!(max_abs_diff(&widen(&y), &want) <= 1e-5);
}

fn adjoint_gap(seed: u64, cin: usize, cout: usize, side: usize, k: usize, s: usize, p: usize) -> f64 {
    let spec = ConvSpec::cubic(cin, cout, k, s, p);
    let x = uniform(&[1, cin, side, side, side], -1.0, 1.0, seed);
    let kk = uniform(&[cout, cin, k, k, k], -1.0, 1.0, seed + 1);
    let y_shape = spec.conv_output([side; 3]).unwrap();
    let y = uniform(&[1, cout, y_shape[0], y_shape[1], y_shape[2]], -1.0, 1.0, seed + 2);
    let cx = conv3d(&x, &kk, &zeros_bias(cout), &spec).unwrap();
    let ty = conv_transpose3d(&y, &kk, &zeros_bias(cin), &ConvSpec::cubic(cout, cin, k, s, p)).unwrap();
    assert_eq!(ty.shape(), x.shape(), "adjoint must map back onto the input grid");
    let lhs = dot(&widen(&cx), &widen(&y));
    let rhs = dot(&widen(&x), &widen(&ty));
    (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12)
}

#[test]
fn adjoint_identity_seeded_example() {
    let x = uniform(&[1, 1, 4, 4, 4], -1.0, 1.0, 21);
    let y = uniform(&[1, 1, 2, 2, 2], -1.0, 1.0, 22);
    let k = uniform(&[1, 1, 2, 2, 2], -1.0, 1.0, 23);
    let spec = ConvSpec::cubic(1, 1, 2, 2, 0);
    let cx = conv3d(&x, &k, &zeros_bias(1), &spec).unwrap();
    let ty = conv_transpose3d(&y, &k, &zeros_bias(1), &spec).unwrap();
    let gap = (dot(&widen(&cx), &widen(&y)) - dot(&widen(&x), &widen(&ty))).abs();
    assert!(gap <= 1e-4, "{gap}");
}

#[test]
fn adjoint_identity_random_geometries() {
    for trial in 0..40u64 {
        let cin = 1 + (trial % 3) as usize;
        let cout = 1 + (trial / 3 % 3) as usize;
        let (k, s, p) = [(4, 2, 1), (3, 1, 1), (2, 2, 0), (1, 1, 0)][(trial % 4) as usize];
        let side = 4 + 2 * (trial % 2) as usize;
        let gap = adjoint_gap(1000 + trial * 7, cin, cout, side, k, s, p);
        assert!(gap <= 1e-4, "trial {trial}: {gap}");
    }
}

#[test]
fn conv3d_is_linear() {
    let spec = ConvSpec::cubic(2, 3, 3, 2, 1);
    let x = uniform(&[1, 2, 6, 6, 6], -1.0, 1.0, 40);
    let z = uniform(&[1, 2, 6, 6, 6], -1.0, 1.0, 41);
    let k = uniform(&[3, 2, 3, 3, 3], -1.0, 1.0, 42);
    let (alpha, beta) = (0.7, -1.3);
    let combo = x.scale(alpha).add(&z.scale(beta)).unwrap();
    let lhs = conv3d(&combo, &k, &zeros_bias(3), &spec).unwrap();
    let cx = conv3d(&x, &k, &zeros_bias(3), &spec).unwrap();
    let cz = conv3d(&z, &k, &zeros_bias(3), &spec).unwrap();
    let rhs: Vec<f64> = widen(&cx)
        .iter()
        .zip(widen(&cz))
        .map(|(a, b)| alpha * a + beta * b)
        .collect();
    assert!(max_abs_diff(&widen(&lhs), &rhs) <= 1e-4);
}

#[test]
fn instance_norm_standardizes_each_channel() {
    let x = uniform(&[2, 3, 4, 4, 4], -3.0, 5.0, 50);
    let g = Tensor::full(&[3], 1.0f32).unwrap();
    let b = Tensor::zeros(&[3]).unwrap();
    let y = instance_norm(&x, &g, &b, 1e-5).unwrap();
    for chunk in y.data().chunks(64) {
        let m: f64 = chunk.iter().map(|&v| v as f64).sum::<f64>() / 64.0;
        let v: f64 = chunk.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / 64.0;
        assert!(m.abs() <= 1e-5, "mean {m}");
        assert!((v - 1.0).abs() <= 1e-3, "var {v}");
    }
}

#[test]
fn concat_slice_back_oracle() {
    let a = uniform(&[2, 2, 3, 2, 2], -1.0, 1.0, 60);
    let b = uniform(&[2, 3, 3, 2, 2], -1.0, 1.0, 61);
    let c = concat_channels(&a, &b).unwrap();
    let plane = 12;
    for n in 0..2 {
        for ch in 0..5 {
            let got = &c.data()[(n * 5 + ch) * plane..][..plane];
            let want = if ch < 2 {
                &a.data()[(n * 2 + ch) * plane..][..plane]
            } else {
                &b.data()[(n * 3 + ch - 2) * plane..][..plane]
            };
            assert_eq!(got, want);
        }
    }
    let (a2, b2) = split_channels(&c, 2).unwrap();
    assert_eq!((a2, b2), (a, b));
}

#[test]
fn reduce_mean_matches_sequential_oracle() {
    let x = uniform(&[10, 10, 10], -2.0, 7.0, 70);
    let mut s = 0f64;
    for &v in x.data() {
        s += v as f64;
    }
    let want = s / 1000.0;
    let got = reduce_mean(&x) as f64;
    assert!(((got - want) / want).abs() <= 1e-6);
}

#[test]
fn kernels_are_deterministic() {
    let x = uniform(&[1, 2, 8, 8, 8], -1.0, 1.0, 80);
    let k = uniform(&[3, 2, 4, 4, 4], -1.0, 1.0, 81);
    let b = uniform(&[3], -1.0, 1.0, 82);
    let spec = ConvSpec::cubic(2, 3, 4, 2, 1);
    let y1 = conv3d(&x, &k, &b, &spec).unwrap();
    let y2 = conv3d(&x, &k, &b, &spec).unwrap();
    assert_eq!(y1.data(), y2.data());
    let t = uniform(&[3, 2, 4, 4, 4], -1.0, 1.0, 83);
    let spec_t = ConvSpec::cubic(3, 2, 4, 2, 1);
    let u1 = conv_transpose3d(&y1, &t, &zeros_bias(2), &spec_t).unwrap();
    let u2 = conv_transpose3d(&y2, &t, &zeros_bias(2), &spec_t).unwrap();
    assert_eq!(u1.data(), u2.data());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn activations_preserve_shape_and_stay_finite(
        vals in prop::collection::vec(-50.0f32..50.0, 1..40),
        alpha in 0.01f64..0.99,
    ) {
        let x = Tensor::new(vec![vals.len()], vals).unwrap();
        for kind in [Activation::LeakyRelu(alpha), Activation::Relu, Activation::Tanh, Activation::Sigmoid] {
            let y = activation(&x, kind).unwrap();
            prop_assert_eq!(y.shape(), x.shape());
            prop_assert!(y.all_finite());
        }
    }

    #[test]
    fn conv_adjoint_holds_for_random_geometry(
        seed in 0u64..10_000,
        cin in 1usize..4,
        cout in 1usize..4,
        side in 3usize..7,
        k in 1usize..4,
        s in 1usize..3,
        p in 0usize..2,
    ) {
        prop_assume!(side + 2 * p >= k);
        // Only geometries where the transpose maps back exactly onto the input grid.
        let out = (side + 2 * p - k) / s + 1;
        prop_assume!(s * (out - 1) + k - 2 * p == side);
        prop_assert!(adjoint_gap(seed, cin, cout, side, k, s, p) <= 1e-4);
    }
}
