mod common;

use common::{finite_difference_errors, max_rel_err, Stencil, oracle, random_input, random_like, random_weights};
use res_core::unet::{backward, forward, forward_frozen, forward_with, update_running_stats, Ablation, Mode, Tensor, UNetConfig, UNetWeights};

fn planes(t: &Tensor<f64>, n: usize) -> oracle::Planes {
    (0..t.c)
        .map(|c| (0..t.h).map(|y| (0..t.w).map(|x| t.at(n, c, y, x)).collect()).collect())
        .collect()
}

#[test]
fn separable_forward_matches_direct_convolution() {
    let cfg = UNetConfig::with_base_width(2);
    let w = random_weights(&cfg, 11);
    let x = random_input(&cfg, 2, 12, 1.0);
    let (y64, _) = forward(&w, &x, Mode::Eval).unwrap();
    let (y32, _) = forward(&w.cast::<f32>(), &x.cast::<f32>(), Mode::Eval).unwrap();
    for n in 0..2 {
        let reference: Vec<f64> = oracle::forward(&w, &planes(&x, n)).into_iter().flatten().collect();
        assert!(reference.iter().any(|&v| v > 0.0));
        let got64: Vec<f64> = y64.plane(n, 0).to_vec();
        let got32: Vec<f64> = y32.plane(n, 0).iter().map(|&v| v as f64).collect();
        assert!(max_rel_err(&got64, &reference) < 1e-12);
        let e32 = max_rel_err(&got32, &reference);
        assert!(e32 < 5e-5, "f32 relative error {e32}");
    }
}

#[test]
fn output_shape_and_nonnegativity() {
    let cfg = UNetConfig::default();
    let w = UNetWeights::<f32>::init(&cfg, 1).unwrap();
    let x = random_input(&cfg, 3, 2, 2.0).cast::<f32>();
    for mode in [Mode::Train, Mode::Eval] {
        let (y, _) = forward(&w, &x, mode).unwrap();
        assert_eq!(y.shape(), (3, 1, 30, 161));
        assert!(y.data.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn wrong_shapes_and_non_finite_rejected() {
    let cfg = UNetConfig::with_base_width(1);
    let w = UNetWeights::<f64>::init(&cfg, 1).unwrap();
    let bad = Tensor::<f64>::zeros(1, 2, 31, 161);
    assert!(forward(&w, &bad, Mode::Eval).is_err());
    let bad = Tensor::<f64>::zeros(1, 1, 30, 161);
    assert!(forward(&w, &bad, Mode::Eval).is_err());
    let mut x = Tensor::<f64>::zeros(1, 2, 30, 161);
    x.data[17] = f64::NAN;
    assert!(forward(&w, &x, Mode::Eval).is_err());
}

#[test]
fn non_finite_activation_names_layer() {
    let cfg = UNetConfig::with_base_width(1);
    let mut w = UNetWeights::<f64>::init(&cfg, 1).unwrap();
    w.group_mut("enc3.0.bn_shift").unwrap()[0] = f64::INFINITY;
    let x = random_input(&cfg, 1, 3, 1.0);
    let err = forward(&w, &x, Mode::Eval).err().unwrap();
    assert!(err.to_string().contains("enc3.0"), "{err}");
}

#[test]
fn zero_input_gives_closed_form_constant() {
    let cfg = UNetConfig::with_base_width(1);
    let mut w = random_weights(&cfg, 21);
    let names: Vec<String> = w.param_groups().into_iter().map(|(n, _)| n).collect();
    for name in &names {
        if name.ends_with("depthwise") || name.ends_with("bn_shift") {
            w.group_mut(name).unwrap().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    // With zero depthwise kernels every layer emits relu(bn(bias)) regardless of input.
    let eps = cfg.bn_eps;
    let mut last = vec![];
    for i in 0..w.n_layers() {
        let v = w.layer(i);
        last = (0..v.shape.c_out)
            .map(|c| (v.gamma[c] * (v.bias[c] - v.running_mean[c]) / (v.running_var[c] + eps).sqrt()).max(0.0))
            .collect();
    }
    let expected = (w.head_bias()[0] + w.head_weight().iter().zip(&last).map(|(a, b)| a * b).sum::<f64>()).max(0.0);
    let x = Tensor::<f64>::zeros(1, 2, 30, 161);
    let (y, _) = forward(&w, &x, Mode::Eval).unwrap();
    for &v in &y.data {
        assert!((v - expected).abs() < 1e-14, "{v} vs {expected}");
    }
}

#[test]
fn eval_mode_is_deterministic_and_batch_independent() {
    let cfg = UNetConfig::default();
    let w = UNetWeights::<f32>::init(&cfg, 4).unwrap();
    let x = random_input(&cfg, 3, 5, 1.0).cast::<f32>();
    let (a, _) = forward(&w, &x, Mode::Eval).unwrap();
    let (b, _) = forward(&w, &x, Mode::Eval).unwrap();
    assert_eq!(a, b);
    let single = Tensor::from_vec(1, 2, 30, 161, x.sample(1).to_vec()).unwrap();
    let (c, _) = forward(&w, &single, Mode::Eval).unwrap();
    assert_eq!(c.plane(0, 0), a.plane(1, 0));
}

#[test]
fn every_skip_connection_is_live() {
    let cfg = UNetConfig::with_base_width(2);
    let w = random_weights(&cfg, 8);
    let x = random_input(&cfg, 1, 9, 1.0);
    let (base, _) = forward(&w, &x, Mode::Eval).unwrap();
    for lvl in 0..5 {
        let (ablated, _) = forward_with(&w, &x, Mode::Eval, Ablation { zero_skip: Some(lvl) }).unwrap();
        let diff: f64 = base.data.iter().zip(&ablated.data).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 1e-6, "skip {lvl} has no effect");
    }
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let cfg = UNetConfig::with_base_width(2);
    let w = random_weights(&cfg, 3);
    let x = random_input(&cfg, 2, 4, 1.0);
    let (y, cache) = forward(&w, &x, Mode::Train).unwrap();
    let g = backward(&w, &cache, &Tensor::zeros(y.n, y.c, y.h, y.w)).unwrap();
    assert!(g.params.iter().all(|&v| v == 0.0));
    assert!(g.input.data.iter().all(|&v| v == 0.0));
}

#[test]
fn dead_unit_passes_no_pointwise_gradient() {
    let cfg = UNetConfig::with_base_width(2);
    let mut w = random_weights(&cfg, 5);
    // Channel 0 of enc2.1: scale 0 and negative shift keep its pre-activation below zero.
    w.group_mut("enc2.1.bn_scale").unwrap()[0] = 0.0;
    w.group_mut("enc2.1.bn_shift").unwrap()[0] = -1.0;
    let x = random_input(&cfg, 2, 6, 1.0);
    let (y, cache) = forward(&w, &x, Mode::Train).unwrap();
    assert!(cache.layer_output(3).plane(0, 0).iter().all(|&v| v == 0.0));
    let g = backward(&w, &cache, &random_like(&y, 7)).unwrap();
    let groups = w.param_groups();
    let pw = groups.iter().find(|(n, _)| n == "enc2.1.pointwise").unwrap().1.clone();
    let c_in = w.layer(3).shape.c_in;
    assert!(g.params[pw.start..pw.start + c_in].iter().all(|&v| v == 0.0));
    assert!(g.params[pw.start + c_in..pw.end].iter().any(|&v| v != 0.0));
}

#[test]
fn running_stats_follow_momentum() {
    let cfg = UNetConfig::with_base_width(1);
    let mut w = UNetWeights::<f64>::init(&cfg, 1).unwrap();
    let x = random_input(&cfg, 2, 2, 1.0);
    let (_, cache) = forward(&w, &x, Mode::Train).unwrap();
    let (mean, var) = cache.layer_moments(0);
    let (mean, var) = (mean[0], var[0]);
    update_running_stats(&mut w, &cache);
    let count = (2 * 32 * 176) as f64;
    let v = w.layer(0);
    assert!((v.running_mean[0] - 0.1 * mean).abs() < 1e-15);
    assert!((v.running_var[0] - (0.9 + 0.1 * var * count / (count - 1.0))).abs() < 1e-12);
}

#[test]
fn gradients_match_finite_differences() {
    let cfg = UNetConfig::with_base_width(2);
    let w = random_weights(&cfg, 31);
    let x = random_input(&cfg, 1, 32, 1.0);
    let (y, cache) = forward(&w, &x, Mode::Train).unwrap();
    let up = random_like(&y, 33);
    let g = backward(&w, &cache, &up).unwrap();
    let dot = |y: &Tensor<f64>| -> f64 { y.data.iter().zip(&up.data).map(|(a, b)| a * b).sum() };

    // Coarse step with the activation pattern held fixed, so the difference
    // quotient never straddles a ReLU or pooling switch.
    let frozen = |w: &UNetWeights<f64>, x: &Tensor<f64>| dot(&forward_frozen(w, x, &cache).unwrap());
    for (name, err) in finite_difference_errors(&frozen, &w, &x, &g, 1e-3, Stencil::Central4) {
        assert!(err < 1e-3, "frozen pattern, group {name}: relative error {err}");
    }
    // Fine step on the unmodified network.
    let free = |w: &UNetWeights<f64>, x: &Tensor<f64>| dot(&forward(w, x, Mode::Train).unwrap().0);
    for (name, err) in finite_difference_errors(&free, &w, &x, &g, 1e-7, Stencil::Central2) {
        assert!(err < 1e-3, "group {name}: relative error {err}");
    }
}
