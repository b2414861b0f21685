//! Pinned values and small invariants for the layer primitives and the
//! optimizer.

use freqdehaze_core::nn::{adaptive_avg_pool, gap, softmax, zero_grads, Conv2d, Parameterized};
use freqdehaze_core::optim::Adam;
use freqdehaze_core::rng::seeded_stream;
use freqdehaze_core::tensor::Tensor3;
use proptest::prelude::*;

/// A 1x1 kernel of weight 2 doubles every entry.
#[test]
fn conv_pointwise_doubling() {
    let mut conv = Conv2d::<f64>::new(1, 1, 1, 1, 0);
    conv.w.value[0] = 2.0;
    let x = Tensor3::from_vec(1, 2, 3, vec![1.0, -2.0, 0.5, 4.0, 0.0, 3.0]).unwrap();
    let y = conv.forward(&x).unwrap();
    for (a, b) in x.as_slice().iter().zip(y.as_slice()) {
        assert_eq!(*b, 2.0 * a);
    }
}

/// A centered 3x3 identity kernel with pad 1 reproduces the input.
#[test]
fn conv_identity_kernel() {
    let mut conv = Conv2d::<f64>::new(1, 1, 3, 1, 1);
    conv.w.value[4] = 1.0;
    let mut rng = seeded_stream(601, 3);
    let x = Tensor3::<f64>::randn(1, 5, 4, &mut rng);
    let y = conv.forward(&x).unwrap();
    for (a, b) in x.as_slice().iter().zip(y.as_slice()) {
        assert!((a - b).abs() < 1e-15);
    }
}

/// All-ones 3x3 kernel, no padding, constant ones input: the single
/// output entry is the window sum, 9.
#[test]
fn conv_window_sum() {
    let mut conv = Conv2d::<f64>::new(1, 1, 3, 1, 0);
    conv.w.value.iter_mut().for_each(|v| *v = 1.0);
    let x = Tensor3::<f64>::filled(1, 3, 3, 1.0);
    let y = conv.forward(&x).unwrap();
    assert_eq!(y.shape(), (1, 1, 1));
    assert_eq!(y.as_slice()[0], 9.0);
}

/// Backward with an all-ones upstream through a 1x1 kernel: the weight
/// gradient is the sum of input entries, the bias gradient the output
/// count; an all-zero upstream produces all-zero gradients.
#[test]
fn conv_backward_analytic_gradients() {
    let mut conv = Conv2d::<f64>::new(1, 1, 1, 1, 0);
    conv.w.value[0] = 0.7;
    let x = Tensor3::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();

    zero_grads(&mut conv);
    let ones = Tensor3::<f64>::filled(1, 2, 2, 1.0);
    conv.backward(&x, &ones).unwrap();
    assert_eq!(conv.w.grad[0], 10.0);
    assert_eq!(conv.b.grad[0], 4.0);

    zero_grads(&mut conv);
    let zeros = Tensor3::<f64>::zeros(1, 2, 2);
    conv.backward(&x, &zeros).unwrap();
    assert!(conv.w.grad.iter().chain(&conv.b.grad).all(|&g| g == 0.0));
}

/// Convolution without bias is linear in its input.
#[test]
fn conv_linearity() {
    let mut conv = Conv2d::<f64>::new(2, 2, 3, 1, 1);
    let mut rng = seeded_stream(602, 3);
    conv.init_kaiming(&mut rng);
    let x = Tensor3::<f64>::randn(2, 5, 5, &mut rng);
    let y = Tensor3::<f64>::randn(2, 5, 5, &mut rng);
    let (a, b) = (1.7, -0.4);
    let lhs = conv.forward(&x.scale(a).add(&y.scale(b)).unwrap()).unwrap();
    let fx = conv.forward(&x).unwrap();
    let fy = conv.forward(&y).unwrap();
    let rhs = fx.scale(a).add(&fy.scale(b)).unwrap();
    for (p, q) in lhs.as_slice().iter().zip(rhs.as_slice()) {
        assert!((p - q).abs() < 1e-5 * (1.0 + q.abs()));
    }
}

/// gap of [1,2,3,4] is [2.5]; a constant tensor returns the constant.
#[test]
fn gap_values() {
    let x = Tensor3::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(gap(&x), vec![2.5]);
    let c = Tensor3::<f64>::filled(3, 4, 5, 0.37);
    assert!(gap(&c).iter().all(|&v| (v - 0.37).abs() < 1e-15));
}

/// gap ignores the spatial arrangement of each channel.
#[test]
fn gap_permutation_invariance() {
    let x = Tensor3::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let shuffled = Tensor3::from_vec(1, 2, 2, vec![4.0, 1.0, 3.0, 2.0]).unwrap();
    assert_eq!(gap(&x), gap(&shuffled));
}

/// Softmax values: uniform for equal logits, [1/3, 2/3] for [0, ln 2],
/// and shift invariance.
#[test]
fn softmax_values() {
    let u = softmax(&[0.0f64; 4]);
    assert!(u.iter().all(|&v| (v - 0.25).abs() < 1e-12));

    let v = softmax(&[0.0f64, 2.0f64.ln()]);
    assert!((v[0] - 1.0 / 3.0).abs() < 1e-12);
    assert!((v[1] - 2.0 / 3.0).abs() < 1e-12);

    let base = softmax(&[0.3f64, -1.0, 0.8]);
    let shifted = softmax(&[0.3f64 + 5.0, -1.0 + 5.0, 0.8 + 5.0]);
    for (a, b) in base.iter().zip(&shifted) {
        assert!((a - b).abs() < 1e-7);
    }
    assert!((base.iter().sum::<f64>() - 1.0).abs() < 1e-6);
}

/// Adaptive pooling: identity at full size, constants preserved, and the
/// hand-computed partition means for a 4-to-2 reduction.
#[test]
fn adaptive_pool_values() {
    let x = Tensor3::from_vec(1, 4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let y = adaptive_avg_pool(&x, 2, 1).unwrap();
    assert_eq!(y.as_slice(), &[1.5, 3.5]);

    let mut rng = seeded_stream(603, 3);
    let r = Tensor3::<f64>::randn(2, 3, 5, &mut rng);
    let same = adaptive_avg_pool(&r, 3, 5).unwrap();
    assert_eq!(r.as_slice(), same.as_slice());

    let c = Tensor3::<f64>::filled(1, 4, 4, 2.0);
    let p = adaptive_avg_pool(&c, 2, 2).unwrap();
    assert!(p.as_slice().iter().all(|&v| (v - 2.0).abs() < 1e-15));
}

/// When output dims divide input dims, pooling preserves each channel's
/// global mean.
#[test]
fn adaptive_pool_preserves_mean() {
    let mut rng = seeded_stream(604, 3);
    let x = Tensor3::<f64>::randn(2, 8, 6, &mut rng);
    let y = adaptive_avg_pool(&x, 4, 3).unwrap();
    for c in 0..2 {
        let mx: f64 = x.channel(c).iter().sum::<f64>() / 48.0;
        let my: f64 = y.channel(c).iter().sum::<f64>() / 12.0;
        assert!((mx - my).abs() < 1e-6);
    }
}

/// First Adam step with a clean gradient moves each entry by about
/// -lr*sign(g); the bias correction makes this nearly exact.
#[test]
fn adam_first_step_is_signed_lr() {
    let mut conv = Conv2d::<f64>::new(1, 2, 1, 1, 0);
    conv.w.value.copy_from_slice(&[1.0, -2.0]);
    conv.w.grad.copy_from_slice(&[3.0, -0.25]);
    let mut adam = Adam::new(0.01);
    adam.step(&mut conv).unwrap();
    assert!((conv.w.value[0] - (1.0 - 0.01)).abs() < 1e-6);
    assert!((conv.w.value[1] - (-2.0 + 0.01)).abs() < 1e-6);
}

/// Zero gradients leave parameters untouched while the step counter still
/// advances.
#[test]
fn adam_zero_grad_keeps_parameters() {
    let mut conv = Conv2d::<f64>::new(1, 1, 1, 1, 0);
    conv.w.value[0] = 0.5;
    let mut adam = Adam::new(0.01);
    adam.step(&mut conv).unwrap();
    adam.step(&mut conv).unwrap();
    assert_eq!(conv.w.value[0], 0.5);
    assert_eq!(adam.entries()[0].step, 2);
}

/// Repeating the same gradient never grows the per-entry step size: the
/// second update is at most as large as the first.
#[test]
fn adam_repeated_gradient_contracts() {
    let mut conv = Conv2d::<f64>::new(1, 3, 1, 1, 0);
    conv.w.value.copy_from_slice(&[0.0, 1.0, -1.0]);
    let g = [2.0, -0.5, 0.125];
    let mut adam = Adam::new(0.05);

    conv.w.grad.copy_from_slice(&g);
    let before = conv.w.value.clone();
    adam.step(&mut conv).unwrap();
    let mid = conv.w.value.clone();
    conv.w.grad.copy_from_slice(&g);
    adam.step(&mut conv).unwrap();

    for i in 0..3 {
        let d1 = (mid[i] - before[i]).abs();
        let d2 = (conv.w.value[i] - mid[i]).abs();
        assert!(d2 <= d1 + 1e-12, "entry {i}: {d2} > {d1}");
    }
}

/// A non-finite gradient rejects the step and names the parameter.
#[test]
fn adam_rejects_non_finite_gradient() {
    let mut conv = Conv2d::<f64>::new(1, 1, 1, 1, 0);
    conv.w.grad[0] = f64::NAN;
    let mut adam = Adam::new(0.01);
    let err = adam.step(&mut conv).unwrap_err();
    let msg = format!("{err}");
    assert!(msg.contains('w'), "error should name the parameter: {msg}");
}

/// Optimizer state is keyed to the parameter list: a different network
/// shape is rejected instead of silently mixing moments.
#[test]
fn adam_rejects_mismatched_network() {
    let mut a = Conv2d::<f64>::new(1, 1, 1, 1, 0);
    let mut adam = Adam::new(0.01);
    adam.step(&mut a).unwrap();
    let mut b = Conv2d::<f64>::new(1, 2, 3, 1, 1);
    assert!(adam.step(&mut b).is_err());
}

/// Parameter visitation order is stable between identical constructions:
/// the contract checkpoints and optimizer state rely on.
#[test]
fn visitation_order_is_stable() {
    use freqdehaze_core::dehaze::{DehazeNet, NetworkConfig};
    let cfg = NetworkConfig::new(3, vec![1, 1]).unwrap();
    let a = DehazeNet::<f32>::new(&cfg).unwrap();
    let b = DehazeNet::<f32>::new(&cfg).unwrap();
    let names = |n: &DehazeNet<f32>| {
        let mut v = Vec::new();
        n.visit_params(&mut |name, _| v.push(name.to_string()));
        v
    };
    assert_eq!(names(&a), names(&b));
    assert!(!names(&a).is_empty());
}

proptest! {
    /// Softmax sums to one for any finite logits.
    #[test]
    fn prop_softmax_normalized(v in proptest::collection::vec(-30.0f64..30.0, 1..8)) {
        let y = softmax(&v);
        prop_assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(y.iter().all(|&p| p > 0.0));
    }

    /// Adam with zero gradients is a no-op on values for any step count.
    #[test]
    fn prop_adam_zero_grad_fixed_point(steps in 1usize..5, w0 in -3.0f64..3.0) {
        let mut conv = Conv2d::<f64>::new(1, 1, 1, 1, 0);
        conv.w.value[0] = w0;
        let mut adam = Adam::new(0.01);
        for _ in 0..steps {
            adam.step(&mut conv).unwrap();
        }
        prop_assert_eq!(conv.w.value[0], w0);
    }
}
