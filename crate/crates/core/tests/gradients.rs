//! Finite-difference verification of every hand-written backward pass, in
//! double precision. Each check compares the analytic gradient against
//! central differences through a fixed random linear probe of the output.

use freqdehaze_core::dehaze::{DehazeNet, FrequencyCompensation, NetworkConfig};
use freqdehaze_core::diffusion::DenoiserNet;
use freqdehaze_core::gradcheck::{
    central_diff, check_unary_layer, flatten_grads, flatten_params, load_params, max_rel_err,
};
use freqdehaze_core::nn::{
    adaptive_avg_pool, adaptive_avg_pool_backward, clamp01, clamp01_backward, gap, gap_backward,
    softmax, softmax_backward, upsample_nearest2, upsample_nearest2_backward, zero_grads, Conv2d,
    LeakyRelu, Linear, Parameterized, ResBlock,
};
use freqdehaze_core::objectives::{
    lsgan_d_loss, lsgan_d_loss_backward, lsgan_g_loss, lsgan_g_loss_backward, Discriminator,
    NceHead,
};
use freqdehaze_core::rng::{seeded_stream, STREAM_INIT};
use freqdehaze_core::tensor::Tensor3;

fn randn(c: usize, h: usize, w: usize, seed: u64) -> Tensor3<f64> {
    let mut rng = seeded_stream(seed, 17);
    Tensor3::randn(c, h, w, &mut rng)
}

fn dot(a: &Tensor3<f64>, b: &Tensor3<f64>) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

/// Worst relative deviation together with the parameter tensor it lives
/// in, for readable failure messages on deep composites.
fn worst_param_err(net: &dyn Parameterized<f64>, analytic: &[f64], fd: &[f64]) -> (f64, String) {
    let mut spans: Vec<(String, usize)> = Vec::new();
    net.visit_params(&mut |name, p| spans.push((name.to_string(), p.len())));
    let mut worst = 0.0f64;
    let mut worst_name = String::new();
    let mut offset = 0usize;
    for (name, len) in spans {
        for i in offset..offset + len {
            let scale = 1.0 + analytic[i].abs().max(fd[i].abs());
            let e = (analytic[i] - fd[i]).abs() / scale;
            if e > worst {
                worst = e;
                worst_name = name.clone();
            }
        }
        offset += len;
    }
    (worst, worst_name)
}

/// Stride-1 padded convolution: parameter and input gradients both match
/// central differences to 1e-6.
#[test]
fn conv2d_k3s1p1_gradients() {
    let mut conv = Conv2d::<f64>::new(2, 3, 3, 1, 1);
    let mut rng = seeded_stream(301, STREAM_INIT);
    conv.init_kaiming(&mut rng);
    let x = randn(2, 5, 6, 302);
    let report = check_unary_layer(&mut conv, &x, 1e-5).unwrap();
    assert!(report.param_err < 1e-6, "param err {:.3e} at {}", report.param_err, report.worst_param);
    assert!(report.input_err < 1e-6, "input err {:.3e}", report.input_err);
}

/// Strided k4 convolution (the discriminator's workhorse).
#[test]
fn conv2d_k4s2p1_gradients() {
    let mut conv = Conv2d::<f64>::new(3, 2, 4, 2, 1);
    let mut rng = seeded_stream(303, STREAM_INIT);
    conv.init_kaiming(&mut rng);
    let x = randn(3, 8, 8, 304);
    let report = check_unary_layer(&mut conv, &x, 1e-5).unwrap();
    assert!(report.param_err < 1e-6, "param err {:.3e} at {}", report.param_err, report.worst_param);
    assert!(report.input_err < 1e-6, "input err {:.3e}", report.input_err);
}

/// Pointwise 1x1 convolution (channel mixing).
#[test]
fn conv2d_k1s1p0_gradients() {
    let mut conv = Conv2d::<f64>::new(4, 4, 1, 1, 0);
    let mut rng = seeded_stream(305, STREAM_INIT);
    conv.init_kaiming(&mut rng);
    let x = randn(4, 3, 3, 306);
    let report = check_unary_layer(&mut conv, &x, 1e-5).unwrap();
    assert!(report.param_err < 1e-6);
    assert!(report.input_err < 1e-6);
}

/// Leaky activation away from the kink.
#[test]
fn leaky_relu_gradients() {
    let mut layer = LeakyRelu::<f64>::default_slope();
    // Keep pre-activations away from the non-differentiable origin.
    let x = randn(2, 4, 4, 307).map(|v| if v.abs() < 0.05 { v + 0.2 } else { v });
    let report = check_unary_layer(&mut layer, &x, 1e-5).unwrap();
    assert!(report.input_err < 1e-6, "input err {:.3e}", report.input_err);
}

/// Residual block: two convs, activation and the skip.
#[test]
fn resblock_gradients() {
    let mut block = ResBlock::<f64>::new(3);
    let mut rng = seeded_stream(308, STREAM_INIT);
    block.init_kaiming(&mut rng);
    let x = randn(3, 4, 4, 309);
    let report = check_unary_layer(&mut block, &x, 1e-5).unwrap();
    assert!(report.param_err < 1e-6, "param err {:.3e} at {}", report.param_err, report.worst_param);
    assert!(report.input_err < 1e-6, "input err {:.3e}", report.input_err);
}

/// Fully-connected layer on vectors.
#[test]
fn linear_gradients() {
    let mut lin = Linear::<f64>::new(5, 3);
    let mut rng = seeded_stream(310, STREAM_INIT);
    lin.init_kaiming(&mut rng);
    let x: Vec<f64> = (0..5).map(|i| ((i * 7 + 3) as f64 * 0.31).sin()).collect();
    let probe: Vec<f64> = (0..3).map(|i| ((i * 5 + 1) as f64 * 0.77).cos()).collect();

    zero_grads(&mut lin);
    let g_in = lin.backward_vec(&x, &probe).unwrap();
    let analytic = flatten_grads(&lin);
    let theta0 = flatten_params(&lin);

    let mut eval = |theta: &[f64]| -> f64 {
        load_params(&mut lin, theta);
        lin.forward_vec(&x)
            .unwrap()
            .iter()
            .zip(&probe)
            .map(|(a, b)| a * b)
            .sum()
    };
    let fd = central_diff(&mut eval, &theta0, 1e-5);
    load_params(&mut lin, &theta0);
    assert!(max_rel_err(&analytic, &fd) < 1e-6);

    let mut eval_in = |xs: &[f64]| -> f64 {
        lin.forward_vec(xs)
            .unwrap()
            .iter()
            .zip(&probe)
            .map(|(a, b)| a * b)
            .sum()
    };
    let fd_in = central_diff(&mut eval_in, &x, 1e-5);
    assert!(max_rel_err(&g_in, &fd_in) < 1e-6);
}

/// Softmax composed with a linear probe.
#[test]
fn softmax_gradients() {
    let logits: Vec<f64> = vec![0.3, -1.2, 0.9, 0.1];
    let probe: Vec<f64> = vec![1.0, -0.5, 0.25, 2.0];
    let mut eval = |v: &[f64]| -> f64 {
        softmax(v).iter().zip(&probe).map(|(a, b)| a * b).sum()
    };
    let fd = central_diff(&mut eval, &logits, 1e-5);
    let y = softmax(&logits);
    let analytic = softmax_backward(&y, &probe).unwrap();
    assert!(max_rel_err(&analytic, &fd) < 1e-6);
}

/// Global average pooling and its backward.
#[test]
fn gap_gradients() {
    let x = randn(3, 4, 5, 311);
    let probe = [0.7, -1.1, 0.4];
    let mut eval = |v: &[f64]| -> f64 {
        let t = Tensor3::from_vec(3, 4, 5, v.to_vec()).unwrap();
        gap(&t).iter().zip(&probe).map(|(a, b)| a * b).sum()
    };
    let fd = central_diff(&mut eval, x.as_slice(), 1e-5);
    let g = gap_backward(&probe, 3, 4, 5).unwrap();
    assert!(max_rel_err(g.as_slice(), &fd) < 1e-8);
}

/// Adaptive average pooling backward is the exact adjoint.
#[test]
fn adaptive_pool_gradients() {
    let x = randn(2, 7, 5, 312);
    let probe = randn(2, 3, 2, 313);
    let mut eval = |v: &[f64]| -> f64 {
        let t = Tensor3::from_vec(2, 7, 5, v.to_vec()).unwrap();
        dot(&adaptive_avg_pool(&t, 3, 2).unwrap(), &probe)
    };
    let fd = central_diff(&mut eval, x.as_slice(), 1e-5);
    let g = adaptive_avg_pool_backward(&probe, 7, 5).unwrap();
    assert!(max_rel_err(g.as_slice(), &fd) < 1e-8);
}

/// Nearest-neighbor upsampling backward sums the four children.
#[test]
fn upsample_gradients() {
    let x = randn(2, 3, 4, 314);
    let probe = randn(2, 6, 8, 315);
    let mut eval = |v: &[f64]| -> f64 {
        let t = Tensor3::from_vec(2, 3, 4, v.to_vec()).unwrap();
        dot(&upsample_nearest2(&t), &probe)
    };
    let fd = central_diff(&mut eval, x.as_slice(), 1e-5);
    let g = upsample_nearest2_backward(&probe).unwrap();
    assert!(max_rel_err(g.as_slice(), &fd) < 1e-8);
}

/// Unit-range clamp: zero slope outside, identity inside.
#[test]
fn clamp01_gradients() {
    let x = Tensor3::from_vec(1, 2, 3, vec![-0.5, 0.2, 0.8, 1.5, 0.4, 0.99]).unwrap();
    let probe = randn(1, 2, 3, 316);
    let mut eval = |v: &[f64]| -> f64 {
        let t = Tensor3::from_vec(1, 2, 3, v.to_vec()).unwrap();
        dot(&clamp01(&t), &probe)
    };
    let fd = central_diff(&mut eval, x.as_slice(), 1e-5);
    let g = clamp01_backward(&x, &probe).unwrap();
    assert!(max_rel_err(g.as_slice(), &fd) < 1e-8);
}

/// Frequency compensation layer: gradients for the phase conv, the input
/// features and the residual all match finite differences.
#[test]
fn fcl_gradients() {
    let mut fcl = FrequencyCompensation::<f64>::new(2);
    // A non-zero phase conv so its gradient path is exercised.
    fcl.pcm.w.value.iter_mut().enumerate().for_each(|(i, v)| {
        *v = 0.1 * ((i as f64) * 0.9 + 0.2).sin();
    });
    let feat = randn(2, 4, 4, 317);
    let z = randn(2, 4, 4, 318).scale(0.3);
    let probe = randn(2, 4, 4, 319);

    let (_, cache) = fcl.forward(&feat, &z).unwrap();
    zero_grads(&mut fcl);
    let (g_feat, g_z) = fcl.backward(&cache, &probe).unwrap();
    let analytic = flatten_grads(&fcl);
    let theta0 = flatten_params(&fcl);

    let mut eval_p = |theta: &[f64]| -> f64 {
        load_params(&mut fcl, theta);
        let (y, _) = fcl.forward(&feat, &z).unwrap();
        dot(&y, &probe)
    };
    let fd_p = central_diff(&mut eval_p, &theta0, 1e-5);
    load_params(&mut fcl, &theta0);
    assert!(max_rel_err(&analytic, &fd_p) < 1e-6, "param gradients");

    let mut eval_f = |v: &[f64]| -> f64 {
        let t = Tensor3::from_vec(2, 4, 4, v.to_vec()).unwrap();
        let (y, _) = fcl.forward(&t, &z).unwrap();
        dot(&y, &probe)
    };
    let fd_f = central_diff(&mut eval_f, feat.as_slice(), 1e-5);
    assert!(max_rel_err(g_feat.as_slice(), &fd_f) < 1e-5, "feature gradients");

    let mut eval_z = |v: &[f64]| -> f64 {
        let t = Tensor3::from_vec(2, 4, 4, v.to_vec()).unwrap();
        let (y, _) = fcl.forward(&feat, &t).unwrap();
        dot(&y, &probe)
    };
    let fd_z = central_diff(&mut eval_z, z.as_slice(), 1e-5);
    assert!(max_rel_err(g_z.as_slice(), &fd_z) < 1e-5, "residual gradients");
}

/// The full dehazing network: every parameter and the residual input pass
/// the finite-difference check through a random probe of the output.
#[test]
fn dehaze_net_gradients() {
    let cfg = NetworkConfig::new(3, vec![1, 1]).unwrap();
    let mut net = DehazeNet::<f64>::new(&cfg).unwrap();
    let mut rng = seeded_stream(320, STREAM_INIT);
    net.init(&mut rng);

    // The clamp kink only poisons finite differences when a pre-clamp
    // value sits within the probe step of a boundary; keep clear of that.
    let img = randn(3, 4, 4, 321).map(|v| 0.4 + 0.1 * v.tanh());
    let z = randn(3, 4, 4, 322).scale(0.2);
    let probe = randn(3, 4, 4, 323);

    let (out, cache) = net.forward(&img, &z).unwrap();
    for &v in out.as_slice() {
        assert!(
            v.min(1.0 - v).abs() > 1e-3 || v == 0.0 || v == 1.0,
            "output {v} too close to a clamp boundary for FD"
        );
    }
    zero_grads(&mut net);
    let g_z = net.backward(&cache, &probe).unwrap();
    let analytic = flatten_grads(&net);
    let theta0 = flatten_params(&net);

    let mut eval_p = |theta: &[f64]| -> f64 {
        load_params(&mut net, theta);
        let (y, _) = net.forward(&img, &z).unwrap();
        dot(&y, &probe)
    };
    let fd_p = central_diff(&mut eval_p, &theta0, 1e-5);
    load_params(&mut net, &theta0);
    let (err, name) = worst_param_err(&net, &analytic, &fd_p);
    // Strict relative error is reported for context: it blows up on
    // parameters whose true gradient sits at the FD noise floor.
    let mut strict_worst = (0.0f64, 0usize);
    for (i, (&a, &b)) in analytic.iter().zip(&fd_p).enumerate() {
        let e = freqdehaze_core::gradcheck::rel_err(a, b);
        if e > strict_worst.0 {
            strict_worst = (e, i);
        }
    }
    println!(
        "dehaze grads: mixed worst {err:.3e} ({name}); strict worst {:.3e} at flat index {} (analytic {:.3e}, fd {:.3e})",
        strict_worst.0, strict_worst.1, analytic[strict_worst.1], fd_p[strict_worst.1]
    );
    assert!(err < 1e-5, "param gradients: {err:.3e} at {name}");

    let mut eval_z = |v: &[f64]| -> f64 {
        let t = Tensor3::from_vec(3, 4, 4, v.to_vec()).unwrap();
        let (y, _) = net.forward(&img, &t).unwrap();
        dot(&y, &probe)
    };
    let fd_z = central_diff(&mut eval_z, z.as_slice(), 1e-5);
    assert!(max_rel_err(g_z.as_slice(), &fd_z) < 1e-5, "residual gradients");
}

/// Tap extraction used by the contrastive loss: image gradients through
/// the selected contracting scales match finite differences.
#[test]
fn encode_taps_gradients() {
    let cfg = NetworkConfig::new(3, vec![1, 1]).unwrap();
    let mut net = DehazeNet::<f64>::new(&cfg).unwrap();
    let mut rng = seeded_stream(324, STREAM_INIT);
    net.init(&mut rng);

    let img = randn(3, 4, 4, 325).scale(0.3);
    let z = randn(3, 4, 4, 326).scale(0.2);
    let probes = [randn(3, 4, 4, 327), randn(3, 2, 2, 328)];

    let (taps, cache) = net.encode_taps(&img, &z, &[0, 1]).unwrap();
    assert_eq!(taps.len(), 2);
    zero_grads(&mut net);
    let g_img = net
        .encode_taps_backward(&cache, &[probes[0].clone(), probes[1].clone()])
        .unwrap();

    let mut eval = |v: &[f64]| -> f64 {
        let t = Tensor3::from_vec(3, 4, 4, v.to_vec()).unwrap();
        let (taps, _) = net.encode_taps(&t, &z, &[0, 1]).unwrap();
        dot(&taps[0], &probes[0]) + dot(&taps[1], &probes[1])
    };
    let fd = central_diff(&mut eval, img.as_slice(), 1e-5);
    assert!(max_rel_err(g_img.as_slice(), &fd) < 1e-5, "image gradients");
}

/// Denoiser network: parameters and the noisy-state input.
#[test]
fn denoiser_gradients() {
    let mut net = DenoiserNet::<f64>::new(2, 3, 2, 4, 8).unwrap();
    let mut rng = seeded_stream(329, STREAM_INIT);
    net.init(&mut rng);
    // Wake up the zero-initialized output conv.
    net.visit_params_mut(&mut |name, p| {
        if name == "out.w" {
            for (i, v) in p.value.iter_mut().enumerate() {
                *v = 0.2 * ((i as f64) * 1.3).cos();
            }
        }
    });

    let z_t = randn(2, 3, 3, 330);
    let cond = randn(2, 3, 3, 331);
    let probe = randn(2, 3, 3, 332);

    let (_, cache) = net.forward_cached(&z_t, &cond, 5).unwrap();
    zero_grads(&mut net);
    let g_zt = net.backward(&cache, &probe).unwrap();
    let analytic = flatten_grads(&net);
    let theta0 = flatten_params(&net);

    let mut eval_p = |theta: &[f64]| -> f64 {
        load_params(&mut net, theta);
        dot(&net.forward(&z_t, &cond, 5).unwrap(), &probe)
    };
    let fd_p = central_diff(&mut eval_p, &theta0, 1e-5);
    load_params(&mut net, &theta0);
    assert!(max_rel_err(&analytic, &fd_p) < 1e-5, "param gradients");

    let mut eval_z = |v: &[f64]| -> f64 {
        let t = Tensor3::from_vec(2, 3, 3, v.to_vec()).unwrap();
        dot(&net.forward(&t, &cond, 5).unwrap(), &probe)
    };
    let fd_z = central_diff(&mut eval_z, z_t.as_slice(), 1e-5);
    assert!(max_rel_err(g_zt.as_slice(), &fd_z) < 1e-5, "state gradients");
}

/// Patch discriminator: parameters and image gradient.
#[test]
fn discriminator_gradients() {
    let mut disc = Discriminator::<f64>::new(3, 2);
    let mut rng = seeded_stream(333, STREAM_INIT);
    disc.init(&mut rng);
    let img = randn(3, 8, 8, 334).scale(0.5);

    let (logits, cache) = disc.forward(&img).unwrap();
    let probe = randn(logits.channels(), logits.height(), logits.width(), 335);
    zero_grads(&mut disc);
    let g_img = disc.backward(&cache, &probe).unwrap();
    let analytic = flatten_grads(&disc);
    let theta0 = flatten_params(&disc);

    let mut eval_p = |theta: &[f64]| -> f64 {
        load_params(&mut disc, theta);
        dot(&disc.forward(&img).unwrap().0, &probe)
    };
    let fd_p = central_diff(&mut eval_p, &theta0, 1e-5);
    load_params(&mut disc, &theta0);
    assert!(max_rel_err(&analytic, &fd_p) < 1e-5, "param gradients");

    let mut eval_i = |v: &[f64]| -> f64 {
        let t = Tensor3::from_vec(3, 8, 8, v.to_vec()).unwrap();
        dot(&disc.forward(&t).unwrap().0, &probe)
    };
    let fd_i = central_diff(&mut eval_i, img.as_slice(), 1e-5);
    assert!(max_rel_err(g_img.as_slice(), &fd_i) < 1e-5, "image gradients");
}

/// Both adversarial losses pass the finite-difference check on logits.
#[test]
fn lsgan_loss_gradients() {
    let real = randn(1, 3, 3, 336);
    let fake = randn(1, 3, 3, 337);

    let n = real.len();
    let mut flat: Vec<f64> = real.as_slice().to_vec();
    flat.extend_from_slice(fake.as_slice());
    let mut eval_d = |v: &[f64]| -> f64 {
        let r = Tensor3::from_vec(1, 3, 3, v[..n].to_vec()).unwrap();
        let f = Tensor3::from_vec(1, 3, 3, v[n..].to_vec()).unwrap();
        lsgan_d_loss(&r, &f)
    };
    let fd = central_diff(&mut eval_d, &flat, 1e-6);
    let (_, g_real, g_fake) = lsgan_d_loss_backward(&real, &fake);
    let mut analytic: Vec<f64> = g_real.as_slice().to_vec();
    analytic.extend_from_slice(g_fake.as_slice());
    assert!(max_rel_err(&analytic, &fd) < 1e-6, "critic loss");

    let mut eval_g = |v: &[f64]| -> f64 {
        lsgan_g_loss(&Tensor3::from_vec(1, 3, 3, v.to_vec()).unwrap())
    };
    let fd_g = central_diff(&mut eval_g, fake.as_slice(), 1e-6);
    let (_, g) = lsgan_g_loss_backward(&fake);
    assert!(max_rel_err(g.as_slice(), &fd_g) < 1e-6, "generator loss");
}

/// Projection head used by the contrastive loss: vector in, vector out.
#[test]
fn nce_head_gradients() {
    let mut head = NceHead::<f64>::new(4, 3);
    let mut rng = seeded_stream(338, STREAM_INIT);
    head.init(&mut rng);
    let x: Vec<f64> = (0..4).map(|i| ((i * 3 + 1) as f64 * 0.41).sin()).collect();
    let probe: Vec<f64> = (0..3).map(|i| ((i * 2 + 1) as f64 * 0.59).cos()).collect();

    let (_, pre) = head.forward_vec(&x).unwrap();
    zero_grads(&mut head);
    let g_x = head.backward_vec(&x, &pre, &probe).unwrap();
    let analytic = flatten_grads(&head);
    let theta0 = flatten_params(&head);

    let mut eval = |theta: &[f64]| -> f64 {
        load_params(&mut head, theta);
        head.forward_vec(&x)
            .unwrap()
            .0
            .iter()
            .zip(&probe)
            .map(|(a, b)| a * b)
            .sum()
    };
    let fd = central_diff(&mut eval, &theta0, 1e-5);
    load_params(&mut head, &theta0);
    assert!(max_rel_err(&analytic, &fd) < 1e-6, "param gradients");

    let mut eval_x = |xs: &[f64]| -> f64 {
        head.forward_vec(xs)
            .unwrap()
            .0
            .iter()
            .zip(&probe)
            .map(|(a, b)| a * b)
            .sum()
    };
    let fd_x = central_diff(&mut eval_x, &x, 1e-5);
    assert!(max_rel_err(&g_x, &fd_x) < 1e-6, "input gradients");
}
