//! The self-check behind the `gradcheck` subcommand: every hand-written
//! backward pass verified against central finite differences, in double
//! precision, packaged as a pass/fail table.
//!
//! Shallow layers are held to strict relative error. Deep composites use
//! |a − b| / (1 + max(|a|, |b|)) instead, because strict relative error
//! explodes on parameters whose true gradient sits at the finite-difference
//! noise floor, and the unrolled sampling chain gets a looser bound still
//! since each of its steps compounds the probe error.

use freqdehaze_core::dehaze::{DehazeNet, FrequencyCompensation, NetworkConfig};
use freqdehaze_core::diffusion::{build_schedule, chain_backward, sample_chain, DenoiserNet};
use freqdehaze_core::gradcheck::{
    central_diff, check_unary_layer, flatten_grads, flatten_params, load_params, max_rel_err,
};
use freqdehaze_core::nn::{
    softmax, softmax_backward, zero_grads, Conv2d, LeakyRelu, Linear, Parameterized, ResBlock,
};
use freqdehaze_core::objectives::{
    lsgan_d_loss, lsgan_d_loss_backward, lsgan_g_loss, lsgan_g_loss_backward, Discriminator,
    NceHead,
};
use freqdehaze_core::rng::{seeded_stream, STREAM_INIT};
use freqdehaze_core::Tensor3;

use crate::error::Result;

/// Outcome of one check: the worst deviation observed and the bound it
/// must stay under.
#[derive(Debug, Clone)]
pub struct SuiteCheck {
    pub name: &'static str,
    pub max_err: f64,
    pub tol: f64,
}

impl SuiteCheck {
    pub fn pass(&self) -> bool {
        self.max_err.is_finite() && self.max_err < self.tol
    }
}

fn randn(c: usize, h: usize, w: usize, seed: u64) -> Tensor3<f64> {
    let mut rng = seeded_stream(seed, 17);
    Tensor3::randn(c, h, w, &mut rng)
}

fn dot(a: &Tensor3<f64>, b: &Tensor3<f64>) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Worst |a − b| / (1 + max(|a|, |b|)) over two gradient vectors.
fn mixed_err(analytic: &[f64], fd: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(fd)
        .map(|(&a, &b)| (a - b).abs() / (1.0 + a.abs().max(b.abs())))
        .fold(0.0, f64::max)
}

/// Runs every check and returns the table; the caller decides how to
/// render it and whether a failure is fatal.
pub fn gradient_suite() -> Result<Vec<SuiteCheck>> {
    let mut out = Vec::new();

    {
        let mut conv = Conv2d::<f64>::new(2, 3, 3, 1, 1);
        conv.init_kaiming(&mut seeded_stream(401, STREAM_INIT));
        let r = check_unary_layer(&mut conv, &randn(2, 5, 6, 402), 1e-5)?;
        out.push(SuiteCheck { name: "conv_k3_s1", max_err: r.max_err(), tol: 1e-5 });
    }
    {
        let mut conv = Conv2d::<f64>::new(3, 2, 4, 2, 1);
        conv.init_kaiming(&mut seeded_stream(403, STREAM_INIT));
        let r = check_unary_layer(&mut conv, &randn(3, 8, 8, 404), 1e-5)?;
        out.push(SuiteCheck { name: "conv_k4_s2", max_err: r.max_err(), tol: 1e-5 });
    }
    {
        let mut conv = Conv2d::<f64>::new(4, 4, 1, 1, 0);
        conv.init_kaiming(&mut seeded_stream(405, STREAM_INIT));
        let r = check_unary_layer(&mut conv, &randn(4, 3, 3, 406), 1e-5)?;
        out.push(SuiteCheck { name: "conv_k1_s1", max_err: r.max_err(), tol: 1e-5 });
    }
    {
        let mut layer = LeakyRelu::<f64>::default_slope();
        // Keep pre-activations away from the kink at the origin.
        let x = randn(2, 4, 4, 407).map(|v| if v.abs() < 0.05 { v + 0.2 } else { v });
        let r = check_unary_layer(&mut layer, &x, 1e-5)?;
        out.push(SuiteCheck { name: "leaky_relu", max_err: r.max_err(), tol: 1e-5 });
    }
    {
        let mut block = ResBlock::<f64>::new(3);
        block.init_kaiming(&mut seeded_stream(408, STREAM_INIT));
        let r = check_unary_layer(&mut block, &randn(3, 5, 5, 409), 1e-5)?;
        out.push(SuiteCheck { name: "res_block", max_err: r.max_err(), tol: 1e-5 });
    }
    out.push(linear_check());
    out.push(softmax_check());
    out.push(fcl_check()?);
    out.push(dehaze_net_check()?);
    out.push(denoiser_check()?);
    out.push(discriminator_check()?);
    out.push(lsgan_check());
    out.push(nce_head_check()?);
    out.push(chain_check()?);
    Ok(out)
}

fn linear_check() -> SuiteCheck {
    let mut lin = Linear::<f64>::new(5, 3);
    lin.init_kaiming(&mut seeded_stream(410, STREAM_INIT));
    let x: Vec<f64> = (0..5).map(|i| ((i * 7 + 3) as f64 * 0.31).sin()).collect();
    let probe: Vec<f64> = (0..3).map(|i| ((i * 5 + 1) as f64 * 0.77).cos()).collect();

    zero_grads(&mut lin);
    let g_in = lin.backward_vec(&x, &probe).unwrap();
    let analytic = flatten_grads(&lin);
    let theta0 = flatten_params(&lin);
    let mut eval = |theta: &[f64]| -> f64 {
        load_params(&mut lin, theta);
        dotv(&lin.forward_vec(&x).unwrap(), &probe)
    };
    let fd = central_diff(&mut eval, &theta0, 1e-5);
    load_params(&mut lin, &theta0);
    let mut eval_in = |xs: &[f64]| -> f64 { dotv(&lin.forward_vec(xs).unwrap(), &probe) };
    let fd_in = central_diff(&mut eval_in, &x, 1e-5);
    let err = max_rel_err(&analytic, &fd).max(max_rel_err(&g_in, &fd_in));
    SuiteCheck { name: "linear", max_err: err, tol: 1e-5 }
}

fn softmax_check() -> SuiteCheck {
    let logits = [0.3, -1.2, 0.9, 0.1];
    let probe = [1.0, -0.5, 0.25, 2.0];
    let mut eval = |v: &[f64]| -> f64 { dotv(&softmax(v), &probe) };
    let fd = central_diff(&mut eval, &logits, 1e-5);
    let analytic = softmax_backward(&softmax(&logits), &probe).unwrap();
    SuiteCheck { name: "softmax", max_err: max_rel_err(&analytic, &fd), tol: 1e-5 }
}

fn fcl_check() -> Result<SuiteCheck> {
    let mut fcl = FrequencyCompensation::<f64>::new(2);
    fcl.pcm.w.value.iter_mut().enumerate().for_each(|(i, v)| {
        *v = 0.1 * ((i as f64) * 0.9 + 0.2).sin();
    });
    let feat = randn(2, 4, 4, 411);
    let z = randn(2, 4, 4, 412).scale(0.3);
    let probe = randn(2, 4, 4, 413);

    let (_, cache) = fcl.forward(&feat, &z)?;
    zero_grads(&mut fcl);
    let (g_feat, g_z) = fcl.backward(&cache, &probe)?;
    let analytic = flatten_grads(&fcl);
    let theta0 = flatten_params(&fcl);

    let mut eval_p = |theta: &[f64]| -> f64 {
        load_params(&mut fcl, theta);
        dot(&fcl.forward(&feat, &z).unwrap().0, &probe)
    };
    let fd_p = central_diff(&mut eval_p, &theta0, 1e-5);
    load_params(&mut fcl, &theta0);
    let mut eval_f = |v: &[f64]| -> f64 {
        let t = Tensor3::from_vec(2, 4, 4, v.to_vec()).unwrap();
        dot(&fcl.forward(&t, &z).unwrap().0, &probe)
    };
    let fd_f = central_diff(&mut eval_f, feat.as_slice(), 1e-5);
    let mut eval_z = |v: &[f64]| -> f64 {
        let t = Tensor3::from_vec(2, 4, 4, v.to_vec()).unwrap();
        dot(&fcl.forward(&feat, &t).unwrap().0, &probe)
    };
    let fd_z = central_diff(&mut eval_z, z.as_slice(), 1e-5);

    let err = max_rel_err(&analytic, &fd_p)
        .max(max_rel_err(g_feat.as_slice(), &fd_f))
        .max(max_rel_err(g_z.as_slice(), &fd_z));
    Ok(SuiteCheck { name: "freq_compensation", max_err: err, tol: 1e-5 })
}

fn dehaze_net_check() -> Result<SuiteCheck> {
    let cfg = NetworkConfig::new(3, vec![1, 1])?;
    let mut net = DehazeNet::<f64>::new(&cfg)?;
    net.init(&mut seeded_stream(414, STREAM_INIT));

    // Keep the output away from the clamp kink so the probe steps stay
    // on one side of it.
    let img = randn(3, 4, 4, 415).map(|v| 0.4 + 0.1 * v.tanh());
    let z = randn(3, 4, 4, 416).scale(0.2);
    let probe = randn(3, 4, 4, 417);

    let (_, cache) = net.forward(&img, &z)?;
    zero_grads(&mut net);
    let g_z = net.backward(&cache, &probe)?;
    let analytic = flatten_grads(&net);
    let theta0 = flatten_params(&net);

    let mut eval_p = |theta: &[f64]| -> f64 {
        load_params(&mut net, theta);
        dot(&net.forward(&img, &z).unwrap().0, &probe)
    };
    let fd_p = central_diff(&mut eval_p, &theta0, 1e-5);
    load_params(&mut net, &theta0);
    let mut eval_z = |v: &[f64]| -> f64 {
        let t = Tensor3::from_vec(3, 4, 4, v.to_vec()).unwrap();
        dot(&net.forward(&img, &t).unwrap().0, &probe)
    };
    let fd_z = central_diff(&mut eval_z, z.as_slice(), 1e-5);

    let err = mixed_err(&analytic, &fd_p).max(mixed_err(g_z.as_slice(), &fd_z));
    Ok(SuiteCheck { name: "dehaze_net", max_err: err, tol: 1e-5 })
}

fn denoiser_check() -> Result<SuiteCheck> {
    let mut net = DenoiserNet::<f64>::new(2, 3, 2, 4, 8)?;
    net.init(&mut seeded_stream(418, STREAM_INIT));
    // Wake up the zero-initialized output conv.
    net.visit_params_mut(&mut |name, p| {
        if name == "out.w" {
            for (i, v) in p.value.iter_mut().enumerate() {
                *v = 0.2 * ((i as f64) * 1.3).cos();
            }
        }
    });
    let z_t = randn(2, 3, 3, 419);
    let cond = randn(2, 3, 3, 420);
    let probe = randn(2, 3, 3, 421);

    let (_, cache) = net.forward_cached(&z_t, &cond, 5)?;
    zero_grads(&mut net);
    let g_zt = net.backward(&cache, &probe)?;
    let analytic = flatten_grads(&net);
    let theta0 = flatten_params(&net);

    let mut eval_p = |theta: &[f64]| -> f64 {
        load_params(&mut net, theta);
        dot(&net.forward(&z_t, &cond, 5).unwrap(), &probe)
    };
    let fd_p = central_diff(&mut eval_p, &theta0, 1e-5);
    load_params(&mut net, &theta0);
    let mut eval_z = |v: &[f64]| -> f64 {
        let t = Tensor3::from_vec(2, 3, 3, v.to_vec()).unwrap();
        dot(&net.forward(&t, &cond, 5).unwrap(), &probe)
    };
    let fd_z = central_diff(&mut eval_z, z_t.as_slice(), 1e-5);

    let err = mixed_err(&analytic, &fd_p).max(mixed_err(g_zt.as_slice(), &fd_z));
    Ok(SuiteCheck { name: "denoiser", max_err: err, tol: 1e-5 })
}

fn discriminator_check() -> Result<SuiteCheck> {
    let mut disc = Discriminator::<f64>::new(3, 2);
    disc.init(&mut seeded_stream(422, STREAM_INIT));
    let img = randn(3, 8, 8, 423).scale(0.5);

    let (logits, cache) = disc.forward(&img)?;
    let probe = randn(logits.channels(), logits.height(), logits.width(), 424);
    zero_grads(&mut disc);
    let g_img = disc.backward(&cache, &probe)?;
    let analytic = flatten_grads(&disc);
    let theta0 = flatten_params(&disc);

    let mut eval_p = |theta: &[f64]| -> f64 {
        load_params(&mut disc, theta);
        dot(&disc.forward(&img).unwrap().0, &probe)
    };
    let fd_p = central_diff(&mut eval_p, &theta0, 1e-5);
    load_params(&mut disc, &theta0);
    let mut eval_i = |v: &[f64]| -> f64 {
        let t = Tensor3::from_vec(3, 8, 8, v.to_vec()).unwrap();
        dot(&disc.forward(&t).unwrap().0, &probe)
    };
    let fd_i = central_diff(&mut eval_i, img.as_slice(), 1e-5);

    let err = mixed_err(&analytic, &fd_p).max(mixed_err(g_img.as_slice(), &fd_i));
    Ok(SuiteCheck { name: "discriminator", max_err: err, tol: 1e-5 })
}

fn lsgan_check() -> SuiteCheck {
    let real = randn(1, 3, 3, 425);
    let fake = randn(1, 3, 3, 426);
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
    let mut err = max_rel_err(&analytic, &fd);

    let mut eval_g =
        |v: &[f64]| -> f64 { lsgan_g_loss(&Tensor3::from_vec(1, 3, 3, v.to_vec()).unwrap()) };
    let fd_g = central_diff(&mut eval_g, fake.as_slice(), 1e-6);
    let (_, g) = lsgan_g_loss_backward(&fake);
    err = err.max(max_rel_err(g.as_slice(), &fd_g));
    SuiteCheck { name: "lsgan", max_err: err, tol: 1e-5 }
}

fn nce_head_check() -> Result<SuiteCheck> {
    let mut head = NceHead::<f64>::new(4, 3);
    head.init(&mut seeded_stream(427, STREAM_INIT));
    let x: Vec<f64> = (0..4).map(|i| ((i * 3 + 1) as f64 * 0.41).sin()).collect();
    let probe: Vec<f64> = (0..3).map(|i| ((i * 2 + 1) as f64 * 0.59).cos()).collect();

    let (_, pre) = head.forward_vec(&x)?;
    zero_grads(&mut head);
    let g_x = head.backward_vec(&x, &pre, &probe)?;
    let analytic = flatten_grads(&head);
    let theta0 = flatten_params(&head);

    let mut eval = |theta: &[f64]| -> f64 {
        load_params(&mut head, theta);
        dotv(&head.forward_vec(&x).unwrap().0, &probe)
    };
    let fd = central_diff(&mut eval, &theta0, 1e-5);
    load_params(&mut head, &theta0);
    let mut eval_x = |xs: &[f64]| -> f64 { dotv(&head.forward_vec(xs).unwrap().0, &probe) };
    let fd_x = central_diff(&mut eval_x, &x, 1e-5);

    let err = max_rel_err(&analytic, &fd).max(max_rel_err(&g_x, &fd_x));
    Ok(SuiteCheck { name: "nce_head", max_err: err, tol: 1e-5 })
}

fn chain_check() -> Result<SuiteCheck> {
    let schedule = build_schedule(2, 0.2, 0.4)?;
    let mut net = DenoiserNet::<f64>::new(1, 2, 1, 4, 2)?;
    net.init(&mut seeded_stream(428, STREAM_INIT));
    net.visit_params_mut(&mut |name, p| {
        if name == "out.w" {
            for (i, v) in p.value.iter_mut().enumerate() {
                *v = 0.3 * (1.7 * i as f64 + 0.3).sin();
            }
        }
    });
    let cond = randn(1, 2, 2, 429);
    let probe = randn(1, 2, 2, 430);

    let run = |net: &DenoiserNet<f64>| {
        let mut srng = seeded_stream(431, 9);
        sample_chain(net, &cond, &schedule, &mut srng).unwrap()
    };

    let theta0 = flatten_params(&net);
    let (_, cache) = run(&net);
    zero_grads(&mut net);
    chain_backward(&mut net, &schedule, &cache, &probe)?;
    let analytic = flatten_grads(&net);

    let mut eval = |theta: &[f64]| -> f64 {
        load_params(&mut net, theta);
        dot(&run(&net).0, &probe)
    };
    let fd = central_diff(&mut eval, &theta0, 1e-5);
    load_params(&mut net, &theta0);

    Ok(SuiteCheck { name: "chain_t2", max_err: mixed_err(&analytic, &fd), tol: 1e-4 })
}
