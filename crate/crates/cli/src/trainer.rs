//! Two-stage training orchestration, inference and the λ sweep harness.
//!
//! Stage 1 trains the dehazing network adversarially with the contrastive
//! loss, feeding it the true aligned amplitude residual. Stage 2 starts
//! from the stage-1 weights, adds a conditional diffusion model over that
//! residual, feeds the network the *sampled* residual instead and trains
//! everything jointly. All randomness derives from the config seed through
//! fixed stream ids, so a (seed, config, dataset) triple maps to
//! bit-identical checkpoints and outputs.
//!
//! Conventions worth stating once:
//!
//! * The residual z and the conditioning amplitude are computed from the
//!   current encoder but treated as constants; no gradient flows through
//!   their construction.
//! * The discriminator updates first in each step, `disc_steps` times with
//!   fresh batches, then the generator side updates once. A zero GAN
//!   weight skips discriminator work entirely.
//! * Logged loss terms are unweighted per-sample means; only the `total`
//!   column applies the λ weights.
//! * An epoch is one nominal pass over the hazy pool: ceil(hazy / batch)
//!   steps of independent random draws.

use rand_chacha::ChaCha8Rng;

use freqdehaze_core::dehaze::{amplitude_residual, DehazeNet, NetworkConfig, StatsScope};
use freqdehaze_core::diffusion::{
    build_schedule, chain_backward, diffusion_loss_backward, sample, sample_chain, DenoiserNet,
    NoiseSchedule,
};
use freqdehaze_core::nn::{zero_grads, Parameterized};
use freqdehaze_core::objectives::{
    discriminator_backward, generator_backward, stage1_total, stage2_total, Discriminator,
    NceConfig, NceProjector, StageWeights,
};
use freqdehaze_core::optim::Adam;
use freqdehaze_core::rng::{
    capture, seeded_stream, STREAM_DATA, STREAM_DIFFUSION, STREAM_INIT, STREAM_PATCHES,
};
use freqdehaze_core::{CoreError, Tensor3};

use crate::checkpoint::{
    pack_adam, pack_params, pack_rng, unpack_params, Checkpoint, TensorData,
};
use crate::config::TrainConfig;
use crate::dataset::{sample_unpaired_batch, LoadedDataset};
use crate::error::{Error, Result};

/// One loss-log line; the CSV schema is `epoch,step,l_gan,l_nce,l_diff,total`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub epoch: usize,
    pub step: usize,
    pub l_gan: f32,
    pub l_nce: f32,
    pub l_diff: f32,
    pub total: f32,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LossRow>,
}

/// Everything learnable. The denoiser exists only in stage-2 checkpoints.
pub struct TrainedNets {
    pub gen: DehazeNet<f32>,
    pub disc: Discriminator<f32>,
    pub proj: NceProjector<f32>,
    pub den: Option<DenoiserNet<f32>>,
}

struct Optimizers {
    gen: Adam<f32>,
    disc: Adam<f32>,
    proj: Adam<f32>,
    den: Option<Adam<f32>>,
}

struct Streams {
    data: ChaCha8Rng,
    patches: ChaCha8Rng,
    diffusion: ChaCha8Rng,
}

fn build_nets(cfg: &TrainConfig, stage: u8) -> Result<TrainedNets> {
    let net_cfg = NetworkConfig::new(cfg.base_channels, cfg.blocks_per_scale.clone())?;
    let mut rng = seeded_stream(cfg.seed, STREAM_INIT);
    let mut gen = DehazeNet::new(&net_cfg)?;
    gen.init(&mut rng);
    // Identity start: zero the output head so the global skip carries the
    // input through untouched until training learns a correction. With a
    // random head the unpaired losses would first have to rediscover the
    // image itself, which they cannot do in any reasonable epoch budget.
    gen.visit_params_mut(&mut |name, p| {
        if name.starts_with("head.") {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
    });
    let mut disc = Discriminator::new(3, cfg.disc_base);
    disc.init(&mut rng);
    let mut proj = NceProjector::new(cfg.nce_layers.len(), cfg.base_channels, cfg.nce_embed);
    proj.init(&mut rng);
    let den = if stage == 2 {
        let mut d = DenoiserNet::new(
            cfg.base_channels,
            cfg.denoiser_hidden,
            cfg.denoiser_blocks,
            cfg.denoiser_emb,
            cfg.t_steps,
        )?;
        d.init(&mut rng);
        Some(d)
    } else {
        None
    };
    Ok(TrainedNets {
        gen,
        disc,
        proj,
        den,
    })
}

fn to_checkpoint(
    cfg: &TrainConfig,
    stage: u8,
    nets: &TrainedNets,
    opts: &Optimizers,
    streams: &Streams,
) -> Checkpoint {
    let mut snapshot = cfg.clone();
    snapshot.stage = stage;
    let mut ckpt = Checkpoint::new();
    ckpt.insert("meta.stage", TensorData::Bytes(vec![stage]));
    ckpt.insert(
        "meta.config",
        TensorData::Bytes(snapshot.resolved_text().into_bytes()),
    );
    pack_rng(&mut ckpt, "meta.rng.data", &capture(&streams.data));
    pack_rng(&mut ckpt, "meta.rng.patches", &capture(&streams.patches));
    pack_rng(&mut ckpt, "meta.rng.diffusion", &capture(&streams.diffusion));
    pack_params(&mut ckpt, "gen", &nets.gen);
    pack_params(&mut ckpt, "disc", &nets.disc);
    pack_params(&mut ckpt, "proj", &nets.proj);
    pack_adam(&mut ckpt, "gen", &opts.gen);
    pack_adam(&mut ckpt, "disc", &opts.disc);
    pack_adam(&mut ckpt, "proj", &opts.proj);
    if let (Some(den), Some(den_opt)) = (&nets.den, &opts.den) {
        pack_params(&mut ckpt, "den", den);
        pack_adam(&mut ckpt, "den", den_opt);
    }
    ckpt
}

/// Rebuilds the nets a checkpoint describes and loads its weights. The
/// config comes from the embedded snapshot, so a checkpoint is
/// self-contained.
pub fn restore_nets(ckpt: &Checkpoint) -> Result<(TrainConfig, TrainedNets)> {
    let cfg = crate::config::parse_config(ckpt.config_text()?, std::path::Path::new("<checkpoint>"))?;
    let stage = ckpt.stage()?;
    let mut nets = build_nets(&cfg, stage)?;
    unpack_params(ckpt, "gen", &mut nets.gen)?;
    unpack_params(ckpt, "disc", &mut nets.disc)?;
    unpack_params(ckpt, "proj", &mut nets.proj)?;
    if let Some(den) = nets.den.as_mut() {
        unpack_params(ckpt, "den", den)?;
    }
    Ok((cfg, nets))
}

/// The aligned amplitude residual for one unpaired (hazy, clear) draw,
/// plus the hazy feature amplitude the diffusion model conditions on.
/// Both are detached: downstream gradients stop at them.
fn residual_and_cond(
    gen: &DehazeNet<f32>,
    hazy: &Tensor3<f32>,
    clear: &Tensor3<f32>,
    scope: StatsScope,
) -> Result<(Tensor3<f32>, Tensor3<f32>)> {
    let (_, ap_h) = gen.encode_features(hazy)?;
    let (_, ap_c) = gen.encode_features(clear)?;
    let z = amplitude_residual(&ap_h.amplitude, &ap_c.amplitude, scope)?;
    Ok((z, ap_h.amplitude))
}

/// True when an error reports arithmetic blow-up rather than bad input or
/// shape trouble. NaNs surface either as an explicit non-finite report or,
/// one layer earlier, as a NaN amplitude std in the residual alignment; a
/// *finite* sub-floor std stays an ordinary data error.
fn is_blowup(err: &Error) -> bool {
    match err {
        Error::Core(CoreError::NonFinite { .. }) => true,
        Error::Core(CoreError::DegenerateStd { sigma, .. }) => !sigma.is_finite(),
        _ => false,
    }
}

fn scale_grads(net: &mut dyn Parameterized<f32>, k: f32) {
    net.visit_params_mut(&mut |_, p| {
        for g in &mut p.grad {
            *g *= k;
        }
    });
}

pub fn train_stage1(cfg: &TrainConfig, data: &LoadedDataset) -> Result<TrainOutcome> {
    run_stage(cfg, data, 1, None)
}

pub fn train_stage2(
    cfg: &TrainConfig,
    data: &LoadedDataset,
    stage1_ckpt: &Checkpoint,
) -> Result<TrainOutcome> {
    run_stage(cfg, data, 2, Some(stage1_ckpt))
}

fn run_stage(
    cfg: &TrainConfig,
    data: &LoadedDataset,
    stage: u8,
    init: Option<&Checkpoint>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.hazy.is_empty() || data.clear.is_empty() {
        return Err(Error::data("training needs non-empty hazy and clear pools"));
    }
    let mut nets = build_nets(cfg, stage)?;
    if let Some(ckpt) = init {
        // Stage 2 starts exactly where stage 1 stopped: same generator,
        // discriminator and projection weights. The denoiser stays fresh.
        unpack_params(ckpt, "gen", &mut nets.gen)?;
        unpack_params(ckpt, "disc", &mut nets.disc)?;
        unpack_params(ckpt, "proj", &mut nets.proj)?;
    }
    // Low first-moment decay on the adversarial players; heavy momentum
    // feeds oscillation when the objective itself moves every step. The
    // denoiser optimizes a stationary regression target and keeps the
    // stock 0.9.
    let gan_adam = |lr: f32| {
        let mut a = Adam::new(lr);
        a.beta1 = 0.5;
        a
    };
    let mut opts = Optimizers {
        gen: gan_adam(cfg.lr),
        disc: gan_adam(cfg.disc_lr()),
        proj: gan_adam(cfg.lr),
        den: nets.den.as_ref().map(|_| Adam::new(cfg.lr)),
    };
    let mut streams = Streams {
        data: seeded_stream(cfg.seed, STREAM_DATA),
        patches: seeded_stream(cfg.seed, STREAM_PATCHES),
        diffusion: seeded_stream(cfg.seed, STREAM_DIFFUSION),
    };
    let weights = StageWeights {
        gan: cfg.lambda_gan,
        nce: cfg.lambda_nce,
        diff: cfg.lambda_diff,
    };
    let nce_cfg = NceConfig {
        tau: cfg.nce_tau as f64,
        patches: cfg.nce_patches,
        layers: cfg.nce_layers.clone(),
    };
    let schedule = build_schedule(cfg.t_steps, cfg.beta_start as f64, cfg.beta_end as f64)?;

    let steps = data.hazy.len().div_ceil(cfg.batch);
    let mut log = Vec::with_capacity(cfg.epochs * steps);
    let mut last_good = to_checkpoint(cfg, stage, &nets, &opts, &streams);

    for epoch in 0..cfg.epochs {
        for step in 0..steps {
            let row = match train_batch(
                cfg, stage, &mut nets, &mut opts, &mut streams, data, &weights, &nce_cfg,
                &schedule, epoch, step,
            ) {
                Ok(row) => row,
                Err(e) if is_blowup(&e) => {
                    return Err(Error::NumericAbort {
                        epoch,
                        step,
                        last_good: Box::new(last_good),
                    })
                }
                Err(e) => return Err(e),
            };
            if !row.total.is_finite() {
                return Err(Error::NumericAbort {
                    epoch,
                    step,
                    last_good: Box::new(last_good),
                });
            }
            log.push(row);
        }
        last_good = to_checkpoint(cfg, stage, &nets, &opts, &streams);
    }
    Ok(TrainOutcome {
        checkpoint: last_good,
        log,
    })
}

#[allow(clippy::too_many_arguments)]
fn train_batch(
    cfg: &TrainConfig,
    stage: u8,
    nets: &mut TrainedNets,
    opts: &mut Optimizers,
    streams: &mut Streams,
    data: &LoadedDataset,
    weights: &StageWeights<f32>,
    nce_cfg: &NceConfig,
    schedule: &NoiseSchedule<f32>,
    epoch: usize,
    step: usize,
) -> Result<LossRow> {
    let inv_b = 1.0 / cfg.batch as f32;
    let oracle = stage == 2 && cfg.oracle_residual;

    // Residual fed to the dehazing network for one (hazy, clear) draw. In
    // stage 1 and in oracle mode that is the true aligned residual; in
    // learned stage 2 it is a full reverse-chain sample.
    if weights.gan != 0.0 {
        for _ in 0..cfg.disc_steps {
            let (hs, cs) = sample_unpaired_batch(data, cfg.batch, cfg.patch, &mut streams.data)?;
            zero_grads(&mut nets.disc);
            for (h, c) in hs.iter().zip(&cs) {
                let (z, cond) = residual_and_cond(&nets.gen, h, c, cfg.amp_stats)?;
                let fed = if stage == 2 && !oracle {
                    let den = nets.den.as_ref().expect("stage 2 has a denoiser");
                    sample(&cond, schedule, den, &mut streams.diffusion)?
                } else {
                    z
                };
                discriminator_backward(&nets.gen, &mut nets.disc, h, &fed, c)?;
            }
            scale_grads(&mut nets.disc, inv_b);
            opts.disc.step(&mut nets.disc)?;
        }
    }

    let (hs, cs) = sample_unpaired_batch(data, cfg.batch, cfg.patch, &mut streams.data)?;
    zero_grads(&mut nets.gen);
    zero_grads(&mut nets.proj);
    zero_grads(&mut nets.disc);
    if let Some(den) = nets.den.as_mut() {
        zero_grads(den);
    }
    let (mut l_gan, mut l_nce, mut l_diff) = (0.0f32, 0.0f32, 0.0f32);
    for (h, c) in hs.iter().zip(&cs) {
        let (z, cond) = residual_and_cond(&nets.gen, h, c, cfg.amp_stats)?;
        if stage == 1 || oracle {
            let gstep = generator_backward(
                &mut nets.gen,
                &mut nets.disc,
                &mut nets.proj,
                h,
                &z,
                weights,
                nce_cfg,
                &mut streams.patches,
            )?;
            l_gan += gstep.gan_loss;
            l_nce += gstep.nce_loss;
        } else {
            let den = nets.den.as_mut().expect("stage 2 has a denoiser");
            let (z_hat, chain) = sample_chain(den, &cond, schedule, &mut streams.diffusion)?;
            let gstep = generator_backward(
                &mut nets.gen,
                &mut nets.disc,
                &mut nets.proj,
                h,
                &z_hat,
                weights,
                nce_cfg,
                &mut streams.patches,
            )?;
            let (diff, g_diff) = diffusion_loss_backward(&z, &z_hat)?;
            let mut upstream = g_diff.scale(weights.diff);
            upstream.add_in_place(&gstep.grad_z)?;
            let _ = chain_backward(den, schedule, &chain, &upstream)?;
            l_gan += gstep.gan_loss;
            l_nce += gstep.nce_loss;
            l_diff += diff;
        }
    }
    scale_grads(&mut nets.gen, inv_b);
    opts.gen.step(&mut nets.gen)?;
    if weights.nce != 0.0 {
        scale_grads(&mut nets.proj, inv_b);
        opts.proj.step(&mut nets.proj)?;
    }
    if stage == 2 && !oracle {
        let den = nets.den.as_mut().expect("stage 2 has a denoiser");
        scale_grads(den, inv_b);
        opts.den.as_mut().expect("stage 2 optimizer").step(den)?;
    }
    // The generator pass scored its output through the discriminator, so
    // the discriminator accumulated gradients it must not train on.
    zero_grads(&mut nets.disc);

    let (l_gan, l_nce, l_diff) = (l_gan * inv_b, l_nce * inv_b, l_diff * inv_b);
    let total = if stage == 1 {
        stage1_total(l_gan, l_nce, weights)
    } else {
        stage2_total(l_gan, l_nce, l_diff, weights)
    };
    Ok(LossRow {
        epoch,
        step,
        l_gan,
        l_nce,
        l_diff,
        total,
    })
}

/// Restores a hazy image with a stage-2 checkpoint: extract the feature
/// amplitude, sample a residual from pure noise conditioned on it, run the
/// dehazing network. Deterministic in (checkpoint, image, seed).
pub fn infer(ckpt: &Checkpoint, image: &Tensor3<f32>, seed: u64) -> Result<Tensor3<f32>> {
    let (cfg, nets) = restore_nets(ckpt)?;
    infer_restored(&cfg, &nets, image, seed)
}

/// [`infer`] without the per-call checkpoint restore, for callers mapping
/// over many images.
pub fn infer_restored(
    cfg: &TrainConfig,
    nets: &TrainedNets,
    image: &Tensor3<f32>,
    seed: u64,
) -> Result<Tensor3<f32>> {
    let den = nets.den.as_ref().ok_or_else(|| {
        Error::data("checkpoint has no denoiser (stage 1 only); stage-2 training must run first")
    })?;
    let schedule = build_schedule(cfg.t_steps, cfg.beta_start as f64, cfg.beta_end as f64)?;
    let (_, ap) = nets.gen.encode_features(image)?;
    let mut rng = seeded_stream(seed, STREAM_DIFFUSION);
    let z_hat = sample(&ap.amplitude, &schedule, den, &mut rng)?;
    Ok(nets.gen.dehaze(image, &z_hat)?)
}

/// One λ sweep result. Loss columns are final-epoch means; PSNR is the
/// held-out mean after the stage-2 run.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub lambda: &'static str,
    pub value: f32,
    pub stage1_total: f32,
    pub stage2_total: f32,
    pub l_diff: f32,
    pub mean_psnr: f64,
}

/// Mean of a column over the last epoch in a log.
pub fn final_epoch_mean(log: &[LossRow], column: impl Fn(&LossRow) -> f32) -> f32 {
    let last = match log.last() {
        Some(row) => row.epoch,
        None => return 0.0,
    };
    let rows: Vec<f32> = log
        .iter()
        .filter(|r| r.epoch == last)
        .map(&column)
        .collect();
    rows.iter().sum::<f32>() / rows.len() as f32
}

/// Trains both stages once per (λ name, value) combination and reports
/// final losses plus held-out PSNR. Orderings are for the caller to read;
/// nothing here asserts which weight should win.
pub fn lambda_sweep(
    base: &TrainConfig,
    data: &LoadedDataset,
    heldout: &[(Tensor3<f32>, Tensor3<f32>)],
    values: &[f32],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    let setters: [(&'static str, fn(&mut TrainConfig, f32)); 3] = [
        ("lambda_gan", |c, v| c.lambda_gan = v),
        ("lambda_nce", |c, v| c.lambda_nce = v),
        ("lambda_diff", |c, v| c.lambda_diff = v),
    ];
    for (name, set) in setters {
        for &value in values {
            let mut cfg = base.clone();
            set(&mut cfg, value);
            cfg.stage = 1;
            let s1 = train_stage1(&cfg, data)?;
            cfg.stage = 2;
            let s2 = train_stage2(&cfg, data, &s1.checkpoint)?;
            let (icfg, nets) = restore_nets(&s2.checkpoint)?;
            let mut psnr_sum = 0.0;
            for (hazy, gt) in heldout {
                let out = infer_restored(&icfg, &nets, hazy, cfg.seed)?;
                psnr_sum += freqdehaze_core::metrics::psnr(&out, gt, 1.0)? as f64;
            }
            rows.push(SweepRow {
                lambda: name,
                value,
                stage1_total: final_epoch_mean(&s1.log, |r| r.total),
                stage2_total: final_epoch_mean(&s2.log, |r| r.total),
                l_diff: final_epoch_mean(&s2.log, |r| r.l_diff),
                mean_psnr: psnr_sum / heldout.len().max(1) as f64,
            });
        }
    }
    Ok(rows)
}
