//! Conditional denoising diffusion over amplitude residuals.
//!
//! The generation target is the residual z produced by amplitude alignment
//! (see [`crate::dehaze::amplitude_residual`]); the conditioning signal is
//! the hazy feature amplitude it was computed from. The pieces:
//!
//! - [`NoiseSchedule`] / [`build_schedule`]: β_1..β_T with derived α and ᾱ.
//! - [`forward_diffuse`]: the closed-form noising z_T = √ᾱ_T·z + √(1−ᾱ_T)·ε.
//! - [`DenoiserNet`]: ε-predictor — input convolution over the channel
//!   concatenation of z_t and the conditioning amplitude, residual blocks
//!   with a projected sinusoidal timestep embedding, zero-initialized output
//!   convolution (so a fresh net predicts ε̂ = 0).
//! - [`denoise_step`] / [`sample`]: the reverse chain, deterministic at the
//!   final step.
//! - [`sample_chain`] / [`chain_backward`]: the same chain with caches and
//!   frozen step noises, so a loss on the sampled ẑ can backpropagate
//!   through every unrolled step into the denoiser parameters.
//!
//! Chain lengths here are short (default 8), which is what makes full
//! unrolling affordable.

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float as _;

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::nn::{leaky_relu, leaky_relu_backward, Conv2d, Linear, Parameterized, LEAKY_SLOPE};
use crate::scalar::Scalar;
use crate::tensor::{Param, Tensor3};

// ---------------------------------------------------------------------------
// Schedule
// ---------------------------------------------------------------------------

/// Noise schedule: β_t ∈ (0,1) for t = 1..T, α_t = 1 − β_t, ᾱ_t = Π α_i.
/// Indexing is 1-based to match the step convention; ᾱ_0 = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule<S> {
    beta: Vec<S>,
    alpha: Vec<S>,
    alpha_bar: Vec<S>,
}

impl<S: Scalar> NoiseSchedule<S> {
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check_t(&self, t: usize, what: &'static str) -> Result<()> {
        if t < 1 || t > self.steps() {
            return Err(CoreError::InvalidArgument {
                what,
                detail: alloc::format!("step {t} outside 1..={}", self.steps()),
            });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> S {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> S {
        self.alpha[t - 1]
    }

    /// ᾱ_t, with ᾱ_0 = 1 by convention.
    pub fn alpha_bar(&self, t: usize) -> S {
        if t == 0 {
            S::one()
        } else {
            self.alpha_bar[t - 1]
        }
    }
}

/// Linear β interpolation from `beta_start` to `beta_end` over `t_steps`
/// steps (a single step uses `beta_start`).
pub fn build_schedule<S: Scalar>(
    t_steps: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<NoiseSchedule<S>> {
    if t_steps < 1 {
        return Err(CoreError::InvalidArgument {
            what: "build_schedule",
            detail: alloc::format!("need at least one step, got {t_steps}"),
        });
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(CoreError::InvalidArgument {
            what: "build_schedule",
            detail: alloc::format!("need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"),
        });
    }
    let mut beta = Vec::with_capacity(t_steps);
    for t in 0..t_steps {
        let frac = if t_steps == 1 {
            0.0
        } else {
            t as f64 / (t_steps - 1) as f64
        };
        beta.push(S::cast(beta_start + (beta_end - beta_start) * frac));
    }
    let alpha: Vec<S> = beta.iter().map(|&b| S::one() - b).collect();
    let mut alpha_bar = Vec::with_capacity(t_steps);
    let mut acc = S::one();
    for &a in &alpha {
        acc *= a;
        alpha_bar.push(acc);
    }
    Ok(NoiseSchedule {
        beta,
        alpha,
        alpha_bar,
    })
}

/// Closed-form forward noising to the terminal step:
/// z_T = √ᾱ_T · z + √(1 − ᾱ_T) · ε.
pub fn forward_diffuse<S: Scalar>(
    z: &Tensor3<S>,
    schedule: &NoiseSchedule<S>,
    noise: &Tensor3<S>,
) -> Result<Tensor3<S>> {
    z.ensure_same_shape(noise, "forward_diffuse")?;
    let t = schedule.steps();
    let a = schedule.alpha_bar(t).sqrt();
    let b = (S::one() - schedule.alpha_bar(t)).sqrt();
    let mut out = z.scale(a);
    out.axpy(b, noise)?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Denoiser
// ---------------------------------------------------------------------------

/// Sinusoidal timestep embedding of even dimension: sin halves then cos
/// halves over geometrically spaced frequencies.
pub fn timestep_embedding<S: Scalar>(t: usize, dim: usize) -> Vec<S> {
    assert!(dim >= 2 && dim % 2 == 0, "embedding dim must be even and >= 2");
    let half = dim / 2;
    let mut emb = alloc::vec![S::zero(); dim];
    for i in 0..half {
        let freq = (-(i as f64) * (10000.0f64).ln() / half as f64).exp();
        let angle = t as f64 * freq;
        emb[i] = S::cast(angle.sin());
        emb[half + i] = S::cast(angle.cos());
    }
    emb
}

/// Residual block with a timestep pathway: the projected embedding is added
/// as a per-channel bias between the first convolution and the activation.
#[derive(Debug, Clone)]
struct TimedResBlock<S> {
    conv1: Conv2d<S>,
    conv2: Conv2d<S>,
    emb: Linear<S>,
    slope: S,
}

impl<S: Scalar> TimedResBlock<S> {
    fn new(channels: usize, emb_dim: usize) -> Self {
        TimedResBlock {
            conv1: Conv2d::new(channels, channels, 3, 1, 1),
            conv2: Conv2d::new(channels, channels, 3, 1, 1),
            emb: Linear::new(emb_dim, channels),
            slope: S::cast(LEAKY_SLOPE),
        }
    }

    fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.conv1.init_kaiming(rng);
        self.conv2.init_kaiming(rng);
        self.emb.init_kaiming(rng);
    }

    fn biased_pre_activation(&self, x: &Tensor3<S>, t_emb: &[S]) -> Result<Tensor3<S>> {
        let mut h = self.conv1.forward(x)?;
        let bias = self.emb.forward_vec(t_emb)?;
        for c in 0..h.channels() {
            let b = bias[c];
            for v in h.channel_mut(c) {
                *v += b;
            }
        }
        Ok(h)
    }

    fn forward(&self, x: &Tensor3<S>, t_emb: &[S]) -> Result<Tensor3<S>> {
        let h = self.biased_pre_activation(x, t_emb)?;
        let a = leaky_relu(&h, self.slope);
        let r = self.conv2.forward(&a)?;
        x.add(&r)
    }

    fn backward(&mut self, x: &Tensor3<S>, t_emb: &[S], grad_out: &Tensor3<S>) -> Result<Tensor3<S>> {
        let h = self.biased_pre_activation(x, t_emb)?;
        let a = leaky_relu(&h, self.slope);
        let ga = self.conv2.backward(&a, grad_out)?;
        let gh = leaky_relu_backward(&h, &ga, self.slope)?;
        // The per-channel bias distributes over all spatial positions, so
        // its gradient is the per-channel sum; the embedding itself is a
        // fixed function of t and receives no gradient.
        let mut g_bias = alloc::vec![S::zero(); gh.channels()];
        for c in 0..gh.channels() {
            let mut acc = S::zero();
            for &v in gh.channel(c) {
                acc += v;
            }
            g_bias[c] = acc;
        }
        let _ = self.emb.backward_vec(t_emb, &g_bias)?;
        let gx = self.conv1.backward(x, &gh)?;
        grad_out.add(&gx)
    }
}

impl<S: Scalar> Parameterized<S> for TimedResBlock<S> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<S>)) {
        self.conv1
            .visit_params(&mut |n, p| f(&alloc::format!("conv1.{n}"), p));
        self.conv2
            .visit_params(&mut |n, p| f(&alloc::format!("conv2.{n}"), p));
        self.emb
            .visit_params(&mut |n, p| f(&alloc::format!("emb.{n}"), p));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        self.conv1
            .visit_params_mut(&mut |n, p| f(&alloc::format!("conv1.{n}"), p));
        self.conv2
            .visit_params_mut(&mut |n, p| f(&alloc::format!("conv2.{n}"), p));
        self.emb
            .visit_params_mut(&mut |n, p| f(&alloc::format!("emb.{n}"), p));
    }
}

fn concat_channels<S: Scalar>(a: &Tensor3<S>, b: &Tensor3<S>) -> Result<Tensor3<S>> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(CoreError::ShapeMismatch {
            what: "concat_channels",
            expected: a.shape(),
            got: b.shape(),
        });
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.as_slice());
    data.extend_from_slice(b.as_slice());
    Tensor3::from_vec(a.channels() + b.channels(), a.height(), a.width(), data)
}

/// The ε-predictor. Input: z_t channel-concatenated with the conditioning
/// amplitude; output: ε̂ with z's dims. The output convolution is left at
/// zero by [`DenoiserNet::init`], so an untrained net predicts ε̂ = 0 and
/// early training is stable.
pub struct DenoiserNet<S> {
    channels: usize,
    emb_dim: usize,
    t_max: usize,
    slope: S,
    inp: Conv2d<S>,
    blocks: Vec<TimedResBlock<S>>,
    out: Conv2d<S>,
}

/// Forward intermediates of one denoiser call.
pub struct DenoiserCache<S> {
    x: Tensor3<S>,
    pre: Tensor3<S>,
    block_inputs: Vec<Tensor3<S>>,
    last: Tensor3<S>,
    t_emb: Vec<S>,
}

impl<S: Scalar> DenoiserNet<S> {
    /// `channels` is the residual's channel count C, `hidden` the internal
    /// width, `blocks` the residual-block count, `emb_dim` the (even)
    /// timestep-embedding dimension, `t_max` the chain length the net will
    /// be stepped over.
    pub fn new(
        channels: usize,
        hidden: usize,
        blocks: usize,
        emb_dim: usize,
        t_max: usize,
    ) -> Result<Self> {
        if channels == 0 || hidden == 0 || blocks == 0 || t_max == 0 {
            return Err(CoreError::InvalidArgument {
                what: "DenoiserNet::new",
                detail: alloc::format!(
                    "channels={channels}, hidden={hidden}, blocks={blocks}, t_max={t_max} must all be positive"
                ),
            });
        }
        if emb_dim < 2 || emb_dim % 2 != 0 {
            return Err(CoreError::InvalidArgument {
                what: "DenoiserNet::new",
                detail: alloc::format!("emb_dim must be even and >= 2, got {emb_dim}"),
            });
        }
        Ok(DenoiserNet {
            channels,
            emb_dim,
            t_max,
            slope: S::cast(LEAKY_SLOPE),
            inp: Conv2d::new(2 * channels, hidden, 3, 1, 1),
            blocks: (0..blocks)
                .map(|_| TimedResBlock::new(hidden, emb_dim))
                .collect(),
            out: Conv2d::new(hidden, channels, 3, 1, 1),
        })
    }

    /// Kaiming-initializes everything except the output convolution, which
    /// stays zero (fresh nets predict no noise).
    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.inp.init_kaiming(rng);
        for b in &mut self.blocks {
            b.init(rng);
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    fn check_inputs(&self, z_t: &Tensor3<S>, cond: &Tensor3<S>, t: usize) -> Result<()> {
        if z_t.channels() != self.channels {
            return Err(CoreError::ShapeMismatch {
                what: "DenoiserNet input channels",
                expected: (self.channels, z_t.height(), z_t.width()),
                got: z_t.shape(),
            });
        }
        z_t.ensure_same_shape(cond, "DenoiserNet z_t vs conditioning")?;
        if t < 1 || t > self.t_max {
            return Err(CoreError::InvalidArgument {
                what: "DenoiserNet step",
                detail: alloc::format!("t={t} outside 1..={}", self.t_max),
            });
        }
        Ok(())
    }

    /// ε̂ plus the cache its backward pass needs.
    pub fn forward_cached(
        &self,
        z_t: &Tensor3<S>,
        cond: &Tensor3<S>,
        t: usize,
    ) -> Result<(Tensor3<S>, DenoiserCache<S>)> {
        self.check_inputs(z_t, cond, t)?;
        let t_emb = timestep_embedding::<S>(t, self.emb_dim);
        let x = concat_channels(z_t, cond)?;
        let pre = self.inp.forward(&x)?;
        let mut h = leaky_relu(&pre, self.slope);
        let mut block_inputs = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            block_inputs.push(h.clone());
            h = b.forward(&h, &t_emb)?;
        }
        let eps = self.out.forward(&h)?;
        Ok((
            eps,
            DenoiserCache {
                x,
                pre,
                block_inputs,
                last: h,
                t_emb,
            },
        ))
    }

    /// Inference-path ε̂ (cache dropped).
    pub fn forward(&self, z_t: &Tensor3<S>, cond: &Tensor3<S>, t: usize) -> Result<Tensor3<S>> {
        Ok(self.forward_cached(z_t, cond, t)?.0)
    }

    /// Accumulates parameter gradients and returns the gradient on z_t. The
    /// conditioning amplitude is fixed input data; its slice of the input
    /// gradient is dropped.
    pub fn backward(
        &mut self,
        cache: &DenoiserCache<S>,
        grad_eps: &Tensor3<S>,
    ) -> Result<Tensor3<S>> {
        let mut g = self.out.backward(&cache.last, grad_eps)?;
        for (b, input) in self.blocks.iter_mut().zip(&cache.block_inputs).rev() {
            g = b.backward(input, &cache.t_emb, &g)?;
        }
        let g_pre = leaky_relu_backward(&cache.pre, &g, self.slope)?;
        let g_x = self.inp.backward(&cache.x, &g_pre)?;
        let plane = g_x.height() * g_x.width();
        let z_part = g_x.as_slice()[..self.channels * plane].to_vec();
        Tensor3::from_vec(self.channels, g_x.height(), g_x.width(), z_part)
    }
}

impl<S: Scalar> Parameterized<S> for DenoiserNet<S> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<S>)) {
        self.inp
            .visit_params(&mut |n, p| f(&alloc::format!("inp.{n}"), p));
        for (j, b) in self.blocks.iter().enumerate() {
            b.visit_params(&mut |n, p| f(&alloc::format!("block{j}.{n}"), p));
        }
        self.out
            .visit_params(&mut |n, p| f(&alloc::format!("out.{n}"), p));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        self.inp
            .visit_params_mut(&mut |n, p| f(&alloc::format!("inp.{n}"), p));
        for (j, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params_mut(&mut |n, p| f(&alloc::format!("block{j}.{n}"), p));
        }
        self.out
            .visit_params_mut(&mut |n, p| f(&alloc::format!("out.{n}"), p));
    }
}

// ---------------------------------------------------------------------------
// Reverse process
// ---------------------------------------------------------------------------

/// Anything that can stand in for the denoiser in the reverse chain. Tests
/// use oracle predictors (true noise, zero) to pin the chain algebra down
/// independently of network behaviour.
pub trait NoisePredictor<S: Scalar> {
    fn predict(&self, z_t: &Tensor3<S>, cond: &Tensor3<S>, t: usize) -> Result<Tensor3<S>>;
}

impl<S: Scalar> NoisePredictor<S> for DenoiserNet<S> {
    fn predict(&self, z_t: &Tensor3<S>, cond: &Tensor3<S>, t: usize) -> Result<Tensor3<S>> {
        self.forward(z_t, cond, t)
    }
}

/// One reverse update given the predicted noise:
/// z_{t−1} = (1/√α_t)·(z_t − ((1−α_t)/√(1−ᾱ_t))·ε̂) + √(1−α_t)·ε_t.
/// The stochastic term is suppressed at t = 1 so the final state is
/// deterministic.
fn step_combine<S: Scalar>(
    z_t: &Tensor3<S>,
    eps_hat: &Tensor3<S>,
    t: usize,
    schedule: &NoiseSchedule<S>,
    step_noise: Option<&Tensor3<S>>,
) -> Result<Tensor3<S>> {
    z_t.ensure_same_shape(eps_hat, "denoise_step noise estimate")?;
    let alpha = schedule.alpha(t);
    let a = S::one() / alpha.sqrt();
    let c = (S::one() - alpha) / (S::one() - schedule.alpha_bar(t)).sqrt();
    let mut out = z_t.scale(a);
    out.axpy(-(a * c), eps_hat)?;
    if t > 1 {
        if let Some(noise) = step_noise {
            out.axpy((S::one() - alpha).sqrt(), noise)?;
        }
    }
    Ok(out)
}

/// One reverse step through a predictor. `step_noise` is ignored at t = 1.
pub fn denoise_step<S: Scalar, P: NoisePredictor<S> + ?Sized>(
    z_t: &Tensor3<S>,
    cond: &Tensor3<S>,
    t: usize,
    schedule: &NoiseSchedule<S>,
    predictor: &P,
    step_noise: Option<&Tensor3<S>>,
) -> Result<Tensor3<S>> {
    schedule.check_t(t, "denoise_step")?;
    let eps_hat = predictor.predict(z_t, cond, t)?;
    step_combine(z_t, &eps_hat, t, schedule, step_noise)
}

/// Full reverse chain: draw z_T ~ N(0, I), step down to z_0 and return it.
/// Consumes the generator in a fixed order (terminal draw first, then one
/// step noise per t from T down to 2), so identical generator state gives
/// identical output.
pub fn sample<S: Scalar, P: NoisePredictor<S> + ?Sized, R: Rng + ?Sized>(
    cond: &Tensor3<S>,
    schedule: &NoiseSchedule<S>,
    predictor: &P,
    rng: &mut R,
) -> Result<Tensor3<S>> {
    let (c, h, w) = cond.shape();
    let mut z = Tensor3::randn(c, h, w, rng);
    for t in (1..=schedule.steps()).rev() {
        let noise = if t > 1 {
            Some(Tensor3::randn(c, h, w, rng))
        } else {
            None
        };
        z = denoise_step(&z, cond, t, schedule, predictor, noise.as_ref())?;
    }
    Ok(z)
}

/// Everything needed to backpropagate through one sampled chain: the state
/// entering each step and the denoiser cache of each call, in sampling
/// order (t = T first). Step noises are additive constants and need not be
/// kept.
pub struct ChainCache<S> {
    states: Vec<Tensor3<S>>,
    caches: Vec<DenoiserCache<S>>,
}

/// [`sample`] specialised to the concrete denoiser, retaining caches. Draws
/// from the generator in exactly the same order as [`sample`], so a given
/// state produces the same ẑ through either path.
pub fn sample_chain<S: Scalar, R: Rng + ?Sized>(
    net: &DenoiserNet<S>,
    cond: &Tensor3<S>,
    schedule: &NoiseSchedule<S>,
    rng: &mut R,
) -> Result<(Tensor3<S>, ChainCache<S>)> {
    let (c, h, w) = cond.shape();
    let t_steps = schedule.steps();
    let mut z = Tensor3::randn(c, h, w, rng);
    let mut states = Vec::with_capacity(t_steps);
    let mut caches = Vec::with_capacity(t_steps);
    for t in (1..=t_steps).rev() {
        let noise = if t > 1 {
            Some(Tensor3::randn(c, h, w, rng))
        } else {
            None
        };
        let (eps_hat, cache) = net.forward_cached(&z, cond, t)?;
        let next = step_combine(&z, &eps_hat, t, schedule, noise.as_ref())?;
        states.push(z);
        caches.push(cache);
        z = next;
    }
    Ok((z, ChainCache { states, caches }))
}

/// Backward through an unrolled chain produced by [`sample_chain`], with
/// step noises held fixed. Each step contributes
/// g_{z_t} = (1/√α_t)·g_{z_{t−1}} − (1/√α_t)·((1−α_t)/√(1−ᾱ_t)) · Jᵀ_{z_t}(ε̂)·g_{z_{t−1}}
/// plus the denoiser parameter gradients of its call. Returns the gradient
/// on the terminal draw z_T (a constant during training; useful in tests).
pub fn chain_backward<S: Scalar>(
    net: &mut DenoiserNet<S>,
    schedule: &NoiseSchedule<S>,
    cache: &ChainCache<S>,
    grad_zhat: &Tensor3<S>,
) -> Result<Tensor3<S>> {
    let t_steps = schedule.steps();
    if cache.states.len() != t_steps || cache.caches.len() != t_steps {
        return Err(CoreError::DataLength {
            what: "chain_backward cache",
            expected: t_steps,
            got: cache.states.len().min(cache.caches.len()),
        });
    }
    let mut g = grad_zhat.clone();
    for t in 1..=t_steps {
        let i = t_steps - t; // position of step t in sampling order
        let alpha = schedule.alpha(t);
        let a = S::one() / alpha.sqrt();
        let c = (S::one() - alpha) / (S::one() - schedule.alpha_bar(t)).sqrt();
        let upstream_eps = g.scale(-(a * c));
        let g_from_eps = net.backward(&cache.caches[i], &upstream_eps)?;
        g.scale_in_place(a);
        g.add_in_place(&g_from_eps)?;
    }
    Ok(g)
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Mean absolute error between the true and sampled residual.
pub fn diffusion_loss<S: Scalar>(z: &Tensor3<S>, z_hat: &Tensor3<S>) -> Result<S> {
    z.ensure_same_shape(z_hat, "diffusion_loss")?;
    let mut acc = S::zero();
    for (&a, &b) in z.as_slice().iter().zip(z_hat.as_slice()) {
        acc += (a - b).abs();
    }
    Ok(acc / S::cast(z.len() as f64))
}

/// Loss plus its gradient with respect to the sampled residual ẑ. The
/// subgradient at exactly-equal entries is 0.
pub fn diffusion_loss_backward<S: Scalar>(
    z: &Tensor3<S>,
    z_hat: &Tensor3<S>,
) -> Result<(S, Tensor3<S>)> {
    let loss = diffusion_loss(z, z_hat)?;
    let inv_n = S::one() / S::cast(z.len() as f64);
    let grad = z_hat.zip_map(z, |zh, zt| {
        if zh > zt {
            inv_n
        } else if zh < zt {
            -inv_n
        } else {
            S::zero()
        }
    })?;
    Ok((loss, grad))
}
