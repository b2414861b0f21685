//! The dehazing network and its frequency-domain building blocks.
//!
//! The load-bearing observation is that haze lives mostly in the amplitude
//! spectrum of an image's features while scene structure lives in phase. The
//! pieces here exploit that:
//!
//! - [`amplitude_stats`] / [`align_amplitude`] / [`amplitude_residual`]:
//!   parameter-free alignment of a hazy amplitude spectrum to the statistics
//!   of a clear one. The residual `z` (aligned minus original) is both the
//!   network's conditioning signal and, later, the diffusion model's target.
//! - [`pcm_forward`]: phase refinement steered by channel weights derived
//!   from `z` (softmax of its per-channel means).
//! - [`FrequencyCompensation`]: the spectral edit point. Transforms features
//!   to the frequency domain, adds `z` to the amplitude, corrects the phase,
//!   and transforms back.
//! - [`DehazeNet`]: a UNet whose contracting path applies one compensation
//!   layer per scale, with `z` pooled down to each scale's spectral grid.
//!
//! Everything carries a hand-derived backward pass; training never needs a
//! tape. Caches hold the forward intermediates a backward pass consumes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::nn::{
    adaptive_avg_pool, adaptive_avg_pool_backward, clamp01, clamp01_backward, gap, gap_backward,
    leaky_relu, leaky_relu_backward, softmax, softmax_backward, upsample_nearest2,
    upsample_nearest2_backward, Conv2d, Parameterized, ResBlock, LEAKY_SLOPE,
};
use crate::scalar::Scalar;
use crate::spectral::{
    decompose, decompose_backward, dft2, dft2_backward, idft2_backward, idft2_with_residue,
    recompose, recompose_backward, symmetrize, AmpPhase, ComplexSpectrum,
};
use crate::tensor::{Param, Tensor3};

/// Floor added to the source standard deviation in [`align_amplitude`] so a
/// near-constant spectrum cannot blow up the scale factor. Sources at or
/// below the floor are rejected outright.
pub const SIGMA_FLOOR: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Amplitude alignment
// ---------------------------------------------------------------------------

/// Whether amplitude statistics pool over the whole C×H×W tensor or are kept
/// per channel. Global is the reference behaviour; per-channel is a
/// configuration switch for experimentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsScope {
    Global,
    PerChannel,
}

/// Mean and standard deviation of an amplitude spectrum (population
/// convention, divide by N). One entry for [`StatsScope::Global`], one per
/// channel otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeStats<S> {
    pub mean: Vec<S>,
    pub std: Vec<S>,
}

impl<S: Scalar> AmplitudeStats<S> {
    pub fn groups(&self) -> usize {
        self.mean.len()
    }
}

fn slice_stats<S: Scalar>(data: &[S]) -> (S, S) {
    let n = S::cast(data.len() as f64);
    let mut mean = S::zero();
    for &v in data {
        mean += v;
    }
    mean /= n;
    let mut var = S::zero();
    for &v in data {
        let d = v - mean;
        var += d * d;
    }
    (mean, (var / n).sqrt())
}

/// Mean/std of an amplitude tensor under the given scope.
pub fn amplitude_stats<S: Scalar>(amp: &Tensor3<S>, scope: StatsScope) -> Result<AmplitudeStats<S>> {
    if amp.is_empty() {
        return Err(CoreError::InvalidArgument {
            what: "amplitude_stats",
            detail: format!("empty tensor {:?}", amp.shape()),
        });
    }
    match scope {
        StatsScope::Global => {
            let (m, s) = slice_stats(amp.as_slice());
            Ok(AmplitudeStats {
                mean: vec![m],
                std: vec![s],
            })
        }
        StatsScope::PerChannel => {
            let mut mean = Vec::with_capacity(amp.channels());
            let mut std = Vec::with_capacity(amp.channels());
            for c in 0..amp.channels() {
                let (m, s) = slice_stats(amp.channel(c));
                mean.push(m);
                std.push(s);
            }
            Ok(AmplitudeStats { mean, std })
        }
    }
}

/// Affinely remap `amp` so its statistics become `target`'s:
/// out = (σ_t/σ_s)·(amp − μ_s) + μ_t, per group.
///
/// The map has positive slope, so amplitude rank order is preserved. A
/// source std at or below [`SIGMA_FLOOR`] is rejected (constant spectrum,
/// nothing to align); above the floor, the floor is still added to the
/// denominator so barely-degenerate inputs stay tame.
pub fn align_amplitude<S: Scalar>(
    amp: &Tensor3<S>,
    source: &AmplitudeStats<S>,
    target: &AmplitudeStats<S>,
) -> Result<Tensor3<S>> {
    if source.groups() != target.groups() {
        return Err(CoreError::DataLength {
            what: "align_amplitude stats groups",
            expected: source.groups(),
            got: target.groups(),
        });
    }
    let per_channel = source.groups() > 1;
    if per_channel && source.groups() != amp.channels() {
        return Err(CoreError::DataLength {
            what: "align_amplitude channel stats",
            expected: amp.channels(),
            got: source.groups(),
        });
    }
    let floor = S::cast(SIGMA_FLOOR);
    for &s in &source.std {
        if !(s > floor) {
            return Err(CoreError::DegenerateStd {
                sigma: s.as_f64(),
                floor: SIGMA_FLOOR,
            });
        }
    }
    let mut out = amp.clone();
    for c in 0..amp.channels() {
        let g = if per_channel { c } else { 0 };
        let scale = target.std[g] / (source.std[g] + floor);
        let (mu_s, mu_t) = (source.mean[g], target.mean[g]);
        for v in out.channel_mut(c) {
            *v = scale * (*v - mu_s) + mu_t;
        }
    }
    Ok(out)
}

/// The amplitude residual z: align the hazy amplitude to the clear
/// amplitude's statistics and subtract the original. Adding z back to the
/// hazy amplitude closes the distribution gap exactly. Parameter-free.
pub fn amplitude_residual<S: Scalar>(
    hazy_amp: &Tensor3<S>,
    clear_amp: &Tensor3<S>,
    scope: StatsScope,
) -> Result<Tensor3<S>> {
    hazy_amp.ensure_same_shape(clear_amp, "amplitude_residual")?;
    let stats_h = amplitude_stats(hazy_amp, scope)?;
    let stats_c = amplitude_stats(clear_amp, scope)?;
    let aligned = align_amplitude(hazy_amp, &stats_h, &stats_c)?;
    aligned.sub(hazy_amp)
}

// ---------------------------------------------------------------------------
// Residual distribution across scales
// ---------------------------------------------------------------------------

/// Pool the full-resolution residual to a coarser spectral grid and rescale
/// by the area ratio. A feature map's amplitude magnitudes scale with its
/// pixel count (the DC bin is a plain sum), so an unscaled pooled residual
/// would systematically overweight coarse scales.
pub fn pool_residual<S: Scalar>(z: &Tensor3<S>, out_h: usize, out_w: usize) -> Result<Tensor3<S>> {
    let mut pooled = adaptive_avg_pool(z, out_h, out_w)?;
    let ratio = (out_h * out_w) as f64 / (z.height() * z.width()) as f64;
    pooled.scale_in_place(S::cast(ratio));
    Ok(pooled)
}

/// Adjoint of [`pool_residual`]: spreads a pooled-grid gradient back over
/// the full-resolution residual.
pub fn pool_residual_backward<S: Scalar>(
    grad: &Tensor3<S>,
    in_h: usize,
    in_w: usize,
) -> Result<Tensor3<S>> {
    let mut spread = adaptive_avg_pool_backward(grad, in_h, in_w)?;
    let ratio = (grad.height() * grad.width()) as f64 / (in_h * in_w) as f64;
    spread.scale_in_place(S::cast(ratio));
    Ok(spread)
}

// ---------------------------------------------------------------------------
// Phase correction
// ---------------------------------------------------------------------------

fn scale_channels<S: Scalar>(x: &Tensor3<S>, weights: &[S]) -> Tensor3<S> {
    let mut out = x.clone();
    for c in 0..x.channels() {
        let w = weights[c];
        for v in out.channel_mut(c) {
            *v *= w;
        }
    }
    out
}

/// Phase refinement driven by the amplitude residual: channel weights
/// ω = softmax(mean_per_channel(z)) reweight the phase, a convolution turns
/// that into a residual, and the residual is added back:
/// P_out = P + conv(ω ⊗ P).
///
/// With zeroed convolution parameters this is the identity on phase.
pub fn pcm_forward<S: Scalar>(
    phase: &Tensor3<S>,
    z: &Tensor3<S>,
    conv: &Conv2d<S>,
) -> Result<Tensor3<S>> {
    if phase.channels() != z.channels() {
        return Err(CoreError::ShapeMismatch {
            what: "pcm_forward phase vs residual channels",
            expected: phase.shape(),
            got: z.shape(),
        });
    }
    let weights = softmax(&gap(z));
    let scaled = scale_channels(phase, &weights);
    let residual = conv.forward(&scaled)?;
    phase.add(&residual)
}

// ---------------------------------------------------------------------------
// Frequency compensation layer
// ---------------------------------------------------------------------------

/// Forward intermediates of one [`FrequencyCompensation`] application,
/// consumed by its backward pass.
#[derive(Debug, Clone)]
pub struct FclCache<S> {
    spec_in: ComplexSpectrum<S>,
    ap_in: AmpPhase<S>,
    /// A + z before the clamp at zero (the clamp's gradient mask).
    raw_amp: Tensor3<S>,
    ap_out: AmpPhase<S>,
    /// Channel weights ω.
    weights: Vec<S>,
    /// ω ⊗ P, the phase convolution's input.
    scaled_phase: Tensor3<S>,
    /// Relative imaginary residue discarded by the inverse transform.
    /// Symmetrization keeps this at float-noise level; it is recorded as a
    /// health diagnostic.
    pub residue: f64,
}

/// The spectral edit point: decompose features into amplitude and phase, add
/// the residual to the amplitude (clamped at zero), refine the phase, then
/// symmetrize and transform back to features. Its only parameters are the
/// phase convolution's.
///
/// The convolution starts zeroed, so a fresh layer edits amplitude only and
/// leaves phase untouched; training moves it away from the identity.
#[derive(Debug, Clone)]
pub struct FrequencyCompensation<S> {
    pub pcm: Conv2d<S>,
}

impl<S: Scalar> FrequencyCompensation<S> {
    pub fn new(channels: usize) -> Self {
        FrequencyCompensation {
            pcm: Conv2d::new(channels, channels, 3, 1, 1),
        }
    }

    pub fn forward(
        &self,
        features: &Tensor3<S>,
        z: &Tensor3<S>,
    ) -> Result<(Tensor3<S>, FclCache<S>)> {
        features.ensure_same_shape(z, "frequency compensation features vs residual")?;
        let spec_in = dft2(features);
        let ap_in = decompose(&spec_in);
        let raw_amp = ap_in.amplitude.add(z)?;
        let amp_out = raw_amp.map(|v| v.max(S::zero()));

        let weights = softmax(&gap(z));
        let scaled_phase = scale_channels(&ap_in.phase, &weights);
        let phase_res = self.pcm.forward(&scaled_phase)?;
        let phase_out = ap_in.phase.add(&phase_res)?;

        let ap_out = AmpPhase {
            amplitude: amp_out,
            phase: phase_out,
        };
        let spec_out = symmetrize(&recompose(&ap_out)?);
        let (output, residue) = idft2_with_residue(&spec_out);
        Ok((
            output,
            FclCache {
                spec_in,
                ap_in,
                raw_amp,
                ap_out,
                weights,
                scaled_phase,
                residue,
            },
        ))
    }

    /// Backward pass. Accumulates the phase convolution's parameter
    /// gradients and returns (gradient on features, gradient on z).
    pub fn backward(
        &mut self,
        cache: &FclCache<S>,
        grad_out: &Tensor3<S>,
    ) -> Result<(Tensor3<S>, Tensor3<S>)> {
        let g_spec_out = symmetrize(&idft2_backward(grad_out));
        let (g_amp_out, g_phase_out) = recompose_backward(&cache.ap_out, &g_spec_out)?;

        // Amplitude path: out = max(A + z, 0). Gradient passes where the
        // pre-clamp value was non-negative and reaches A and z equally.
        let g_raw = cache.raw_amp.zip_map(&g_amp_out, |raw, g| {
            if raw >= S::zero() {
                g
            } else {
                S::zero()
            }
        })?;

        // Phase path: out = P + conv(ω ⊗ P).
        let g_scaled = self.pcm.backward(&cache.scaled_phase, &g_phase_out)?;
        let c = g_scaled.channels();
        let mut g_weights = vec![S::zero(); c];
        for ci in 0..c {
            let mut acc = S::zero();
            for (&gs, &p) in g_scaled
                .channel(ci)
                .iter()
                .zip(cache.ap_in.phase.channel(ci))
            {
                acc += gs * p;
            }
            g_weights[ci] = acc;
        }
        let g_phase_in = g_phase_out.add(&scale_channels(&g_scaled, &cache.weights))?;
        let g_gap = softmax_backward(&cache.weights, &g_weights)?;
        let g_z_phase = gap_backward(&g_gap, c, g_scaled.height(), g_scaled.width())?;

        let g_spec_in = decompose_backward(&cache.spec_in, &cache.ap_in, &g_raw, &g_phase_in)?;
        let g_features = dft2_backward(&g_spec_in);
        let g_z = g_raw.add(&g_z_phase)?;
        Ok((g_features, g_z))
    }
}

impl<S: Scalar> Parameterized<S> for FrequencyCompensation<S> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<S>)) {
        self.pcm.visit_params(&mut |n, p| f(&format!("pcm.{n}"), p));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        self.pcm
            .visit_params_mut(&mut |n, p| f(&format!("pcm.{n}"), p));
    }
}

// ---------------------------------------------------------------------------
// Network configuration
// ---------------------------------------------------------------------------

/// Width and depth of [`DehazeNet`]. The channel count is constant across
/// scales; depth varies per scale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    /// Feature channels C at every scale.
    pub base_channels: usize,
    /// Residual blocks in each contracting scale, shallow to deep.
    pub blocks_per_scale: Vec<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            base_channels: 64,
            blocks_per_scale: vec![4, 4, 6, 10],
        }
    }
}

impl NetworkConfig {
    pub fn new(base_channels: usize, blocks_per_scale: Vec<usize>) -> Result<Self> {
        if base_channels == 0 {
            return Err(CoreError::InvalidArgument {
                what: "NetworkConfig",
                detail: format!("base_channels must be positive, got {base_channels}"),
            });
        }
        if blocks_per_scale.is_empty() || blocks_per_scale.iter().any(|&b| b == 0) {
            return Err(CoreError::InvalidArgument {
                what: "NetworkConfig",
                detail: format!("blocks_per_scale must be non-empty and positive, got {blocks_per_scale:?}"),
            });
        }
        Ok(NetworkConfig {
            base_channels,
            blocks_per_scale,
        })
    }

    pub fn scales(&self) -> usize {
        self.blocks_per_scale.len()
    }

    /// Spatial dims must be divisible by this for the scales to line up.
    pub fn downsample_factor(&self) -> usize {
        1 << (self.scales() - 1)
    }

    pub fn validate_spatial(&self, height: usize, width: usize) -> Result<()> {
        let f = self.downsample_factor();
        if height % f != 0 || width % f != 0 || height < f || width < f {
            return Err(CoreError::InvalidArgument {
                what: "NetworkConfig::validate_spatial",
                detail: format!(
                    "dims {height}x{width} not divisible by the downsample factor {f}"
                ),
            });
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// The dehazing network
// ---------------------------------------------------------------------------

struct EncoderStage<S> {
    blocks: Vec<ResBlock<S>>,
    fcl: FrequencyCompensation<S>,
}

/// UNet-shaped dehazing network.
///
/// Layout: a 3→C stem convolution plus one residual block extract features;
/// each contracting scale runs its block stack, then a frequency
/// compensation layer fed by the pooled residual; stride-2 convolutions
/// descend between scales. The expanding path uses nearest-neighbour
/// upsampling plus a 1×1 convolution, additive skips from each scale's
/// compensated features, and one residual block per scale. A 3×3 head maps
/// back to RGB, a global skip adds the input, and the result is clamped to
/// [0,1].
pub struct DehazeNet<S> {
    base_channels: usize,
    slope: S,
    stem_conv: Conv2d<S>,
    stem_block: ResBlock<S>,
    stages: Vec<EncoderStage<S>>,
    downs: Vec<Conv2d<S>>,
    ups: Vec<Conv2d<S>>,
    dec_blocks: Vec<ResBlock<S>>,
    head: Conv2d<S>,
}

struct ScaleCache<S> {
    block_inputs: Vec<Tensor3<S>>,
    fcl: FclCache<S>,
    post_fcl: Tensor3<S>,
}

/// Forward intermediates of a full [`DehazeNet::forward`] pass.
pub struct DehazeCache<S> {
    image: Tensor3<S>,
    stem_pre: Tensor3<S>,
    stem_act: Tensor3<S>,
    scale_caches: Vec<ScaleCache<S>>,
    up_inputs: Vec<Tensor3<S>>,
    dec_inputs: Vec<Tensor3<S>>,
    head_in: Tensor3<S>,
    pre_clamp: Tensor3<S>,
}

impl<S> DehazeCache<S> {
    /// Worst relative imaginary residue over all compensation layers in
    /// this pass (health diagnostic).
    pub fn worst_residue(&self) -> f64 {
        self.scale_caches
            .iter()
            .map(|s| s.fcl.residue)
            .fold(0.0, f64::max)
    }
}

/// Forward intermediates of a taps-only encoder pass
/// (see [`DehazeNet::encode_taps`]).
pub struct TapCache<S> {
    layers: Vec<usize>,
    image: Tensor3<S>,
    stem_pre: Tensor3<S>,
    stem_act: Tensor3<S>,
    scale_caches: Vec<ScaleCache<S>>,
}

impl<S: Scalar> DehazeNet<S> {
    /// Builds the network with zeroed parameters; call [`DehazeNet::init`]
    /// before training.
    pub fn new(cfg: &NetworkConfig) -> Result<Self> {
        let cfg = NetworkConfig::new(cfg.base_channels, cfg.blocks_per_scale.clone())?;
        let c = cfg.base_channels;
        let s_count = cfg.scales();
        let stages = cfg
            .blocks_per_scale
            .iter()
            .map(|&b| EncoderStage {
                blocks: (0..b).map(|_| ResBlock::new(c)).collect(),
                fcl: FrequencyCompensation::new(c),
            })
            .collect();
        Ok(DehazeNet {
            base_channels: c,
            slope: S::cast(LEAKY_SLOPE),
            stem_conv: Conv2d::new(3, c, 3, 1, 1),
            stem_block: ResBlock::new(c),
            stages,
            downs: (1..s_count).map(|_| Conv2d::new(c, c, 3, 2, 1)).collect(),
            ups: (1..s_count).map(|_| Conv2d::new(c, c, 1, 1, 0)).collect(),
            dec_blocks: (1..s_count).map(|_| ResBlock::new(c)).collect(),
            head: Conv2d::new(c, 3, 3, 1, 1),
        })
    }

    /// Kaiming-initializes every convolution except the phase convolutions,
    /// which stay zero so the phase path starts as the identity.
    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.stem_conv.init_kaiming(rng);
        self.stem_block.init_kaiming(rng);
        for stage in &mut self.stages {
            for b in &mut stage.blocks {
                b.init_kaiming(rng);
            }
        }
        for d in &mut self.downs {
            d.init_kaiming(rng);
        }
        for u in &mut self.ups {
            u.init_kaiming(rng);
        }
        for d in &mut self.dec_blocks {
            d.init_kaiming(rng);
        }
        self.head.init_kaiming(rng);
    }

    pub fn base_channels(&self) -> usize {
        self.base_channels
    }

    pub fn scales(&self) -> usize {
        self.stages.len()
    }

    fn check_image(&self, image: &Tensor3<S>) -> Result<()> {
        if image.channels() != self.stem_conv.in_c {
            return Err(CoreError::ShapeMismatch {
                what: "DehazeNet input channels",
                expected: (self.stem_conv.in_c, image.height(), image.width()),
                got: image.shape(),
            });
        }
        let f = 1usize << (self.scales() - 1);
        let (h, w) = (image.height(), image.width());
        if h % f != 0 || w % f != 0 || h < f || w < f {
            return Err(CoreError::InvalidArgument {
                what: "DehazeNet input dims",
                detail: format!("{h}x{w} not divisible by the downsample factor {f}"),
            });
        }
        Ok(())
    }

    fn stem(&self, image: &Tensor3<S>) -> Result<(Tensor3<S>, Tensor3<S>, Tensor3<S>)> {
        let pre = self.stem_conv.forward(image)?;
        let act = leaky_relu(&pre, self.slope);
        let feat = self.stem_block.forward(&act)?;
        Ok((pre, act, feat))
    }

    /// Full-resolution feature extraction plus the spectral decomposition of
    /// the features. The amplitude is what the residual alignment and the
    /// diffusion conditioning operate on.
    pub fn encode_features(&self, image: &Tensor3<S>) -> Result<(Tensor3<S>, AmpPhase<S>)> {
        self.check_image(image)?;
        let (_, _, feat) = self.stem(image)?;
        let ap = decompose(&dft2(&feat));
        Ok((feat, ap))
    }

    fn check_residual(&self, image: &Tensor3<S>, z: &Tensor3<S>) -> Result<()> {
        let expected = (self.base_channels, image.height(), image.width());
        if z.shape() != expected {
            return Err(CoreError::ShapeMismatch {
                what: "DehazeNet residual dims",
                expected,
                got: z.shape(),
            });
        }
        Ok(())
    }

    /// Runs the contracting path through scale `s_hi` inclusive, collecting
    /// per-scale caches. Shared by the full forward and the taps pass.
    fn contract(
        &self,
        feat: Tensor3<S>,
        z: &Tensor3<S>,
        s_hi: usize,
    ) -> Result<Vec<ScaleCache<S>>> {
        let (full_h, full_w) = (z.height(), z.width());
        let mut caches = Vec::with_capacity(s_hi + 1);
        let mut h = feat;
        for s in 0..=s_hi {
            let zs = pool_residual(z, full_h >> s, full_w >> s)?;
            let stage = &self.stages[s];
            let mut block_inputs = Vec::with_capacity(stage.blocks.len());
            for block in &stage.blocks {
                block_inputs.push(h.clone());
                h = block.forward(&h)?;
            }
            let (post, fcl) = stage.fcl.forward(&h, &zs)?;
            if s < s_hi {
                h = self.downs[s].forward(&post)?;
            }
            caches.push(ScaleCache {
                block_inputs,
                fcl,
                post_fcl: post,
            });
        }
        Ok(caches)
    }

    /// Walks the contracting path backward from per-scale gradients on the
    /// compensated features. `g_post` holds the gradient arriving at the
    /// deepest scale's output; `extra` supplies additions per scale (skips
    /// or tap gradients). Accumulates parameter gradients, adds residual
    /// gradients into `g_z`, and returns the gradient on the input image.
    fn contract_backward(
        &mut self,
        image: &Tensor3<S>,
        stem_pre: &Tensor3<S>,
        stem_act: &Tensor3<S>,
        caches: &[ScaleCache<S>],
        mut g_post: Tensor3<S>,
        extra: &mut dyn FnMut(usize) -> Option<Tensor3<S>>,
        g_z: &mut Tensor3<S>,
    ) -> Result<Tensor3<S>> {
        let (full_h, full_w) = (g_z.height(), g_z.width());
        for s in (0..caches.len()).rev() {
            if let Some(add) = extra(s) {
                g_post.add_in_place(&add)?;
            }
            let (mut g_h, g_zs) = self.stages[s].fcl.backward(&caches[s].fcl, &g_post)?;
            g_z.add_in_place(&pool_residual_backward(&g_zs, full_h, full_w)?)?;
            for (block, input) in self.stages[s]
                .blocks
                .iter_mut()
                .zip(&caches[s].block_inputs)
                .rev()
            {
                g_h = block.backward(input, &g_h)?;
            }
            if s > 0 {
                g_post = self.downs[s - 1].backward(&caches[s - 1].post_fcl, &g_h)?;
            } else {
                let g_act = self.stem_block.backward(stem_act, &g_h)?;
                let g_stem = leaky_relu_backward(stem_pre, &g_act, self.slope)?;
                return self.stem_conv.backward(image, &g_stem);
            }
        }
        unreachable!("contracting path always reaches scale 0");
    }

    /// Full dehazing pass: image plus residual in, restored image out,
    /// along with the cache its backward pass needs.
    pub fn forward(&self, image: &Tensor3<S>, z: &Tensor3<S>) -> Result<(Tensor3<S>, DehazeCache<S>)> {
        self.check_image(image)?;
        self.check_residual(image, z)?;
        let s_count = self.scales();
        let (stem_pre, stem_act, feat) = self.stem(image)?;
        let scale_caches = self.contract(feat, z, s_count - 1)?;

        let mut h = scale_caches[s_count - 1].post_fcl.clone();
        let mut up_inputs = Vec::with_capacity(s_count - 1);
        let mut dec_inputs = Vec::with_capacity(s_count - 1);
        for i in (0..s_count - 1).rev() {
            let up = upsample_nearest2(&h);
            let lifted = self.ups[i].forward(&up)?;
            let summed = lifted.add(&scale_caches[i].post_fcl)?;
            h = self.dec_blocks[i].forward(&summed)?;
            up_inputs.push(up);
            dec_inputs.push(summed);
        }
        up_inputs.reverse();
        dec_inputs.reverse();

        let head_out = self.head.forward(&h)?;
        let pre_clamp = head_out.add(image)?;
        let output = clamp01(&pre_clamp);
        Ok((
            output,
            DehazeCache {
                image: image.clone(),
                stem_pre,
                stem_act,
                scale_caches,
                up_inputs,
                dec_inputs,
                head_in: h,
                pre_clamp,
            },
        ))
    }

    /// Inference convenience: forward pass, cache dropped.
    pub fn dehaze(&self, image: &Tensor3<S>, z: &Tensor3<S>) -> Result<Tensor3<S>> {
        Ok(self.forward(image, z)?.0)
    }

    /// Backward through a full forward pass. Accumulates all parameter
    /// gradients and returns the gradient on the residual z (the path the
    /// second training stage differentiates through). The gradient on the
    /// input image is computed but dropped: inputs are data.
    pub fn backward(&mut self, cache: &DehazeCache<S>, grad_out: &Tensor3<S>) -> Result<Tensor3<S>> {
        let s_count = self.scales();
        let g_sum = clamp01_backward(&cache.pre_clamp, grad_out)?;
        // The global skip also routes g_sum to the input image; dropped.
        let mut g = self.head.backward(&cache.head_in, &g_sum)?;

        let mut skip_grads: Vec<Option<Tensor3<S>>> = Vec::new();
        for i in 0..s_count - 1 {
            let g_dec_in = self.dec_blocks[i].backward(&cache.dec_inputs[i], &g)?;
            skip_grads.push(Some(g_dec_in.clone()));
            let g_up = self.ups[i].backward(&cache.up_inputs[i], &g_dec_in)?;
            g = upsample_nearest2_backward(&g_up)?;
        }

        let mut g_z = Tensor3::zeros(
            self.base_channels,
            cache.image.height(),
            cache.image.width(),
        );
        self.contract_backward(
            &cache.image,
            &cache.stem_pre,
            &cache.stem_act,
            &cache.scale_caches,
            g,
            &mut |s| {
                if s < skip_grads.len() {
                    skip_grads[s].take()
                } else {
                    None
                }
            },
            &mut g_z,
        )?;
        Ok(g_z)
    }

    /// Contracting-path pass that returns the compensated features of the
    /// requested scales (strictly increasing indices). These are the tap
    /// points the contrastive objective embeds.
    pub fn encode_taps(
        &self,
        image: &Tensor3<S>,
        z: &Tensor3<S>,
        layers: &[usize],
    ) -> Result<(Vec<Tensor3<S>>, TapCache<S>)> {
        self.check_image(image)?;
        self.check_residual(image, z)?;
        if layers.is_empty()
            || layers.windows(2).any(|p| p[0] >= p[1])
            || *layers.last().unwrap() >= self.scales()
        {
            return Err(CoreError::InvalidArgument {
                what: "DehazeNet::encode_taps",
                detail: format!(
                    "tap layers {layers:?} must be strictly increasing and below {}",
                    self.scales()
                ),
            });
        }
        let (stem_pre, stem_act, feat) = self.stem(image)?;
        let scale_caches = self.contract(feat, z, *layers.last().unwrap())?;
        let taps = layers
            .iter()
            .map(|&s| scale_caches[s].post_fcl.clone())
            .collect();
        Ok((
            taps,
            TapCache {
                layers: layers.to_vec(),
                image: image.clone(),
                stem_pre,
                stem_act,
                scale_caches,
            },
        ))
    }

    /// Backward through [`DehazeNet::encode_taps`], one gradient per tap.
    /// Accumulates parameter gradients and returns the gradient on the input
    /// image (needed when the tapped image is itself a network output). The
    /// residual is treated as fixed conditioning here: its gradient through
    /// the tap pass is dropped.
    pub fn encode_taps_backward(
        &mut self,
        cache: &TapCache<S>,
        tap_grads: &[Tensor3<S>],
    ) -> Result<Tensor3<S>> {
        if tap_grads.len() != cache.layers.len() {
            return Err(CoreError::DataLength {
                what: "encode_taps_backward",
                expected: cache.layers.len(),
                got: tap_grads.len(),
            });
        }
        let deepest = *cache.layers.last().unwrap();
        let top = &cache.scale_caches[deepest].post_fcl;
        let g_post = Tensor3::zeros(top.channels(), top.height(), top.width());
        let mut g_z_sink = Tensor3::zeros(
            self.base_channels,
            cache.image.height(),
            cache.image.width(),
        );
        self.contract_backward(
            &cache.image,
            &cache.stem_pre,
            &cache.stem_act,
            &cache.scale_caches,
            g_post,
            &mut |s| {
                cache
                    .layers
                    .iter()
                    .position(|&l| l == s)
                    .map(|pos| tap_grads[pos].clone())
            },
            &mut g_z_sink,
        )
    }

    /// Plain-UNet pass with every frequency compensation layer skipped.
    /// Exists to pin down the degenerate behaviour: with z = 0 and zeroed
    /// phase convolutions the full forward must match this within transform
    /// round-trip noise.
    pub fn forward_bypass_fcl(&self, image: &Tensor3<S>) -> Result<Tensor3<S>> {
        self.check_image(image)?;
        let s_count = self.scales();
        let (_, _, feat) = self.stem(image)?;
        let mut h = feat;
        let mut skips = Vec::with_capacity(s_count);
        for s in 0..s_count {
            for block in &self.stages[s].blocks {
                h = block.forward(&h)?;
            }
            skips.push(h.clone());
            if s + 1 < s_count {
                h = self.downs[s].forward(&h)?;
            }
        }
        for i in (0..s_count - 1).rev() {
            let lifted = self.ups[i].forward(&upsample_nearest2(&h))?;
            h = self.dec_blocks[i].forward(&lifted.add(&skips[i])?)?;
        }
        let pre_clamp = self.head.forward(&h)?.add(image)?;
        Ok(clamp01(&pre_clamp))
    }
}

impl<S: Scalar> Parameterized<S> for DehazeNet<S> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<S>)) {
        self.stem_conv
            .visit_params(&mut |n, p| f(&format!("stem_conv.{n}"), p));
        self.stem_block
            .visit_params(&mut |n, p| f(&format!("stem_block.{n}"), p));
        for (s, stage) in self.stages.iter().enumerate() {
            for (j, b) in stage.blocks.iter().enumerate() {
                b.visit_params(&mut |n, p| f(&format!("enc{s}.block{j}.{n}"), p));
            }
            stage
                .fcl
                .visit_params(&mut |n, p| f(&format!("enc{s}.fcl.{n}"), p));
        }
        for (i, d) in self.downs.iter().enumerate() {
            d.visit_params(&mut |n, p| f(&format!("down{i}.{n}"), p));
        }
        for (i, u) in self.ups.iter().enumerate() {
            u.visit_params(&mut |n, p| f(&format!("up{i}.{n}"), p));
        }
        for (i, d) in self.dec_blocks.iter().enumerate() {
            d.visit_params(&mut |n, p| f(&format!("dec{i}.{n}"), p));
        }
        self.head.visit_params(&mut |n, p| f(&format!("head.{n}"), p));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        self.stem_conv
            .visit_params_mut(&mut |n, p| f(&format!("stem_conv.{n}"), p));
        self.stem_block
            .visit_params_mut(&mut |n, p| f(&format!("stem_block.{n}"), p));
        for (s, stage) in self.stages.iter_mut().enumerate() {
            for (j, b) in stage.blocks.iter_mut().enumerate() {
                b.visit_params_mut(&mut |n, p| f(&format!("enc{s}.block{j}.{n}"), p));
            }
            stage
                .fcl
                .visit_params_mut(&mut |n, p| f(&format!("enc{s}.fcl.{n}"), p));
        }
        for (i, d) in self.downs.iter_mut().enumerate() {
            d.visit_params_mut(&mut |n, p| f(&format!("down{i}.{n}"), p));
        }
        for (i, u) in self.ups.iter_mut().enumerate() {
            u.visit_params_mut(&mut |n, p| f(&format!("up{i}.{n}"), p));
        }
        for (i, d) in self.dec_blocks.iter_mut().enumerate() {
            d.visit_params_mut(&mut |n, p| f(&format!("dec{i}.{n}"), p));
        }
        self.head
            .visit_params_mut(&mut |n, p| f(&format!("head.{n}"), p));
    }
}
