//! Unpaired-training objectives: a least-squares adversarial loss with a
//! patch discriminator, a patch-wise contrastive loss over encoder features,
//! and the per-sample backward orchestration that feeds the two training
//! stages.
//!
//! Division of labour: this module owns loss math and the gradient routing
//! between networks for one (hazy, clear) sample; the trainer owns batching,
//! optimizer steps and scheduling. Loss weights scale gradients at the seed,
//! so a zero weight yields exactly zero parameter gradients.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::dehaze::DehazeNet;
use crate::error::{CoreError, Result};
use crate::nn::{leaky_relu, leaky_relu_backward, Conv2d, Linear, Parameterized, LEAKY_SLOPE};
use crate::scalar::Scalar;
use crate::tensor::{Param, Tensor3};

// ---------------------------------------------------------------------------
// Patch discriminator
// ---------------------------------------------------------------------------

/// Patch discriminator: three stride-2 convolutions and a single-channel
/// head, so each output logit judges one receptive patch and the logits map
/// is 1/8 the input resolution.
#[derive(Debug, Clone)]
pub struct Discriminator<S> {
    convs: Vec<Conv2d<S>>,
    head: Conv2d<S>,
    slope: S,
}

/// Forward intermediates of one discriminator pass.
pub struct DiscCache<S> {
    input: Tensor3<S>,
    pres: Vec<Tensor3<S>>,
    acts: Vec<Tensor3<S>>,
}

impl<S: Scalar> Discriminator<S> {
    /// `base` is the first layer's channel count; widths double per layer.
    pub fn new(in_channels: usize, base: usize) -> Self {
        let convs = vec![
            Conv2d::new(in_channels, base, 4, 2, 1),
            Conv2d::new(base, base * 2, 4, 2, 1),
            Conv2d::new(base * 2, base * 4, 4, 2, 1),
        ];
        Discriminator {
            convs,
            head: Conv2d::new(base * 4, 1, 3, 1, 1),
            slope: S::cast(LEAKY_SLOPE),
        }
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for c in &mut self.convs {
            c.init_kaiming(rng);
        }
        self.head.init_kaiming(rng);
    }

    /// Patch logits map (1 × H/8 × W/8 for inputs divisible by 8).
    pub fn forward(&self, image: &Tensor3<S>) -> Result<(Tensor3<S>, DiscCache<S>)> {
        let mut pres = Vec::with_capacity(self.convs.len());
        let mut acts = Vec::with_capacity(self.convs.len());
        let mut h = image.clone();
        for conv in &self.convs {
            let pre = conv.forward(&h)?;
            h = leaky_relu(&pre, self.slope);
            pres.push(pre);
            acts.push(h.clone());
        }
        let logits = self.head.forward(&h)?;
        Ok((
            logits,
            DiscCache {
                input: image.clone(),
                pres,
                acts,
            },
        ))
    }

    /// Accumulates parameter gradients and returns the gradient on the input
    /// image (the path the generator step needs).
    pub fn backward(&mut self, cache: &DiscCache<S>, grad_logits: &Tensor3<S>) -> Result<Tensor3<S>> {
        let n = self.convs.len();
        let mut g = self.head.backward(&cache.acts[n - 1], grad_logits)?;
        for i in (0..n).rev() {
            let g_pre = leaky_relu_backward(&cache.pres[i], &g, self.slope)?;
            let input = if i == 0 {
                &cache.input
            } else {
                &cache.acts[i - 1]
            };
            g = self.convs[i].backward(input, &g_pre)?;
        }
        Ok(g)
    }
}

impl<S: Scalar> Parameterized<S> for Discriminator<S> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<S>)) {
        for (i, c) in self.convs.iter().enumerate() {
            c.visit_params(&mut |n, p| f(&alloc::format!("conv{i}.{n}"), p));
        }
        self.head
            .visit_params(&mut |n, p| f(&alloc::format!("head.{n}"), p));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit_params_mut(&mut |n, p| f(&alloc::format!("conv{i}.{n}"), p));
        }
        self.head
            .visit_params_mut(&mut |n, p| f(&alloc::format!("head.{n}"), p));
    }
}

// ---------------------------------------------------------------------------
// Least-squares adversarial losses
// ---------------------------------------------------------------------------

/// Discriminator objective: mean((real − 1)²) + mean(fake²).
pub fn lsgan_d_loss<S: Scalar>(real: &Tensor3<S>, fake: &Tensor3<S>) -> S {
    let mut acc = S::zero();
    for &v in real.as_slice() {
        let d = v - S::one();
        acc += d * d;
    }
    let mut loss = acc / S::cast(real.len() as f64);
    acc = S::zero();
    for &v in fake.as_slice() {
        acc += v * v;
    }
    loss += acc / S::cast(fake.len() as f64);
    loss
}

/// Loss plus gradients on both logit maps.
pub fn lsgan_d_loss_backward<S: Scalar>(
    real: &Tensor3<S>,
    fake: &Tensor3<S>,
) -> (S, Tensor3<S>, Tensor3<S>) {
    let loss = lsgan_d_loss(real, fake);
    let two_r = S::cast(2.0 / real.len() as f64);
    let two_f = S::cast(2.0 / fake.len() as f64);
    let g_real = real.map(|v| (v - S::one()) * two_r);
    let g_fake = fake.map(|v| v * two_f);
    (loss, g_real, g_fake)
}

/// Generator objective: mean((fake − 1)²).
pub fn lsgan_g_loss<S: Scalar>(fake: &Tensor3<S>) -> S {
    let mut acc = S::zero();
    for &v in fake.as_slice() {
        let d = v - S::one();
        acc += d * d;
    }
    acc / S::cast(fake.len() as f64)
}

/// Loss plus the gradient on the fake logits.
pub fn lsgan_g_loss_backward<S: Scalar>(fake: &Tensor3<S>) -> (S, Tensor3<S>) {
    let loss = lsgan_g_loss(fake);
    let two = S::cast(2.0 / fake.len() as f64);
    (loss, fake.map(|v| (v - S::one()) * two))
}

// ---------------------------------------------------------------------------
// Patch-wise contrastive loss
// ---------------------------------------------------------------------------

/// Contrastive-loss configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct NceConfig {
    /// Softmax temperature τ.
    pub tau: f64,
    /// Patch locations sampled per tapped layer.
    pub patches: usize,
    /// Encoder scales to tap (strictly increasing).
    pub layers: Vec<usize>,
}

impl Default for NceConfig {
    fn default() -> Self {
        NceConfig {
            tau: 0.07,
            patches: 256,
            layers: vec![0, 1],
        }
    }
}

impl NceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(CoreError::InvalidArgument {
                what: "NceConfig",
                detail: alloc::format!("temperature must be positive, got {}", self.tau),
            });
        }
        if self.patches < 2 {
            return Err(CoreError::InvalidArgument {
                what: "NceConfig",
                detail: alloc::format!(
                    "need at least 2 patches so every query has a negative, got {}",
                    self.patches
                ),
            });
        }
        if self.layers.is_empty() || self.layers.windows(2).any(|p| p[0] >= p[1]) {
            return Err(CoreError::InvalidArgument {
                what: "NceConfig",
                detail: alloc::format!("layers {:?} must be non-empty and strictly increasing", self.layers),
            });
        }
        Ok(())
    }
}

const NORM_FLOOR: f64 = 1e-12;

fn l2_normalize<S: Scalar>(v: &[S]) -> (Vec<S>, S) {
    let mut sq = S::zero();
    for &x in v {
        sq += x * x;
    }
    let norm = sq.sqrt() + S::cast(NORM_FLOOR);
    (v.iter().map(|&x| x / norm).collect(), norm)
}

fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Reference-shaped contrastive loss on explicit embedding sets: for each
/// query, one positive and that query's own negatives. Similarities are
/// cosine, scaled by 1/τ; the loss is the mean cross-entropy of picking the
/// positive. With all similarities equal it evaluates to ln(K + 1).
pub fn patch_nce_loss<S: Scalar>(
    queries: &[Vec<S>],
    positives: &[Vec<S>],
    negatives: &[Vec<Vec<S>>],
    tau: f64,
) -> Result<S> {
    if !(tau > 0.0) {
        return Err(CoreError::InvalidArgument {
            what: "patch_nce_loss",
            detail: alloc::format!("temperature must be positive, got {tau}"),
        });
    }
    if queries.len() != positives.len() || queries.len() != negatives.len() {
        return Err(CoreError::DataLength {
            what: "patch_nce_loss sets",
            expected: queries.len(),
            got: positives.len().min(negatives.len()),
        });
    }
    if queries.is_empty() {
        return Err(CoreError::InvalidArgument {
            what: "patch_nce_loss",
            detail: alloc::format!("no queries"),
        });
    }
    let inv_tau = S::cast(1.0 / tau);
    let mut total = S::zero();
    for i in 0..queries.len() {
        if negatives[i].is_empty() {
            return Err(CoreError::InvalidArgument {
                what: "patch_nce_loss",
                detail: alloc::format!("query {i} has no negatives"),
            });
        }
        let (q, _) = l2_normalize(&queries[i]);
        let (p, _) = l2_normalize(&positives[i]);
        let s_pos = dot(&q, &p) * inv_tau;
        let mut sims = Vec::with_capacity(negatives[i].len() + 1);
        sims.push(s_pos);
        for neg in &negatives[i] {
            let (nv, _) = l2_normalize(neg);
            sims.push(dot(&q, &nv) * inv_tau);
        }
        let mut m = sims[0];
        for &s in &sims {
            m = m.max(s);
        }
        let mut sum = S::zero();
        for &s in &sims {
            sum += (s - m).exp();
        }
        total += sum.ln() + m - s_pos;
    }
    Ok(total / S::cast(queries.len() as f64))
}

/// Matrix-form contrastive loss used in training: queries against the full
/// key set, diagonal entries positive, every other key a negative.
/// Returns the (unweighted) loss and gradients on the raw, pre-normalization
/// embeddings, with grads scaled by `upstream`.
fn nce_matrix_backward<S: Scalar>(
    q_raw: &[Vec<S>],
    k_raw: &[Vec<S>],
    tau: f64,
    upstream: S,
) -> Result<(S, Vec<Vec<S>>, Vec<Vec<S>>)> {
    let n = q_raw.len();
    if n != k_raw.len() {
        return Err(CoreError::DataLength {
            what: "nce embeddings",
            expected: n,
            got: k_raw.len(),
        });
    }
    if n < 2 {
        return Err(CoreError::InvalidArgument {
            what: "nce embeddings",
            detail: alloc::format!("need at least 2 locations so negatives exist, got {n}"),
        });
    }
    let dim = q_raw[0].len();
    let inv_tau = S::cast(1.0 / tau);
    let mut u = Vec::with_capacity(n);
    let mut u_norm = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut v_norm = Vec::with_capacity(n);
    for i in 0..n {
        let (a, an) = l2_normalize(&q_raw[i]);
        let (b, bn) = l2_normalize(&k_raw[i]);
        u.push(a);
        u_norm.push(an);
        v.push(b);
        v_norm.push(bn);
    }

    // Row-wise softmax over similarities, with the diagonal as the target.
    let mut loss = S::zero();
    let mut g_u = vec![vec![S::zero(); dim]; n];
    let mut g_v = vec![vec![S::zero(); dim]; n];
    let seed = upstream / S::cast(n as f64);
    let mut row = vec![S::zero(); n];
    for i in 0..n {
        for j in 0..n {
            row[j] = dot(&u[i], &v[j]) * inv_tau;
        }
        let mut m = row[0];
        for &s in &row {
            m = m.max(s);
        }
        let mut sum = S::zero();
        for &s in &row {
            sum += (s - m).exp();
        }
        loss += sum.ln() + m - row[i];
        for j in 0..n {
            let p = (row[j] - m).exp() / sum;
            let mut ds = p * seed;
            if j == i {
                ds -= seed;
            }
            let ds_tau = ds * inv_tau;
            for d in 0..dim {
                g_u[i][d] += ds_tau * v[j][d];
                g_v[j][d] += ds_tau * u[i][d];
            }
        }
    }
    loss /= S::cast(n as f64);

    // Through the normalization: g_x = (g_u − u·(u⋅g_u)) / ‖x‖.
    let mut g_q = vec![vec![S::zero(); dim]; n];
    let mut g_k = vec![vec![S::zero(); dim]; n];
    for i in 0..n {
        let du = dot(&u[i], &g_u[i]);
        let dv = dot(&v[i], &g_v[i]);
        for d in 0..dim {
            g_q[i][d] = (g_u[i][d] - u[i][d] * du) / u_norm[i];
            g_k[i][d] = (g_v[i][d] - v[i][d] * dv) / v_norm[i];
        }
    }
    Ok((loss, g_q, g_k))
}

/// Two-layer projection head mapping a feature column to an embedding
/// (normalization happens inside the loss).
#[derive(Debug, Clone)]
pub struct NceHead<S> {
    pub l1: Linear<S>,
    pub l2: Linear<S>,
    slope: S,
}

impl<S: Scalar> NceHead<S> {
    pub fn new(in_dim: usize, embed_dim: usize) -> Self {
        NceHead {
            l1: Linear::new(in_dim, embed_dim),
            l2: Linear::new(embed_dim, embed_dim),
            slope: S::cast(LEAKY_SLOPE),
        }
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.l1.init_kaiming(rng);
        self.l2.init_kaiming(rng);
    }

    /// Embeds one feature column; returns the raw (unnormalized) embedding
    /// and the first layer's pre-activation, which `backward_vec` needs.
    pub fn forward_vec(&self, x: &[S]) -> Result<(Vec<S>, Vec<S>)> {
        let pre = self.l1.forward_vec(x)?;
        let act: Vec<S> = pre
            .iter()
            .map(|&v| if v >= S::zero() { v } else { v * self.slope })
            .collect();
        let out = self.l2.forward_vec(&act)?;
        Ok((out, pre))
    }

    /// Accumulates parameter gradients for one embedded column and returns
    /// the gradient on the input feature column.
    pub fn backward_vec(&mut self, x: &[S], pre: &[S], grad_out: &[S]) -> Result<Vec<S>> {
        let act: Vec<S> = pre
            .iter()
            .map(|&v| if v >= S::zero() { v } else { v * self.slope })
            .collect();
        let g_act = self.l2.backward_vec(&act, grad_out)?;
        let g_pre: Vec<S> = pre
            .iter()
            .zip(&g_act)
            .map(|(&v, &g)| if v >= S::zero() { g } else { g * self.slope })
            .collect();
        self.l1.backward_vec(x, &g_pre)
    }
}

impl<S: Scalar> Parameterized<S> for NceHead<S> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<S>)) {
        self.l1.visit_params(&mut |n, p| f(&alloc::format!("l1.{n}"), p));
        self.l2.visit_params(&mut |n, p| f(&alloc::format!("l2.{n}"), p));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        self.l1
            .visit_params_mut(&mut |n, p| f(&alloc::format!("l1.{n}"), p));
        self.l2
            .visit_params_mut(&mut |n, p| f(&alloc::format!("l2.{n}"), p));
    }
}

/// One projection head per tapped encoder layer.
#[derive(Debug, Clone)]
pub struct NceProjector<S> {
    pub heads: Vec<NceHead<S>>,
}

impl<S: Scalar> NceProjector<S> {
    pub fn new(layer_count: usize, feature_dim: usize, embed_dim: usize) -> Self {
        NceProjector {
            heads: (0..layer_count)
                .map(|_| NceHead::new(feature_dim, embed_dim))
                .collect(),
        }
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for h in &mut self.heads {
            h.init(rng);
        }
    }
}

impl<S: Scalar> Parameterized<S> for NceProjector<S> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<S>)) {
        for (i, h) in self.heads.iter().enumerate() {
            h.visit_params(&mut |n, p| f(&alloc::format!("head{i}.{n}"), p));
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        for (i, h) in self.heads.iter_mut().enumerate() {
            h.visit_params_mut(&mut |n, p| f(&alloc::format!("head{i}.{n}"), p));
        }
    }
}

/// Distinct patch locations, sampled without replacement (capped at the
/// grid size).
pub fn sample_locations<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    n: usize,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let total = height * width;
    let take = n.min(total);
    let mut idx: Vec<usize> = (0..total).collect();
    for i in 0..take {
        let j = i + rng.gen_range(0..total - i);
        idx.swap(i, j);
    }
    idx[..take].iter().map(|&i| (i / width, i % width)).collect()
}

fn feature_column<S: Scalar>(feat: &Tensor3<S>, y: usize, x: usize) -> Vec<S> {
    (0..feat.channels()).map(|c| feat.at(c, y, x)).collect()
}

/// Contrastive loss for one tapped layer: embeds feature columns of the
/// query and key maps at shared locations through `head`, runs the
/// matrix-form loss, and backpropagates. Accumulates head parameter
/// gradients (scaled by `upstream`) and returns the unweighted loss plus
/// gradients on both feature maps.
pub fn nce_layer_backward<S: Scalar>(
    head: &mut NceHead<S>,
    feat_q: &Tensor3<S>,
    feat_k: &Tensor3<S>,
    locs: &[(usize, usize)],
    tau: f64,
    upstream: S,
) -> Result<(S, Tensor3<S>, Tensor3<S>)> {
    feat_q.ensure_same_shape(feat_k, "nce_layer_backward features")?;
    let mut q_cols = Vec::with_capacity(locs.len());
    let mut k_cols = Vec::with_capacity(locs.len());
    let mut q_raw = Vec::with_capacity(locs.len());
    let mut k_raw = Vec::with_capacity(locs.len());
    let mut q_pre = Vec::with_capacity(locs.len());
    let mut k_pre = Vec::with_capacity(locs.len());
    for &(y, x) in locs {
        let qc = feature_column(feat_q, y, x);
        let kc = feature_column(feat_k, y, x);
        let (qo, qp) = head.forward_vec(&qc)?;
        let (ko, kp) = head.forward_vec(&kc)?;
        q_cols.push(qc);
        k_cols.push(kc);
        q_raw.push(qo);
        k_raw.push(ko);
        q_pre.push(qp);
        k_pre.push(kp);
    }
    let (loss, g_q_raw, g_k_raw) = nce_matrix_backward(&q_raw, &k_raw, tau, upstream)?;

    let (c, h, w) = feat_q.shape();
    let mut g_feat_q = Tensor3::zeros(c, h, w);
    let mut g_feat_k = Tensor3::zeros(c, h, w);
    for (i, &(y, x)) in locs.iter().enumerate() {
        let gq = head.backward_vec(&q_cols[i], &q_pre[i], &g_q_raw[i])?;
        let gk = head.backward_vec(&k_cols[i], &k_pre[i], &g_k_raw[i])?;
        for ci in 0..c {
            let iq = g_feat_q.idx(ci, y, x);
            g_feat_q.as_mut_slice()[iq] += gq[ci];
            let ik = g_feat_k.idx(ci, y, x);
            g_feat_k.as_mut_slice()[ik] += gk[ci];
        }
    }
    Ok((loss, g_feat_q, g_feat_k))
}

// ---------------------------------------------------------------------------
// Stage losses
// ---------------------------------------------------------------------------

/// Loss weights. Total stage-1 loss: gan·L_adv + nce·L_contrastive;
/// stage 2 adds diff·L_residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageWeights<S> {
    pub gan: S,
    pub nce: S,
    pub diff: S,
}

impl<S: Scalar> Default for StageWeights<S> {
    fn default() -> Self {
        StageWeights {
            gan: S::one(),
            nce: S::one(),
            diff: S::one(),
        }
    }
}

/// Weighted stage-1 total.
pub fn stage1_total<S: Scalar>(gan: S, nce: S, w: &StageWeights<S>) -> S {
    w.gan * gan + w.nce * nce
}

/// Weighted stage-2 total.
pub fn stage2_total<S: Scalar>(gan: S, nce: S, diff: S, w: &StageWeights<S>) -> S {
    stage1_total(gan, nce, w) + w.diff * diff
}

/// Outcome of one generator-side sample: unweighted loss terms, the restored
/// image, and the gradient on the residual conditioning (the path stage 2
/// extends into the diffusion chain).
pub struct GeneratorStep<S> {
    pub gan_loss: S,
    pub nce_loss: S,
    pub output: Tensor3<S>,
    pub grad_z: Tensor3<S>,
}

/// Generator-side losses and gradients for one sample. Accumulates
/// gradients into the dehazing network and projection heads; discriminator
/// gradients accumulated on the way through are spurious and must be zeroed
/// before the next discriminator update (the trainer does). Terms with a
/// zero weight are skipped entirely and reported as zero.
pub fn generator_backward<S: Scalar, R: Rng + ?Sized>(
    gen: &mut DehazeNet<S>,
    disc: &mut Discriminator<S>,
    proj: &mut NceProjector<S>,
    hazy: &Tensor3<S>,
    z: &Tensor3<S>,
    weights: &StageWeights<S>,
    nce: &NceConfig,
    rng: &mut R,
) -> Result<GeneratorStep<S>> {
    nce.validate()?;
    if nce.layers.len() != proj.heads.len() {
        return Err(CoreError::DataLength {
            what: "generator_backward projection heads",
            expected: nce.layers.len(),
            got: proj.heads.len(),
        });
    }
    let (output, gen_cache) = gen.forward(hazy, z)?;
    let mut g_out = Tensor3::zeros(output.channels(), output.height(), output.width());

    let mut gan_loss = S::zero();
    if weights.gan != S::zero() {
        let (fake_logits, disc_cache) = disc.forward(&output)?;
        let (l, mut g_fake) = lsgan_g_loss_backward(&fake_logits);
        gan_loss = l;
        g_fake.scale_in_place(weights.gan);
        g_out.add_in_place(&disc.backward(&disc_cache, &g_fake)?)?;
    }

    let mut nce_loss = S::zero();
    if weights.nce != S::zero() {
        let (taps_q, q_cache) = gen.encode_taps(&output, z, &nce.layers)?;
        let (taps_k, k_cache) = gen.encode_taps(hazy, z, &nce.layers)?;
        let layer_count = nce.layers.len();
        let upstream = weights.nce / S::cast(layer_count as f64);
        let mut g_q = Vec::with_capacity(layer_count);
        let mut g_k = Vec::with_capacity(layer_count);
        for l in 0..layer_count {
            let locs = sample_locations(taps_q[l].height(), taps_q[l].width(), nce.patches, rng);
            let (loss_l, gq, gk) = nce_layer_backward(
                &mut proj.heads[l],
                &taps_q[l],
                &taps_k[l],
                &locs,
                nce.tau,
                upstream,
            )?;
            nce_loss += loss_l / S::cast(layer_count as f64);
            g_q.push(gq);
            g_k.push(gk);
        }
        g_out.add_in_place(&gen.encode_taps_backward(&q_cache, &g_q)?)?;
        // Key-side gradients reach only encoder parameters; the hazy input
        // is data.
        let _ = gen.encode_taps_backward(&k_cache, &g_k)?;
    }

    let grad_z = gen.backward(&gen_cache, &g_out)?;
    Ok(GeneratorStep {
        gan_loss,
        nce_loss,
        output,
        grad_z,
    })
}

/// Discriminator-side loss and gradients for one sample: the generator runs
/// forward only (its output is treated as fixed), both logit maps are
/// scored, and discriminator gradients accumulate.
pub fn discriminator_backward<S: Scalar>(
    gen: &DehazeNet<S>,
    disc: &mut Discriminator<S>,
    hazy: &Tensor3<S>,
    z: &Tensor3<S>,
    clear: &Tensor3<S>,
) -> Result<S> {
    let fake_img = gen.dehaze(hazy, z)?;
    let (real_logits, real_cache) = disc.forward(clear)?;
    let (fake_logits, fake_cache) = disc.forward(&fake_img)?;
    let (loss, g_real, g_fake) = lsgan_d_loss_backward(&real_logits, &fake_logits);
    let _ = disc.backward(&real_cache, &g_real)?;
    let _ = disc.backward(&fake_cache, &g_fake)?;
    Ok(loss)
}
