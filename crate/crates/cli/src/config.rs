//! Training configuration: a flat `key = value` text format with `#`
//! comments. Unknown keys are errors so typos fail loudly instead of
//! silently training with a default. [`TrainConfig::resolved_text`] prints
//! every field back out in the same format; parsing that text reproduces
//! the configured behavior exactly, which is how checkpoints snapshot
//! their provenance.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use freqdehaze_core::dehaze::{NetworkConfig, StatsScope};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Training stage, 1 or 2. The `--stage` flag overrides the file.
    pub stage: u8,
    /// Master seed; every random stream derives from it. The mandatory
    /// `--seed` flag overrides the file.
    pub seed: u64,
    pub data_root: PathBuf,
    pub epochs: usize,
    pub batch: usize,
    pub patch: usize,
    pub lr: f32,
    /// Discriminator learning rate; defaults to `lr` when absent.
    pub disc_lr: Option<f32>,
    /// Discriminator updates per generator update.
    pub disc_steps: usize,
    /// Discriminator base channel width.
    pub disc_base: usize,
    pub lambda_gan: f32,
    pub lambda_nce: f32,
    pub lambda_diff: f32,
    /// Diffusion step count T.
    pub t_steps: usize,
    pub beta_start: f32,
    pub beta_end: f32,
    pub base_channels: usize,
    pub blocks_per_scale: Vec<usize>,
    /// Amplitude statistics scope for the residual alignment.
    pub amp_stats: StatsScope,
    pub nce_tau: f32,
    pub nce_patches: usize,
    pub nce_layers: Vec<usize>,
    pub nce_embed: usize,
    pub denoiser_hidden: usize,
    pub denoiser_blocks: usize,
    pub denoiser_emb: usize,
    /// Stage-2 diagnostic: feed the true aligned residual to the dehazing
    /// network instead of the sampled one and leave the denoiser untouched.
    pub oracle_residual: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: 1,
            seed: 0,
            data_root: PathBuf::from("data"),
            epochs: 200,
            batch: 8,
            patch: 256,
            lr: 1e-4,
            disc_lr: None,
            disc_steps: 1,
            disc_base: 64,
            lambda_gan: 1.0,
            lambda_nce: 1.0,
            lambda_diff: 1.0,
            t_steps: 8,
            beta_start: 0.1,
            beta_end: 0.8,
            base_channels: 64,
            blocks_per_scale: vec![4, 4, 6, 10],
            amp_stats: StatsScope::Global,
            nce_tau: 0.07,
            nce_patches: 256,
            nce_layers: vec![0, 1],
            nce_embed: 64,
            denoiser_hidden: 64,
            denoiser_blocks: 5,
            denoiser_emb: 32,
            oracle_residual: false,
        }
    }
}

impl TrainConfig {
    pub fn disc_lr(&self) -> f32 {
        self.disc_lr.unwrap_or(self.lr)
    }

    pub fn scales(&self) -> usize {
        self.blocks_per_scale.len()
    }

    /// Cross-field checks: sizes must actually fit the network the other
    /// fields describe. Called by the parser; call it again after mutating
    /// a config in code.
    pub fn validate(&self) -> Result<()> {
        if self.stage != 1 && self.stage != 2 {
            return Err(Error::data(format!("stage must be 1 or 2, got {}", self.stage)));
        }
        if self.batch == 0 {
            return Err(Error::data("batch must be positive"));
        }
        for (name, v) in [("lr", self.lr), ("disc_lr", self.disc_lr())] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::data(format!("{name} must be positive, got {v}")));
            }
        }
        if self.disc_steps == 0 {
            return Err(Error::data("disc_steps must be positive"));
        }
        if self.disc_base == 0 {
            return Err(Error::data("disc_base must be positive"));
        }
        for (name, v) in [
            ("lambda_gan", self.lambda_gan),
            ("lambda_nce", self.lambda_nce),
            ("lambda_diff", self.lambda_diff),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::data(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.t_steps == 0 {
            return Err(Error::data("t_steps must be positive"));
        }
        if !(self.beta_start > 0.0 && self.beta_start <= self.beta_end && self.beta_end < 1.0) {
            return Err(Error::data(format!(
                "need 0 < beta_start <= beta_end < 1, got {} and {}",
                self.beta_start, self.beta_end
            )));
        }
        // The network config validates channel/block counts; its spatial
        // check is the authority on which patch sizes the scales accept.
        let net = NetworkConfig::new(self.base_channels, self.blocks_per_scale.clone())?;
        net.validate_spatial(self.patch, self.patch)?;
        if self.nce_layers.is_empty() {
            return Err(Error::data("nce_layers must name at least one scale"));
        }
        for pair in self.nce_layers.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::data(format!(
                    "nce_layers must be strictly ascending, got {:?}",
                    self.nce_layers
                )));
            }
        }
        if *self.nce_layers.last().expect("non-empty") >= self.scales() {
            return Err(Error::data(format!(
                "nce_layers {:?} reference a scale past the deepest ({})",
                self.nce_layers,
                self.scales() - 1
            )));
        }
        if !(self.nce_tau > 0.0) {
            return Err(Error::data(format!("nce_tau must be positive, got {}", self.nce_tau)));
        }
        if self.nce_patches == 0 || self.nce_embed == 0 {
            return Err(Error::data("nce_patches and nce_embed must be positive"));
        }
        if self.denoiser_hidden == 0 || self.denoiser_blocks == 0 {
            return Err(Error::data("denoiser_hidden and denoiser_blocks must be positive"));
        }
        if self.denoiser_emb < 2 || self.denoiser_emb % 2 != 0 {
            return Err(Error::data(format!(
                "denoiser_emb must be even and >= 2, got {}",
                self.denoiser_emb
            )));
        }
        Ok(())
    }

    /// Every field in file syntax, fixed key order. Parsing this text
    /// yields a config with identical behavior and the identical resolved
    /// text (a defaulted `disc_lr` is printed at its resolved value).
    pub fn resolved_text(&self) -> String {
        let list = |xs: &[usize]| {
            xs.iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        };
        let scope = match self.amp_stats {
            StatsScope::Global => "global",
            StatsScope::PerChannel => "per_channel",
        };
        format!(
            "stage = {}\n\
             seed = {}\n\
             data_root = {}\n\
             epochs = {}\n\
             batch = {}\n\
             patch = {}\n\
             lr = {}\n\
             disc_lr = {}\n\
             disc_steps = {}\n\
             disc_base = {}\n\
             lambda_gan = {}\n\
             lambda_nce = {}\n\
             lambda_diff = {}\n\
             t_steps = {}\n\
             beta_start = {}\n\
             beta_end = {}\n\
             base_channels = {}\n\
             blocks_per_scale = {}\n\
             amp_stats = {}\n\
             nce_tau = {}\n\
             nce_patches = {}\n\
             nce_layers = {}\n\
             nce_embed = {}\n\
             denoiser_hidden = {}\n\
             denoiser_blocks = {}\n\
             denoiser_emb = {}\n\
             oracle_residual = {}\n",
            self.stage,
            self.seed,
            self.data_root.display(),
            self.epochs,
            self.batch,
            self.patch,
            self.lr,
            self.disc_lr(),
            self.disc_steps,
            self.disc_base,
            self.lambda_gan,
            self.lambda_nce,
            self.lambda_diff,
            self.t_steps,
            self.beta_start,
            self.beta_end,
            self.base_channels,
            list(&self.blocks_per_scale),
            scope,
            self.nce_tau,
            self.nce_patches,
            list(&self.nce_layers),
            self.nce_embed,
            self.denoiser_hidden,
            self.denoiser_blocks,
            self.denoiser_emb,
            self.oracle_residual,
        )
    }
}

pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path)
}

pub fn parse_config(text: &str, origin: &Path) -> Result<TrainConfig> {
    let fail = |line: usize, detail: String| Error::Config {
        origin: origin.to_path_buf(),
        line,
        detail,
    };
    let mut cfg = TrainConfig::default();
    let mut seen = BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let stripped = raw.split('#').next().unwrap_or("").trim();
        if stripped.is_empty() {
            continue;
        }
        let (key, value) = stripped
            .split_once('=')
            .ok_or_else(|| fail(line, format!("expected `key = value`, got {stripped:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        if value.is_empty() {
            return Err(fail(line, format!("key {key} has no value")));
        }
        if !seen.insert(key.to_string()) {
            return Err(fail(line, format!("duplicate key {key}")));
        }
        let bad = |e: String| fail(line, format!("key {key}: {e}"));
        match key {
            "stage" => cfg.stage = parse_num(value).map_err(bad)?,
            "seed" => cfg.seed = parse_num(value).map_err(bad)?,
            "data_root" => cfg.data_root = PathBuf::from(value),
            "epochs" => cfg.epochs = parse_num(value).map_err(bad)?,
            "batch" => cfg.batch = parse_num(value).map_err(bad)?,
            "patch" => cfg.patch = parse_num(value).map_err(bad)?,
            "lr" => cfg.lr = parse_num(value).map_err(bad)?,
            "disc_lr" => cfg.disc_lr = Some(parse_num(value).map_err(bad)?),
            "disc_steps" => cfg.disc_steps = parse_num(value).map_err(bad)?,
            "disc_base" => cfg.disc_base = parse_num(value).map_err(bad)?,
            "lambda_gan" => cfg.lambda_gan = parse_num(value).map_err(bad)?,
            "lambda_nce" => cfg.lambda_nce = parse_num(value).map_err(bad)?,
            "lambda_diff" => cfg.lambda_diff = parse_num(value).map_err(bad)?,
            "t_steps" => cfg.t_steps = parse_num(value).map_err(bad)?,
            "beta_start" => cfg.beta_start = parse_num(value).map_err(bad)?,
            "beta_end" => cfg.beta_end = parse_num(value).map_err(bad)?,
            "base_channels" => cfg.base_channels = parse_num(value).map_err(bad)?,
            "blocks_per_scale" => cfg.blocks_per_scale = parse_list(value).map_err(bad)?,
            "amp_stats" => {
                cfg.amp_stats = match value {
                    "global" => StatsScope::Global,
                    "per_channel" => StatsScope::PerChannel,
                    other => {
                        return Err(bad(format!(
                            "{other:?} is not a stats scope (global | per_channel)"
                        )))
                    }
                }
            }
            "nce_tau" => cfg.nce_tau = parse_num(value).map_err(bad)?,
            "nce_patches" => cfg.nce_patches = parse_num(value).map_err(bad)?,
            "nce_layers" => cfg.nce_layers = parse_list(value).map_err(bad)?,
            "nce_embed" => cfg.nce_embed = parse_num(value).map_err(bad)?,
            "denoiser_hidden" => cfg.denoiser_hidden = parse_num(value).map_err(bad)?,
            "denoiser_blocks" => cfg.denoiser_blocks = parse_num(value).map_err(bad)?,
            "denoiser_emb" => cfg.denoiser_emb = parse_num(value).map_err(bad)?,
            "oracle_residual" => {
                cfg.oracle_residual = match value {
                    "true" => true,
                    "false" => false,
                    other => return Err(bad(format!("{other:?} is not a bool (true | false)"))),
                }
            }
            unknown => return Err(fail(line, format!("unknown key {unknown}"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_num<T: std::str::FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| format!("{value:?}: {e}"))
}

fn parse_list(value: &str) -> std::result::Result<Vec<usize>, String> {
    value
        .split(',')
        .map(|part| parse_num(part.trim()))
        .collect()
}
