//! Latent-space super-resolution (LSR).
//!
//! An autoencoder maps `1 x H x H` frames to `4 x H/8 x H/8` latents (a
//! 16:1 compression in element count). Diffusion then runs entirely in
//! latent space, conditioned on three views of the low-resolution frame:
//! its latent (encode after bilinear upscale), a learned single-channel
//! projection concatenated as an extra input channel, and a pooled
//! patch-transformer feature vector injected into every residual block.
//! The encoder stays frozen during diffusion training; latents are
//! standardized per channel with statistics recorded in the checkpoint.

use ndarray::{Array1, Array3, ArrayD, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spatial::stack3;
use super::{upscale_bilinear, SrError, SrPair};
use crate::diffusion::{self, DiffusionError, NoiseSchedule, ScheduleConfig};
use crate::nn::blocks::{
    patchify, Conv2dLayer, GroupNormLayer, LayerNormLayer, LinearLayer, MultiHeadAttention,
    PositionEmbedding, ResBlock2d,
};
use crate::nn::unet2d::{UNet2d, UNet2dConfig};
use crate::nn::{Adam, AdamConfig, Ema, Graph, ParamBuilder, ParamSet, Tensor};

/// Downsampling factor of the autoencoder: three halvings.
pub const AE_FACTOR: usize = 8;
/// Latent channel count.
pub const LATENT_CHANNELS: usize = 4;

// ---------------------------------------------------------------------------
// autoencoder
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeConfig {
    pub high_size: usize,
    pub base_channels: usize,
    /// Channel multiplier per stage; exactly three stages.
    pub channel_multipliers: Vec<usize>,
    pub res_blocks_per_stage: usize,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            high_size: 256,
            base_channels: 32,
            channel_multipliers: vec![1, 2, 4],
            res_blocks_per_stage: 2,
        }
    }
}

impl AeConfig {
    pub fn tiny(high_size: usize) -> Self {
        Self {
            high_size,
            base_channels: 8,
            channel_multipliers: vec![1, 1, 2],
            res_blocks_per_stage: 1,
        }
    }

    pub fn validate(&self) -> Result<(), SrError> {
        if self.channel_multipliers.len() != 3 {
            return Err(SrError::BadConfig("the autoencoder uses exactly 3 stages".into()));
        }
        if self.high_size % AE_FACTOR != 0 {
            return Err(SrError::BadConfig(format!(
                "high_size {} not divisible by the autoencoder factor {AE_FACTOR}",
                self.high_size
            )));
        }
        if self.base_channels == 0 || self.res_blocks_per_stage == 0 {
            return Err(SrError::BadConfig("channels and blocks must be positive".into()));
        }
        Ok(())
    }

    pub fn latent_size(&self) -> usize {
        self.high_size / AE_FACTOR
    }

    pub fn latent_shape(&self) -> [usize; 3] {
        [LATENT_CHANNELS, self.latent_size(), self.latent_size()]
    }

    pub fn high_shape(&self) -> [usize; 3] {
        [1, self.high_size, self.high_size]
    }

    /// Element-count compression of the latent representation.
    pub fn compression_ratio(&self) -> usize {
        (self.high_size * self.high_size)
            / (LATENT_CHANNELS * self.latent_size() * self.latent_size())
    }
}

#[derive(Clone)]
struct Encoder2d {
    conv_in: Conv2dLayer,
    stages: Vec<(Vec<ResBlock2d>, Conv2dLayer)>,
    norm: GroupNormLayer,
    conv_out: Conv2dLayer,
}

#[derive(Clone)]
struct Decoder2d {
    conv_in: Conv2dLayer,
    stages: Vec<(Vec<ResBlock2d>, Conv2dLayer)>,
    norm: GroupNormLayer,
    conv_out: Conv2dLayer,
}

impl Encoder2d {
    fn build(pb: &mut ParamBuilder, cfg: &AeConfig) -> Self {
        pb.scoped("encoder", |pb| {
            let ch: Vec<usize> =
                cfg.channel_multipliers.iter().map(|m| m * cfg.base_channels).collect();
            let conv_in = Conv2dLayer::new(pb, "conv_in", 1, ch[0], 3, 1, 1);
            let mut stages = Vec::new();
            for s in 0..3 {
                let cin = if s == 0 { ch[0] } else { ch[s - 1] };
                stages.push(pb.scoped(&format!("stage{s}"), |pb| {
                    let mut blocks = Vec::new();
                    for b in 0..cfg.res_blocks_per_stage {
                        let bin = if b == 0 { cin } else { ch[s] };
                        blocks.push(ResBlock2d::new(pb, &format!("block{b}"), bin, ch[s], None));
                    }
                    let down = Conv2dLayer::new(pb, "down", ch[s], ch[s], 3, 2, 1);
                    (blocks, down)
                }));
            }
            let norm = GroupNormLayer::new(pb, "norm", ch[2]);
            let conv_out = Conv2dLayer::new(pb, "conv_out", ch[2], LATENT_CHANNELS, 3, 1, 1);
            Self { conv_in, stages, norm, conv_out }
        })
    }

    fn forward(&self, g: &Graph, vars: &[Tensor], x: &Tensor) -> Tensor {
        let mut h = self.conv_in.forward(g, vars, x);
        for (blocks, down) in &self.stages {
            for block in blocks {
                h = block.forward(g, vars, &h, None);
            }
            h = down.forward(g, vars, &h);
        }
        h = self.norm.forward(g, vars, &h);
        h = g.silu(&h);
        self.conv_out.forward(g, vars, &h)
    }
}

impl Decoder2d {
    fn build(pb: &mut ParamBuilder, cfg: &AeConfig) -> Self {
        pb.scoped("decoder", |pb| {
            let ch: Vec<usize> =
                cfg.channel_multipliers.iter().map(|m| m * cfg.base_channels).collect();
            let conv_in = Conv2dLayer::new(pb, "conv_in", LATENT_CHANNELS, ch[2], 3, 1, 1);
            let mut stages = Vec::new();
            for (i, s) in (0..3usize).rev().enumerate() {
                let cout = if s == 0 { ch[0] } else { ch[s - 1] };
                stages.push(pb.scoped(&format!("stage{i}"), |pb| {
                    let mut blocks = Vec::new();
                    for b in 0..cfg.res_blocks_per_stage {
                        blocks.push(ResBlock2d::new(pb, &format!("block{b}"), ch[s], ch[s], None));
                    }
                    let up = Conv2dLayer::new(pb, "up", ch[s], cout, 3, 1, 1);
                    (blocks, up)
                }));
            }
            let norm = GroupNormLayer::new(pb, "norm", ch[0]);
            let conv_out = Conv2dLayer::new(pb, "conv_out", ch[0], 1, 3, 1, 1);
            Self { conv_in, stages, norm, conv_out }
        })
    }

    fn forward(&self, g: &Graph, vars: &[Tensor], z: &Tensor) -> Tensor {
        let mut h = self.conv_in.forward(g, vars, z);
        for (blocks, up) in &self.stages {
            for block in blocks {
                h = block.forward(g, vars, &h, None);
            }
            h = g.upsample2x_2d(&h);
            h = up.forward(g, vars, &h);
        }
        h = self.norm.forward(g, vars, &h);
        h = g.silu(&h);
        let out = self.conv_out.forward(g, vars, &h);
        g.tanh(&out)
    }
}

/// The encoder/decoder pair. Encoding is deterministic; decoding saturates
/// to `[-1, 1]` through a tanh output.
pub struct Autoencoder {
    pub config: AeConfig,
    pub params: ParamSet,
    encoder: Encoder2d,
    decoder: Decoder2d,
}

impl Autoencoder {
    pub fn init(config: &AeConfig, seed: u64) -> Result<Self, SrError> {
        config.validate()?;
        let mut pb =
            ParamBuilder::new(crate::rng::derive(seed, &[crate::rng::stream::AUTOENCODER, 0]));
        let encoder = Encoder2d::build(&mut pb, config);
        let decoder = Decoder2d::build(&mut pb, config);
        Ok(Self { config: config.clone(), params: pb.build(), encoder, decoder })
    }

    pub fn with_params(&self, params: ParamSet) -> Self {
        assert_eq!(params.len(), self.params.len(), "parameter layout mismatch");
        Self {
            config: self.config.clone(),
            params,
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
        }
    }

    fn check_high(&self, x: &Array3<f64>) -> Result<(), SrError> {
        if x.shape() != self.config.high_shape() {
            return Err(SrError::BadShape {
                got: x.shape().to_vec(),
                expected: self.config.high_shape().to_vec(),
            });
        }
        Ok(())
    }

    /// `1 x H x H -> 4 x H/8 x H/8`, deterministic.
    pub fn encode(&self, x: &Array3<f64>) -> Result<Array3<f64>, SrError> {
        self.check_high(x)?;
        let g = Graph::inference();
        let vars = self.params.bind(&g);
        let xt = g.constant(stack3(std::slice::from_ref(x)));
        let z = self.encoder.forward(&g, &vars, &xt);
        Ok(z.to_array().index_axis_move(Axis(0), 0).into_dimensionality().expect("3d"))
    }

    /// `4 x H/8 x H/8 -> 1 x H x H`, bounded by the output tanh.
    pub fn decode(&self, z: &Array3<f64>) -> Result<Array3<f64>, SrError> {
        if z.shape() != self.config.latent_shape() {
            return Err(SrError::BadShape {
                got: z.shape().to_vec(),
                expected: self.config.latent_shape().to_vec(),
            });
        }
        let g = Graph::inference();
        let vars = self.params.bind(&g);
        let zt = g.constant(stack3(std::slice::from_ref(z)));
        let x = self.decoder.forward(&g, &vars, &zt);
        Ok(x.to_array().index_axis_move(Axis(0), 0).into_dimensionality().expect("3d"))
    }

    /// Mean reconstruction L1 over a batch, with the given parameters.
    pub fn recon_loss_with_params(&self, params: &ParamSet, batch: &[Array3<f64>]) -> f64 {
        let (loss, _, _) = self.recon_graph(params, batch, false);
        loss
    }

    fn recon_graph(
        &self,
        params: &ParamSet,
        batch: &[Array3<f64>],
        recording: bool,
    ) -> (f64, Tensor, Graph) {
        let g = if recording { Graph::new() } else { Graph::inference() };
        let vars = params.bind(&g);
        let x = g.constant(stack3(batch));
        let z = self.encoder.forward(&g, &vars, &x);
        let y = self.decoder.forward(&g, &vars, &z);
        let loss = g.mean_all(&g.abs(&g.sub(&y, &x)));
        let value = loss.scalar();
        (value, loss, g)
    }

    pub fn recon_loss_and_grads(&self, batch: &[Array3<f64>]) -> (f64, Vec<Option<ArrayD<f64>>>) {
        let g = Graph::new();
        let vars = self.params.bind(&g);
        let x = g.constant(stack3(batch));
        let z = self.encoder.forward(&g, &vars, &x);
        let y = self.decoder.forward(&g, &vars, &z);
        let loss = g.mean_all(&g.abs(&g.sub(&y, &x)));
        let value = loss.scalar();
        let mut grads = g.backward(&loss);
        (value, vars.iter().map(|v| grads.take(v)).collect())
    }
}

pub struct AeTrainState {
    pub model: Autoencoder,
    pub opt: Adam,
    pub ema: Ema,
    pub seed: u64,
    pub step: u64,
}

impl AeTrainState {
    pub fn new(
        config: &AeConfig,
        adam: AdamConfig,
        ema_decay: f64,
        seed: u64,
    ) -> Result<Self, SrError> {
        let model = Autoencoder::init(config, seed)?;
        let opt = Adam::new(&model.params, adam);
        let ema = Ema::new(&model.params, ema_decay);
        Ok(Self { model, opt, ema, seed, step: 0 })
    }

    pub fn ema_model(&self) -> Autoencoder {
        self.model.with_params(self.ema.snapshot(&self.model.params))
    }

    pub fn step_rng(&self) -> ChaCha8Rng {
        crate::rng::derive(self.seed, &[crate::rng::stream::AUTOENCODER, self.step + 1])
    }

    /// One reconstruction update. The rng is unused by the loss itself but
    /// kept in the signature so data sampling stays caller-driven.
    pub fn train_step(&mut self, batch: &[Array3<f64>]) -> Result<f64, SrError> {
        if batch.is_empty() {
            return Err(SrError::EmptyBatch);
        }
        for item in batch {
            self.model.check_high(item)?;
        }
        let (loss, grads) = self.model.recon_loss_and_grads(batch);
        if !loss.is_finite() {
            return Err(SrError::NonFinite {
                context: "autoencoder loss".into(),
                diagnostic: format!("loss={loss}"),
            });
        }
        self.opt.apply(&mut self.model.params, &grads);
        self.ema.update(&self.model.params);
        self.step += 1;
        Ok(loss)
    }
}

// ---------------------------------------------------------------------------
// patch-transformer image embedder
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub low_size: usize,
    pub patch: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self { low_size: 32, patch: 8, dim: 192, layers: 4, heads: 4 }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<(), SrError> {
        if self.patch == 0 || self.low_size % self.patch != 0 {
            return Err(SrError::BadConfig(format!(
                "patch {} must divide the low resolution {}",
                self.patch, self.low_size
            )));
        }
        if self.dim % self.heads != 0 {
            return Err(SrError::BadConfig("dim must be divisible by heads".into()));
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        (self.low_size / self.patch) * (self.low_size / self.patch)
    }
}

#[derive(Clone)]
struct TransformerLayer {
    ln1: LayerNormLayer,
    attn: MultiHeadAttention,
    ln2: LayerNormLayer,
    mlp1: LinearLayer,
    mlp2: LinearLayer,
}

/// Patch-tokenize, add learned positions, run a small transformer encoder,
/// and mean-pool the tokens into one feature vector.
#[derive(Clone)]
struct EmbedderNet {
    tok_proj: LinearLayer,
    pos: PositionEmbedding,
    layers: Vec<TransformerLayer>,
    ln_out: LayerNormLayer,
    cfg: EmbedderConfig,
}

impl EmbedderNet {
    fn build(pb: &mut ParamBuilder, cfg: &EmbedderConfig) -> Self {
        pb.scoped("embedder", |pb| {
            let tok_proj = LinearLayer::new(pb, "tok_proj", cfg.patch * cfg.patch, cfg.dim);
            let pos = PositionEmbedding::new(pb, "pos", cfg.tokens(), cfg.dim);
            let layers = (0..cfg.layers)
                .map(|l| {
                    pb.scoped(&format!("layer{l}"), |pb| TransformerLayer {
                        ln1: LayerNormLayer::new(pb, "ln1", cfg.dim),
                        attn: MultiHeadAttention::new(pb, "attn", cfg.dim, cfg.heads),
                        ln2: LayerNormLayer::new(pb, "ln2", cfg.dim),
                        mlp1: LinearLayer::new(pb, "mlp1", cfg.dim, 4 * cfg.dim),
                        mlp2: LinearLayer::new(pb, "mlp2", 4 * cfg.dim, cfg.dim),
                    })
                })
                .collect();
            let ln_out = LayerNormLayer::new(pb, "ln_out", cfg.dim);
            Self { tok_proj, pos, layers, ln_out, cfg: cfg.clone() }
        })
    }

    /// `low (B, 1, h, w) -> (B, dim)`.
    fn forward(&self, g: &Graph, vars: &[Tensor], low: &Tensor) -> Tensor {
        let b = low.shape()[0];
        let tokens = patchify(g, low, self.cfg.patch); // (B, n, p*p)
        let n = self.cfg.tokens();
        let flat = g.reshape(&tokens, &[b * n, self.cfg.patch * self.cfg.patch]);
        let proj = self.tok_proj.forward(g, vars, &flat);
        let mut h = g.reshape(&proj, &[b, n, self.cfg.dim]);
        h = self.pos.forward(g, vars, &h);
        for layer in &self.layers {
            let normed = layer.ln1.forward(g, vars, &h);
            let attended = layer.attn.forward(g, vars, &normed);
            h = g.add(&h, &attended);
            let normed = layer.ln2.forward(g, vars, &h);
            let flat = g.reshape(&normed, &[b * n, self.cfg.dim]);
            let m = layer.mlp1.forward(g, vars, &flat);
            let m = g.silu(&m);
            let m = layer.mlp2.forward(g, vars, &m);
            let m = g.reshape(&m, &[b, n, self.cfg.dim]);
            h = g.add(&h, &m);
        }
        h = self.ln_out.forward(g, vars, &h);
        // mean over the token axis
        let swapped = g.permute(&h, &[0, 2, 1]); // (B, dim, n)
        g.mean_spatial(&swapped)
    }
}

// ---------------------------------------------------------------------------
// latent diffusion
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsrConfig {
    pub low_size: usize,
    pub high_size: usize,
    pub base_channels: usize,
    pub channel_multipliers: Vec<usize>,
    pub attention: Vec<bool>,
    pub res_blocks_per_level: usize,
    pub attention_heads: usize,
    pub embedder: EmbedderConfig,
    pub schedule: ScheduleConfig,
}

impl Default for LsrConfig {
    fn default() -> Self {
        Self {
            low_size: 32,
            high_size: 256,
            base_channels: 32,
            channel_multipliers: vec![1, 2, 4],
            attention: vec![false, false, true],
            res_blocks_per_level: 2,
            attention_heads: 4,
            embedder: EmbedderConfig::default(),
            schedule: ScheduleConfig::default(),
        }
    }
}

impl LsrConfig {
    pub fn tiny(low_size: usize, high_size: usize) -> Self {
        Self {
            low_size,
            high_size,
            base_channels: 8,
            channel_multipliers: vec![1, 2],
            attention: vec![false, true],
            res_blocks_per_level: 1,
            attention_heads: 2,
            embedder: EmbedderConfig {
                low_size,
                patch: (low_size / 4).max(1),
                dim: 16,
                layers: 2,
                heads: 2,
            },
            schedule: ScheduleConfig { steps: 4, beta_start: 1e-3, beta_end: 0.1 },
        }
    }

    pub fn latent_size(&self) -> usize {
        self.high_size / AE_FACTOR
    }

    fn unet_config(&self) -> UNet2dConfig {
        UNet2dConfig {
            // latent-to-denoise + low-res latent conditioning + projected low frame
            in_channels: 2 * LATENT_CHANNELS + 1,
            out_channels: LATENT_CHANNELS,
            base_channels: self.base_channels,
            channel_multipliers: self.channel_multipliers.clone(),
            attention: self.attention.clone(),
            res_blocks_per_level: self.res_blocks_per_level,
            cond_dim: self.embedder.dim,
            attention_heads: self.attention_heads,
        }
    }

    pub fn validate(&self) -> Result<(), SrError> {
        if self.high_size % AE_FACTOR != 0 {
            return Err(SrError::BadConfig(format!(
                "high_size {} not divisible by {AE_FACTOR}",
                self.high_size
            )));
        }
        if self.latent_size() != self.low_size {
            return Err(SrError::BadConfig(format!(
                "latent side {} must equal the low resolution {}; the low frame joins the \
                 denoiser input as an extra channel",
                self.latent_size(),
                self.low_size
            )));
        }
        if self.embedder.low_size != self.low_size {
            return Err(SrError::BadConfig("embedder low_size mismatch".into()));
        }
        self.embedder.validate()?;
        self.unet_config().validate(self.latent_size()).map_err(SrError::BadConfig)?;
        self.schedule.build()?;
        Ok(())
    }

    pub fn low_shape(&self) -> [usize; 3] {
        [1, self.low_size, self.low_size]
    }

    pub fn latent_shape(&self) -> [usize; 3] {
        [LATENT_CHANNELS, self.latent_size(), self.latent_size()]
    }
}

/// Per-channel latent standardization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentStats {
    pub mean: [f64; LATENT_CHANNELS],
    pub std: [f64; LATENT_CHANNELS],
}

impl LatentStats {
    pub fn identity() -> Self {
        Self { mean: [0.0; LATENT_CHANNELS], std: [1.0; LATENT_CHANNELS] }
    }

    /// Fit from encoded training frames.
    pub fn fit(latents: &[Array3<f64>]) -> Self {
        assert!(!latents.is_empty());
        let mut mean = [0.0; LATENT_CHANNELS];
        let mut sq = [0.0; LATENT_CHANNELS];
        let mut count = 0.0;
        for z in latents {
            for c in 0..LATENT_CHANNELS {
                for &v in z.index_axis(Axis(0), c).iter() {
                    mean[c] += v;
                    sq[c] += v * v;
                }
            }
            count += (z.len() / LATENT_CHANNELS) as f64;
        }
        let mut std = [0.0; LATENT_CHANNELS];
        for c in 0..LATENT_CHANNELS {
            mean[c] /= count;
            std[c] = (sq[c] / count - mean[c] * mean[c]).max(1e-12).sqrt();
        }
        Self { mean, std }
    }

    pub fn standardize(&self, z: &Array3<f64>) -> Array3<f64> {
        let mut out = z.clone();
        for c in 0..LATENT_CHANNELS {
            let (m, s) = (self.mean[c], self.std[c]);
            out.index_axis_mut(Axis(0), c).mapv_inplace(|v| (v - m) / s);
        }
        out
    }

    pub fn destandardize(&self, z: &Array3<f64>) -> Array3<f64> {
        let mut out = z.clone();
        for c in 0..LATENT_CHANNELS {
            let (m, s) = (self.mean[c], self.std[c]);
            out.index_axis_mut(Axis(0), c).mapv_inplace(|v| v * s + m);
        }
        out
    }

    pub fn to_vecs(&self) -> (Vec<f64>, Vec<f64>) {
        (self.mean.to_vec(), self.std.to_vec())
    }

    pub fn from_vecs(mean: &[f64], std: &[f64]) -> Self {
        let mut out = Self::identity();
        out.mean.copy_from_slice(mean);
        out.std.copy_from_slice(std);
        out
    }
}

/// Latent-space denoiser plus its trainable conditioning paths (embedder
/// and the low-frame channel projection).
pub struct LatentSr {
    pub config: LsrConfig,
    pub params: ParamSet,
    unet: UNet2d,
    embedder: EmbedderNet,
    low_proj: Conv2dLayer,
}

impl LatentSr {
    pub fn init(config: &LsrConfig, seed: u64) -> Result<Self, SrError> {
        config.validate()?;
        let mut pb = ParamBuilder::new(crate::rng::derive(seed, &[crate::rng::stream::LSR, 0]));
        let embedder = EmbedderNet::build(&mut pb, &config.embedder);
        let low_proj = Conv2dLayer::new(&mut pb, "low_proj", 1, 1, 1, 1, 0);
        let unet = UNet2d::build(&mut pb, "unet", &config.unet_config());
        Ok(Self { config: config.clone(), params: pb.build(), unet, embedder, low_proj })
    }

    pub fn with_params(&self, params: ParamSet) -> Self {
        assert_eq!(params.len(), self.params.len(), "parameter layout mismatch");
        Self {
            config: self.config.clone(),
            params,
            unet: self.unet.clone(),
            embedder: self.embedder.clone(),
            low_proj: self.low_proj.clone(),
        }
    }

    pub fn schedule(&self) -> NoiseSchedule {
        self.config.schedule.build().expect("validated at init")
    }

    /// Pooled patch-transformer features of a low-resolution frame.
    pub fn embed_image(&self, low: &Array3<f64>) -> Result<Array1<f64>, SrError> {
        self.check_low(low)?;
        let g = Graph::inference();
        let vars = self.params.bind(&g);
        let lt = g.constant(stack3(std::slice::from_ref(low)));
        let out = self.embedder.forward(&g, &vars, &lt);
        let emb = out.to_array().index_axis_move(Axis(0), 0);
        Ok(emb.into_dimensionality().expect("1d"))
    }

    fn check_low(&self, low: &Array3<f64>) -> Result<(), SrError> {
        if low.shape() != self.config.low_shape() {
            return Err(SrError::BadShape {
                got: low.shape().to_vec(),
                expected: self.config.low_shape().to_vec(),
            });
        }
        Ok(())
    }

    fn check_latent(&self, z: &Array3<f64>) -> Result<(), SrError> {
        if z.shape() != self.config.latent_shape() {
            return Err(SrError::BadShape {
                got: z.shape().to_vec(),
                expected: self.config.latent_shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Single-frame noise prediction in latent space.
    pub fn predict_noise_lsr(
        &self,
        low: &Array3<f64>,
        x_latent: &Array3<f64>,
        z_eps: &Array3<f64>,
        t: usize,
    ) -> Result<Array3<f64>, SrError> {
        self.check_low(low)?;
        self.check_latent(x_latent)?;
        self.check_latent(z_eps)?;
        let steps = self.config.schedule.steps;
        if t == 0 || t > steps {
            return Err(DiffusionError::BadTimestep { t, steps }.into());
        }
        let g = Graph::inference();
        let vars = self.params.bind(&g);
        let lows = g.constant(stack3(std::slice::from_ref(low)));
        let lat = g.constant(stack3(std::slice::from_ref(x_latent)));
        let ze = g.constant(stack3(std::slice::from_ref(z_eps)));
        let out = self.forward_batch(&g, &vars, &lows, &lat, &ze, &[t]);
        Ok(out
            .to_array()
            .index_axis_move(Axis(0), 0)
            .into_dimensionality()
            .expect("3d"))
    }

    /// All inputs batched: `lows (B,1,l,l)`, `x_latent (B,4,l,l)`,
    /// `z_eps (B,4,l,l)`.
    fn forward_batch(
        &self,
        g: &Graph,
        vars: &[Tensor],
        lows: &Tensor,
        x_latent: &Tensor,
        z_eps: &Tensor,
        ts: &[usize],
    ) -> Tensor {
        let emb = self.embedder.forward(g, vars, lows);
        let low_ch = self.low_proj.forward(g, vars, lows);
        let x_in = g.concat(1, &[z_eps, x_latent, &low_ch]);
        self.unet.forward(g, vars, &x_in, ts, Some(&emb))
    }

    pub fn draw_step_inputs(
        &self,
        batch_len: usize,
        rng: &mut ChaCha8Rng,
    ) -> (Vec<usize>, ArrayD<f64>) {
        let steps = self.config.schedule.steps;
        let ts: Vec<usize> = (0..batch_len).map(|_| rng.random_range(1..=steps)).collect();
        let ls = self.config.latent_size();
        let eps = diffusion::standard_normal(&[batch_len, LATENT_CHANNELS, ls, ls], rng);
        (ts, eps)
    }

    /// Loss for explicit draws given precomputed (frozen-encoder) latents.
    pub fn loss_with_params(
        &self,
        params: &ParamSet,
        lows: &[Array3<f64>],
        z_high: &[Array3<f64>],
        z_low: &[Array3<f64>],
        ts: &[usize],
        eps: &ArrayD<f64>,
    ) -> f64 {
        let g = Graph::inference();
        let vars = params.bind(&g);
        let (value, _) = self.loss_on_graph(&g, &vars, lows, z_high, z_low, ts, eps);
        value
    }

    fn loss_on_graph(
        &self,
        g: &Graph,
        vars: &[Tensor],
        lows: &[Array3<f64>],
        z_high: &[Array3<f64>],
        z_low: &[Array3<f64>],
        ts: &[usize],
        eps: &ArrayD<f64>,
    ) -> (f64, Tensor) {
        let schedule = self.schedule();
        let z0 = stack3(z_high);
        let z_eps = crate::predictor::forward_diffuse_batch(&z0, ts, eps, &schedule);
        let lows_t = g.constant(stack3(lows));
        let lat = g.constant(stack3(z_low));
        let ze = g.constant(z_eps);
        let eps_hat = self.forward_batch(g, vars, &lows_t, &lat, &ze, ts);
        let eps_t = g.constant(eps.clone());
        let loss = g.mean_all(&g.abs(&g.sub(&eps_hat, &eps_t)));
        let value = loss.scalar();
        (value, loss)
    }

    pub fn loss_and_grads(
        &self,
        lows: &[Array3<f64>],
        z_high: &[Array3<f64>],
        z_low: &[Array3<f64>],
        ts: &[usize],
        eps: &ArrayD<f64>,
    ) -> (f64, Vec<Option<ArrayD<f64>>>) {
        let g = Graph::new();
        let vars = self.params.bind(&g);
        let (value, loss) = self.loss_on_graph(&g, &vars, lows, z_high, z_low, ts, eps);
        let mut grads = g.backward(&loss);
        (value, vars.iter().map(|v| grads.take(v)).collect())
    }
}

/// Everything the LSR stage needs at inference time.
pub struct LatentSrPipeline {
    pub ae: Autoencoder,
    pub lsr: LatentSr,
    pub stats: LatentStats,
}

impl LatentSrPipeline {
    /// Latent of a low-resolution frame: bilinear upscale to the
    /// autoencoder input size, encode, standardize.
    pub fn encode_lowres_latent(&self, low: &Array3<f64>) -> Result<Array3<f64>, SrError> {
        self.lsr.check_low(low)?;
        let hs = self.ae.config.high_size;
        let up = upscale_bilinear(low, hs, hs)?;
        Ok(self.stats.standardize(&self.ae.encode(&up)?))
    }

    /// Standardized latent of a high-resolution frame.
    pub fn encode_high(&self, high: &Array3<f64>) -> Result<Array3<f64>, SrError> {
        Ok(self.stats.standardize(&self.ae.encode(high)?))
    }

    /// Sample a latent conditioned on the low-resolution frame, then decode
    /// and clamp.
    pub fn super_resolve_latent(
        &self,
        low: &Array3<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Array3<f64>, SrError> {
        self.lsr.check_low(low)?;
        let z_low = self.encode_lowres_latent(low)?;
        let schedule = self.lsr.schedule();
        let g = Graph::inference();
        let vars = self.lsr.params.bind(&g);
        let lows_t = g.constant(stack3(std::slice::from_ref(low)));
        let lat = g.constant(stack3(std::slice::from_ref(&z_low)));
        let emb = self.lsr.embedder.forward(&g, &vars, &lows_t);
        let low_ch = self.lsr.low_proj.forward(&g, &vars, &lows_t);
        let ls = self.lsr.config.latent_size();

        let sampled: ArrayD<f64> = diffusion::sample(
            |state: &ArrayD<f64>, t: usize| -> Result<ArrayD<f64>, SrError> {
                let ze = g.constant(state.clone());
                let x_in = g.concat(1, &[&ze, &lat, &low_ch]);
                Ok(self.lsr.unet.forward(&g, &vars, &x_in, &[t], Some(&emb)).to_array())
            },
            &[1, LATENT_CHANNELS, ls, ls],
            &schedule,
            rng,
        )?;
        let z = sampled
            .index_axis_move(Axis(0), 0)
            .into_dimensionality::<ndarray::Ix3>()
            .expect("3d");
        let decoded = self.ae.decode(&self.stats.destandardize(&z))?;
        Ok(decoded.mapv(|v| v.clamp(-1.0, 1.0)))
    }
}

pub struct LsrTrainState {
    pub pipeline: LatentSrPipeline,
    pub opt: Adam,
    pub ema: Ema,
    pub seed: u64,
    pub step: u64,
}

impl LsrTrainState {
    /// The autoencoder arrives pretrained and stays frozen.
    pub fn new(
        config: &LsrConfig,
        ae: Autoencoder,
        stats: LatentStats,
        adam: AdamConfig,
        ema_decay: f64,
        seed: u64,
    ) -> Result<Self, SrError> {
        if ae.config.high_size != config.high_size {
            return Err(SrError::BadConfig(format!(
                "autoencoder trained at {} but the LSR stage expects {}",
                ae.config.high_size, config.high_size
            )));
        }
        let lsr = LatentSr::init(config, seed)?;
        let opt = Adam::new(&lsr.params, adam);
        let ema = Ema::new(&lsr.params, ema_decay);
        Ok(Self {
            pipeline: LatentSrPipeline { ae, lsr, stats },
            opt,
            ema,
            seed,
            step: 0,
        })
    }

    pub fn ema_pipeline(&self) -> LatentSrPipeline {
        LatentSrPipeline {
            ae: self.pipeline.ae.with_params(self.pipeline.ae.params.clone()),
            lsr: self
                .pipeline
                .lsr
                .with_params(self.ema.snapshot(&self.pipeline.lsr.params)),
            stats: self.pipeline.stats.clone(),
        }
    }

    pub fn step_rng(&self) -> ChaCha8Rng {
        crate::rng::derive(self.seed, &[crate::rng::stream::LSR, self.step + 1])
    }

    /// One update of the denoiser and embedder; the encoder is frozen and
    /// its latents enter as constants.
    pub fn train_step(&mut self, batch: &[SrPair], rng: &mut ChaCha8Rng) -> Result<f64, SrError> {
        if batch.is_empty() {
            return Err(SrError::EmptyBatch);
        }
        let mut lows = Vec::with_capacity(batch.len());
        let mut z_high = Vec::with_capacity(batch.len());
        let mut z_low = Vec::with_capacity(batch.len());
        for pair in batch {
            lows.push(pair.low.clone());
            z_high.push(self.pipeline.encode_high(&pair.high)?);
            z_low.push(self.pipeline.encode_lowres_latent(&pair.low)?);
        }
        let (ts, eps) = self.pipeline.lsr.draw_step_inputs(batch.len(), rng);
        let (loss, grads) = self.pipeline.lsr.loss_and_grads(&lows, &z_high, &z_low, &ts, &eps);
        if !loss.is_finite() {
            return Err(SrError::NonFinite {
                context: "latent diffusion loss".into(),
                diagnostic: format!("loss={loss}, timesteps={ts:?}"),
            });
        }
        self.opt.apply(&mut self.pipeline.lsr.params, &grads);
        self.ema.update(&self.pipeline.lsr.params);
        self.step += 1;
        Ok(loss)
    }
}

/// Fit latent statistics over (up to) the first `max_frames` highs.
pub fn fit_latent_stats(
    ae: &Autoencoder,
    highs: &[Array3<f64>],
    max_frames: usize,
) -> Result<LatentStats, SrError> {
    let take = highs.len().min(max_frames.max(1));
    let mut latents = Vec::with_capacity(take);
    for high in highs.iter().take(take) {
        latents.push(ae.encode(high)?);
    }
    Ok(LatentStats::fit(&latents))
}
