//! The prediction stage: a 3D denoising UNet conditioned on four context
//! frames, both directly (the frames are concatenated with the noisy target
//! along the time axis) and through a compact embedding produced by a 3D
//! residual context encoder. Trained with the L1 noise-prediction loss;
//! sampling produces 16-frame low-resolution forecast ensembles.

use ndarray::{Array1, Array4, Array5, ArrayD, Axis, IxDyn};
use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{SequenceSample, CONTEXT_FRAMES, TARGET_FRAMES};
use crate::diffusion::{self, DiffusionError, NoiseSchedule, ScheduleConfig};
use crate::nn::blocks::{Conv3dLayer, GroupNormLayer, LinearLayer, ResBlock3d};
use crate::nn::unet3d::{UNet3d, UNet3dConfig};
use crate::nn::{Adam, AdamConfig, Ema, Graph, ParamBuilder, ParamSet, Tensor};

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("bad input shape {got:?}, expected {expected:?}")]
    BadShape { got: Vec<usize>, expected: Vec<usize> },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("members must be at least 1")]
    NoMembers,
    #[error("non-finite values in {context}: {diagnostic}")]
    NonFinite { context: String, diagnostic: String },
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}

/// Conditioning embedding produced by the context encoder.
pub type CondEmbedding = Array1<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    /// Low-resolution frame geometry.
    pub height: usize,
    pub width: usize,
    pub base_channels: usize,
    pub channel_multipliers: Vec<usize>,
    /// Temporal attention per resolution level.
    pub attention: Vec<bool>,
    pub res_blocks_per_level: usize,
    /// Context-embedding width produced by the encoder.
    pub embed_dim: usize,
    /// Base channels of the context encoder.
    pub encoder_channels: usize,
    pub attention_heads: usize,
    pub schedule: ScheduleConfig,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            base_channels: 32,
            channel_multipliers: vec![1, 2, 4],
            attention: vec![false, false, true],
            res_blocks_per_level: 2,
            embed_dim: 256,
            encoder_channels: 16,
            attention_heads: 4,
            schedule: ScheduleConfig::default(),
        }
    }
}

impl PredictorConfig {
    /// A deliberately small setup for tests and CPU smoke runs.
    pub fn tiny(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            base_channels: 8,
            channel_multipliers: vec![1, 2],
            attention: vec![false, true],
            res_blocks_per_level: 1,
            embed_dim: 16,
            encoder_channels: 4,
            attention_heads: 2,
            schedule: ScheduleConfig { steps: 4, beta_start: 1e-3, beta_end: 0.1 },
        }
    }

    fn unet_config(&self) -> UNet3dConfig {
        UNet3dConfig {
            in_channels: 1,
            out_channels: 1,
            base_channels: self.base_channels,
            channel_multipliers: self.channel_multipliers.clone(),
            attention: self.attention.clone(),
            res_blocks_per_level: self.res_blocks_per_level,
            cond_dim: self.embed_dim,
            attention_heads: self.attention_heads,
        }
    }

    pub fn validate(&self) -> Result<(), PredictorError> {
        self.unet_config()
            .validate(self.height.min(self.width))
            .map_err(PredictorError::BadConfig)?;
        if self.embed_dim == 0 {
            return Err(PredictorError::BadConfig("embed_dim must be positive".into()));
        }
        self.schedule.build()?;
        Ok(())
    }

    pub fn context_shape(&self) -> [usize; 4] {
        [CONTEXT_FRAMES, 1, self.height, self.width]
    }

    pub fn target_shape(&self) -> [usize; 4] {
        [TARGET_FRAMES, 1, self.height, self.width]
    }
}

/// The 3D residual context encoder: four stages of residual blocks with
/// spatial downsampling in between, global average pooling, and a linear
/// head to the embedding width.
#[derive(Clone)]
struct ContextEncoder {
    conv_in: Conv3dLayer,
    stages: Vec<(Vec<ResBlock3d>, Option<Conv3dLayer>)>,
    norm: GroupNormLayer,
    head: LinearLayer,
}

impl ContextEncoder {
    fn build(pb: &mut ParamBuilder, base: usize, embed_dim: usize) -> Self {
        pb.scoped("encoder", |pb| {
            let mults = [1usize, 2, 4, 8];
            let conv_in = Conv3dLayer::new(pb, "conv_in", 1, base, (3, 3, 3), (1, 1, 1), (1, 1, 1));
            let mut stages = Vec::new();
            for (s, &m) in mults.iter().enumerate() {
                let cin = if s == 0 { base } else { base * mults[s - 1] };
                let cout = base * m;
                stages.push(pb.scoped(&format!("stage{s}"), |pb| {
                    let blocks = vec![
                        ResBlock3d::new(pb, "block0", cin, cout, None),
                        ResBlock3d::new(pb, "block1", cout, cout, None),
                    ];
                    let down = (s + 1 < mults.len()).then(|| {
                        Conv3dLayer::new(pb, "down", cout, cout, (3, 3, 3), (1, 2, 2), (1, 1, 1))
                    });
                    (blocks, down)
                }));
            }
            let top = base * mults[mults.len() - 1];
            let norm = GroupNormLayer::new(pb, "norm", top);
            let head = LinearLayer::new(pb, "head", top, embed_dim);
            Self { conv_in, stages, norm, head }
        })
    }

    /// `context (B, 1, 4, H, W) -> (B, embed_dim)`.
    fn forward(&self, g: &Graph, vars: &[Tensor], context: &Tensor) -> Tensor {
        let mut h = self.conv_in.forward(g, vars, context);
        for (blocks, down) in &self.stages {
            for block in blocks {
                h = block.forward(g, vars, &h, None);
            }
            if let Some(down) = down {
                h = down.forward(g, vars, &h);
            }
        }
        h = self.norm.forward(g, vars, &h);
        h = g.silu(&h);
        let pooled = g.mean_spatial(&h);
        self.head.forward(g, vars, &pooled)
    }
}

pub struct SequencePredictor {
    pub config: PredictorConfig,
    pub params: ParamSet,
    unet: UNet3d,
    encoder: ContextEncoder,
}

impl SequencePredictor {
    pub fn init(config: &PredictorConfig, seed: u64) -> Result<Self, PredictorError> {
        config.validate()?;
        let mut pb = ParamBuilder::new(crate::rng::derive(seed, &[crate::rng::stream::PREDICTOR, 0]));
        let encoder = ContextEncoder::build(&mut pb, config.encoder_channels, config.embed_dim);
        let unet = UNet3d::build(&mut pb, "unet", &config.unet_config());
        Ok(Self { config: config.clone(), params: pb.build(), unet, encoder })
    }

    /// Rebind this model around a different parameter set of identical
    /// layout (such as the EMA weights).
    pub fn with_params(&self, params: ParamSet) -> Self {
        assert_eq!(params.len(), self.params.len(), "parameter layout mismatch");
        Self {
            config: self.config.clone(),
            params,
            unet: self.unet.clone(),
            encoder: self.encoder.clone(),
        }
    }

    pub fn schedule(&self) -> NoiseSchedule {
        self.config.schedule.build().expect("validated at init")
    }

    fn check_context(&self, context: &Array4<f64>) -> Result<(), PredictorError> {
        let expected = self.config.context_shape();
        if context.shape() != expected {
            return Err(PredictorError::BadShape {
                got: context.shape().to_vec(),
                expected: expected.to_vec(),
            });
        }
        Ok(())
    }

    /// Deterministic context embedding.
    pub fn encode_context(&self, context: &Array4<f64>) -> Result<CondEmbedding, PredictorError> {
        self.check_context(context)?;
        let g = Graph::inference();
        let vars = self.params.bind(&g);
        let ctx = g.constant(pack_frames(std::slice::from_ref(context)));
        let out = self.encoder.forward(&g, &vars, &ctx);
        let emb = out.to_array().index_axis_move(Axis(0), 0);
        let emb = emb.into_dimensionality::<ndarray::Ix1>().expect("1d embedding");
        ensure_finite(emb.iter(), "context embedding")?;
        Ok(emb)
    }

    /// Predict the injected noise for one corrupted target stack.
    pub fn predict_noise(
        &self,
        context: &Array4<f64>,
        x_eps: &Array4<f64>,
        t: usize,
    ) -> Result<Array4<f64>, PredictorError> {
        self.check_context(context)?;
        let expected = self.config.target_shape();
        if x_eps.shape() != expected {
            return Err(PredictorError::BadShape {
                got: x_eps.shape().to_vec(),
                expected: expected.to_vec(),
            });
        }
        let steps = self.config.schedule.steps;
        if t == 0 || t > steps {
            return Err(DiffusionError::BadTimestep { t, steps }.into());
        }
        let g = Graph::inference();
        let vars = self.params.bind(&g);
        let ctx = g.constant(pack_frames(std::slice::from_ref(context)));
        let xe = g.constant(pack_frames(std::slice::from_ref(x_eps)));
        let out = self.forward_batch(&g, &vars, &ctx, &xe, &[t]);
        let arr = unpack_frames(&out.to_array(), TARGET_FRAMES, self.config.height, self.config.width)
            .index_axis_move(Axis(0), 0);
        ensure_finite(arr.iter(), "predicted noise")?;
        Ok(arr.into_dimensionality::<ndarray::Ix4>().expect("4d"))
    }

    /// Shared forward pass: context and noisy target both in
    /// `(B, 1, frames, H, W)` layout.
    fn forward_batch(
        &self,
        g: &Graph,
        vars: &[Tensor],
        contexts: &Tensor,
        x_eps: &Tensor,
        ts: &[usize],
    ) -> Tensor {
        let cond = self.encoder.forward(g, vars, contexts);
        let x_in = g.concat(2, &[contexts, x_eps]);
        let out = self.unet.forward(g, vars, &x_in, ts, Some(&cond));
        // the loss reads only the 16 target positions of the 20-frame volume
        g.slice_axis(&out, 2, CONTEXT_FRAMES, TARGET_FRAMES)
    }

    /// L1 noise-prediction loss for explicit draws, evaluated with the given
    /// parameters. This is the function the finite-difference oracle probes.
    pub fn loss_with_params(
        &self,
        params: &ParamSet,
        batch: &[SequenceSample],
        ts: &[usize],
        eps: &ArrayD<f64>,
        recording: bool,
    ) -> (f64, Tensor, Graph) {
        let g = if recording { Graph::new() } else { Graph::inference() };
        let vars = params.bind(&g);
        let contexts: Vec<Array4<f64>> = batch.iter().map(|s| s.context.clone()).collect();
        let targets: Vec<Array4<f64>> = batch.iter().map(|s| s.target.clone()).collect();
        let ctx = g.constant(pack_frames(&contexts));
        let x0 = pack_frames(&targets);
        let schedule = self.schedule();
        let x_eps = forward_diffuse_batch(&x0, ts, eps, &schedule);
        let xe = g.constant(x_eps);
        let eps_hat = self.forward_batch(&g, &vars, &ctx, &xe, ts);
        let eps_t = g.constant(eps.clone());
        let loss = g.mean_all(&g.abs(&g.sub(&eps_hat, &eps_t)));
        let value = loss.scalar();
        (value, loss, g)
    }

    /// Loss plus parameter gradients for one batch with explicit draws.
    pub fn loss_and_grads(
        &self,
        batch: &[SequenceSample],
        ts: &[usize],
        eps: &ArrayD<f64>,
    ) -> (f64, Vec<Option<ArrayD<f64>>>) {
        let g = Graph::new();
        let vars = self.params.bind(&g);
        let contexts: Vec<Array4<f64>> = batch.iter().map(|s| s.context.clone()).collect();
        let targets: Vec<Array4<f64>> = batch.iter().map(|s| s.target.clone()).collect();
        let ctx = g.constant(pack_frames(&contexts));
        let x0 = pack_frames(&targets);
        let schedule = self.schedule();
        let x_eps = forward_diffuse_batch(&x0, ts, eps, &schedule);
        let xe = g.constant(x_eps);
        let eps_hat = self.forward_batch(&g, &vars, &ctx, &xe, ts);
        let eps_t = g.constant(eps.clone());
        let loss = g.mean_all(&g.abs(&g.sub(&eps_hat, &eps_t)));
        let value = loss.scalar();
        let mut grads = g.backward(&loss);
        let out = vars.iter().map(|v| grads.take(v)).collect();
        (value, out)
    }

    /// Draw per-item timesteps and noise for one training step.
    pub fn draw_step_inputs(
        &self,
        batch_len: usize,
        rng: &mut ChaCha8Rng,
    ) -> (Vec<usize>, ArrayD<f64>) {
        let steps = self.config.schedule.steps;
        let ts: Vec<usize> = (0..batch_len).map(|_| rng.random_range(1..=steps)).collect();
        let shape = [batch_len, 1, TARGET_FRAMES, self.config.height, self.config.width];
        let eps = diffusion::standard_normal(&shape, rng);
        (ts, eps)
    }

    /// Sample a forecast ensemble; each member runs an independent
    /// ancestral chain seeded from `rng`. Outputs are clamped to `[-1, 1]`.
    pub fn forecast(
        &self,
        context: &Array4<f64>,
        members: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Array5<f64>, PredictorError> {
        if members == 0 {
            return Err(PredictorError::NoMembers);
        }
        self.check_context(context)?;
        let schedule = self.schedule();
        let g = Graph::inference();
        let vars = self.params.bind(&g);
        let ctx = g.constant(pack_frames(std::slice::from_ref(context)));
        let cond = self.encoder.forward(&g, &vars, &ctx);

        let (h, w) = (self.config.height, self.config.width);
        let mut out = Array5::zeros((members, TARGET_FRAMES, 1, h, w));
        for member in 0..members {
            let mut member_rng = crate::rng::derive(rng.next_u64(), &[member as u64]);
            let sampled: ArrayD<f64> = diffusion::sample(
                |state: &ArrayD<f64>, t: usize| -> Result<ArrayD<f64>, PredictorError> {
                    let xe = g.constant(state.clone());
                    let x_in = g.concat(2, &[&ctx, &xe]);
                    let eps_hat = self.unet.forward(&g, &vars, &x_in, &[t], Some(&cond));
                    let sliced = g.slice_axis(&eps_hat, 2, CONTEXT_FRAMES, TARGET_FRAMES);
                    let arr = sliced.to_array();
                    ensure_finite(arr.iter(), "sampler state")?;
                    Ok(arr)
                },
                &[1, 1, TARGET_FRAMES, h, w],
                &schedule,
                &mut member_rng,
            )?;
            let frames = unpack_frames(&sampled, TARGET_FRAMES, h, w);
            let clamped = frames.mapv(|v| v.clamp(-1.0, 1.0));
            out.index_axis_mut(Axis(0), member)
                .assign(&clamped.index_axis(Axis(0), 0));
        }
        Ok(out)
    }
}

/// Training state: model, optimizer, EMA, and the deterministic step
/// counter that drives per-step random streams.
pub struct PredictorTrainState {
    pub model: SequencePredictor,
    pub opt: Adam,
    pub ema: Ema,
    pub seed: u64,
    pub step: u64,
}

impl PredictorTrainState {
    pub fn new(
        config: &PredictorConfig,
        adam: AdamConfig,
        ema_decay: f64,
        seed: u64,
    ) -> Result<Self, PredictorError> {
        let model = SequencePredictor::init(config, seed)?;
        let opt = Adam::new(&model.params, adam);
        let ema = Ema::new(&model.params, ema_decay);
        Ok(Self { model, opt, ema, seed, step: 0 })
    }

    /// The averaged weights used for sampling.
    pub fn ema_model(&self) -> SequencePredictor {
        self.model.with_params(self.ema.snapshot(&self.model.params))
    }

    /// One optimizer update on a batch; draws are taken from `rng`.
    pub fn train_step(
        &mut self,
        batch: &[SequenceSample],
        rng: &mut ChaCha8Rng,
    ) -> Result<f64, PredictorError> {
        if batch.is_empty() {
            return Err(PredictorError::EmptyBatch);
        }
        let (ts, eps) = self.model.draw_step_inputs(batch.len(), rng);
        let (loss, grads) = self.model.loss_and_grads(batch, &ts, &eps);
        if !loss.is_finite() {
            return Err(PredictorError::NonFinite {
                context: "training loss".into(),
                diagnostic: state_dump(&self.model.params, &grads, &ts, loss),
            });
        }
        self.opt.apply(&mut self.model.params, &grads);
        self.ema.update(&self.model.params);
        self.step += 1;
        Ok(loss)
    }

    /// The per-step stream, also reproduced by a resumed run.
    pub fn step_rng(&self) -> ChaCha8Rng {
        crate::rng::derive(self.seed, &[crate::rng::stream::PREDICTOR, self.step + 1])
    }
}

/// Stack `(frames, 1, H, W)` samples into network layout `(B, 1, frames, H, W)`.
pub fn pack_frames(items: &[Array4<f64>]) -> ArrayD<f64> {
    assert!(!items.is_empty());
    let s = items[0].shape().to_vec();
    let (frames, h, w) = (s[0], s[2], s[3]);
    let mut out = Array5::zeros((items.len(), 1, frames, h, w));
    for (b, item) in items.iter().enumerate() {
        assert_eq!(item.shape(), &s[..], "inconsistent batch shapes");
        for f in 0..frames {
            let src = item.index_axis(Axis(0), f);
            let src = src.index_axis(Axis(0), 0);
            out.index_axis_mut(Axis(0), b)
                .index_axis_mut(Axis(0), 0)
                .index_axis_mut(Axis(0), f)
                .assign(&src);
        }
    }
    out.into_dyn()
}

/// Inverse of [`pack_frames`]: `(B, 1, frames, H, W) -> (B, frames, 1, H, W)`.
pub fn unpack_frames(arr: &ArrayD<f64>, frames: usize, h: usize, w: usize) -> ArrayD<f64> {
    let b = arr.shape()[0];
    assert_eq!(arr.shape(), &[b, 1, frames, h, w]);
    arr.view()
        .into_shape_with_order(IxDyn(&[b, frames, h, w]))
        .expect("layout")
        .insert_axis(Axis(2))
        .to_owned()
}

/// Per-item forward diffusion for a batch with heterogeneous timesteps.
pub fn forward_diffuse_batch(
    x0: &ArrayD<f64>,
    ts: &[usize],
    eps: &ArrayD<f64>,
    schedule: &NoiseSchedule,
) -> ArrayD<f64> {
    assert_eq!(x0.shape(), eps.shape());
    assert_eq!(x0.shape()[0], ts.len());
    let mut out = ArrayD::zeros(x0.raw_dim());
    for (b, &t) in ts.iter().enumerate() {
        let abar = schedule.alpha_bar(t);
        let (ca, cb) = (abar.sqrt(), (1.0 - abar).sqrt());
        let x_slice = x0.index_axis(Axis(0), b);
        let e_slice = eps.index_axis(Axis(0), b);
        let mut o = out.index_axis_mut(Axis(0), b);
        ndarray::Zip::from(&mut o).and(&x_slice).and(&e_slice).for_each(|o, &x, &e| {
            *o = ca * x + cb * e;
        });
    }
    out
}

fn ensure_finite<'a>(
    mut values: impl Iterator<Item = &'a f64>,
    context: &str,
) -> Result<(), PredictorError> {
    if values.any(|v| !v.is_finite()) {
        return Err(PredictorError::NonFinite {
            context: context.into(),
            diagnostic: "non-finite activation encountered".into(),
        });
    }
    Ok(())
}

fn state_dump(
    params: &ParamSet,
    grads: &[Option<ArrayD<f64>>],
    ts: &[usize],
    loss: f64,
) -> String {
    let pmax = params
        .iter()
        .flat_map(|p| p.value.iter())
        .fold(0.0f64, |a, &v| a.max(v.abs()));
    let gmax = grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .fold(0.0f64, |a, &v| a.max(v.abs()));
    format!("loss={loss}, max|w|={pmax:.3e}, max|g|={gmax:.3e}, timesteps={ts:?}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{central_diff, relative_error, sample_coords};
    use rand::SeedableRng;

    fn tiny_config() -> PredictorConfig {
        PredictorConfig::tiny(8, 8)
    }

    fn random_sample(cfg: &PredictorConfig, seed: u64) -> SequenceSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = [CONTEXT_FRAMES, 1, cfg.height, cfg.width];
        let tshape = [TARGET_FRAMES, 1, cfg.height, cfg.width];
        let context = diffusion::standard_normal(&shape, &mut rng)
            .mapv(|v| v.tanh())
            .into_dimensionality()
            .unwrap();
        let target = diffusion::standard_normal(&tshape, &mut rng)
            .mapv(|v| v.tanh())
            .into_dimensionality()
            .unwrap();
        SequenceSample { context, target }
    }

    #[test]
    fn embedding_shape_determinism_and_sensitivity() {
        let cfg = tiny_config();
        let model = SequencePredictor::init(&cfg, 1).unwrap();
        let s = random_sample(&cfg, 2);
        let a = model.encode_context(&s.context).unwrap();
        let b = model.encode_context(&s.context).unwrap();
        assert_eq!(a.len(), cfg.embed_dim);
        assert_eq!(a, b);

        // perturb one frame only
        let mut other = s.context.clone();
        other[[2, 0, 3, 3]] += 0.25;
        let c = model.encode_context(&other).unwrap();
        let diff = (&a - &c).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff > 0.0, "embedding insensitive to the context");
    }

    #[test]
    fn predict_noise_shape_and_t_sensitivity() {
        let cfg = tiny_config();
        let model = SequencePredictor::init(&cfg, 3).unwrap();
        let s = random_sample(&cfg, 4);
        let out1 = model.predict_noise(&s.context, &s.target, 1).unwrap();
        assert_eq!(out1.shape(), cfg.target_shape());
        let out2 = model.predict_noise(&s.context, &s.target, 2).unwrap();
        let diff = (&out1 - &out2).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff > 0.0, "output constant in t");

        // shape errors
        let bad = Array4::zeros((3, 1, cfg.height, cfg.width));
        assert!(matches!(
            model.predict_noise(&bad, &s.target, 1),
            Err(PredictorError::BadShape { .. })
        ));
        assert!(model.predict_noise(&s.context, &s.target, 99).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = tiny_config();
        let model = SequencePredictor::init(&cfg, 5).unwrap();
        let batch = vec![random_sample(&cfg, 6)];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (ts, eps) = model.draw_step_inputs(batch.len(), &mut rng);

        let (_, grads) = model.loss_and_grads(&batch, &ts, &eps);
        let mut params = model.params.clone();
        let coords = sample_coords(&params, 6, &mut rng);
        for coord in coords {
            let numeric = central_diff(&mut params, coord, |ps| {
                model.loss_with_params(ps, &batch, &ts, &eps, false).0
            });
            let analytic = grads[coord.param.0]
                .as_ref()
                .map(|g| g.as_slice().unwrap()[coord.flat])
                .unwrap_or(0.0);
            let err = relative_error(analytic, numeric);
            assert!(err <= 1e-3, "coord {coord:?}: analytic {analytic} vs numeric {numeric}");
        }
    }

    #[test]
    fn train_step_loss_matches_recomputation_and_decreases() {
        let cfg = tiny_config();
        let mut state = PredictorTrainState::new(
            &cfg,
            AdamConfig { learning_rate: 2e-3, ..Default::default() },
            0.99,
            11,
        )
        .unwrap();
        let batch = vec![random_sample(&cfg, 12), random_sample(&cfg, 13)];

        // the reported loss equals an independent recomputation from the
        // same draws
        let mut rng = state.step_rng();
        let (ts, eps) = state.model.draw_step_inputs(batch.len(), &mut rng);
        let expected = state
            .model
            .loss_with_params(&state.model.params, &batch, &ts, &eps, false)
            .0;
        let mut rng = state.step_rng();
        let loss0 = state.train_step(&batch, &mut rng).unwrap();
        assert!((loss0 - expected).abs() <= 1e-6);
        assert!(loss0 >= 0.0);

        // short fixed-draw overfit: loss shrinks
        let mut last = loss0;
        for _ in 0..30 {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            last = state.train_step(&batch, &mut rng).unwrap();
        }
        assert!(last < loss0, "loss did not decrease: {loss0} -> {last}");
    }

    #[test]
    fn batch_loss_is_permutation_invariant() {
        let cfg = tiny_config();
        let model = SequencePredictor::init(&cfg, 21).unwrap();
        let batch = vec![
            random_sample(&cfg, 22),
            random_sample(&cfg, 23),
            random_sample(&cfg, 24),
        ];
        let ts = vec![1, 3, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let eps = diffusion::standard_normal(
            &[3, 1, TARGET_FRAMES, cfg.height, cfg.width],
            &mut rng,
        );
        let (loss, _, _) = model.loss_with_params(&model.params, &batch, &ts, &eps, false);

        let perm = [2usize, 0, 1];
        let batch_p: Vec<SequenceSample> = perm.iter().map(|&i| batch[i].clone()).collect();
        let ts_p: Vec<usize> = perm.iter().map(|&i| ts[i]).collect();
        let mut eps_p = eps.clone();
        for (dst, &src) in perm.iter().enumerate() {
            eps_p
                .index_axis_mut(Axis(0), dst)
                .assign(&eps.index_axis(Axis(0), src));
        }
        let (loss_p, _, _) = model.loss_with_params(&model.params, &batch_p, &ts_p, &eps_p, false);
        assert!((loss - loss_p).abs() <= 1e-12, "{loss} vs {loss_p}");
    }

    #[test]
    fn forecast_shapes_determinism_and_spread() {
        let cfg = tiny_config();
        let model = SequencePredictor::init(&cfg, 31).unwrap();
        let s = random_sample(&cfg, 32);
        let a = model
            .forecast(&s.context, 3, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!(a.shape(), [3, TARGET_FRAMES, 1, cfg.height, cfg.width]);
        assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));

        let b = model
            .forecast(&s.context, 3, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!(a, b, "same seed must reproduce the ensemble");

        let m0 = a.index_axis(Axis(0), 0);
        let m1 = a.index_axis(Axis(0), 1);
        let diff = (&m0.to_owned() - &m1).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff > 0.0, "members from different streams must differ");

        assert!(matches!(
            model.forecast(&s.context, 0, &mut ChaCha8Rng::seed_from_u64(1)),
            Err(PredictorError::NoMembers)
        ));
    }
}
