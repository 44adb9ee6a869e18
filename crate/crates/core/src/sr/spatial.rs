//! Pixel-space super-resolution (SSR): a 2D denoising UNet conditioned on
//! the bilinearly upscaled low-resolution frame via channel concatenation.
//! Frames are reconstructed independently; there is no temporal coupling.

use ndarray::{Array3, ArrayD, Axis, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{upscale_bilinear, SrError, SrPair};
use crate::diffusion::{self, DiffusionError, NoiseSchedule, ScheduleConfig};
use crate::nn::unet2d::{UNet2d, UNet2dConfig};
use crate::nn::{Adam, AdamConfig, Ema, Graph, ParamBuilder, ParamSet, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsrConfig {
    pub low_size: usize,
    pub high_size: usize,
    pub base_channels: usize,
    pub channel_multipliers: Vec<usize>,
    /// Spatial attention per level.
    pub attention: Vec<bool>,
    pub res_blocks_per_level: usize,
    pub attention_heads: usize,
    pub schedule: ScheduleConfig,
}

impl Default for SsrConfig {
    fn default() -> Self {
        Self {
            low_size: 32,
            high_size: 256,
            base_channels: 32,
            channel_multipliers: vec![1, 2, 4, 8],
            attention: vec![false, false, false, true],
            res_blocks_per_level: 2,
            attention_heads: 4,
            schedule: ScheduleConfig::default(),
        }
    }
}

impl SsrConfig {
    pub fn tiny(low_size: usize, high_size: usize) -> Self {
        Self {
            low_size,
            high_size,
            base_channels: 8,
            channel_multipliers: vec![1, 2],
            attention: vec![false, true],
            res_blocks_per_level: 1,
            attention_heads: 2,
            schedule: ScheduleConfig { steps: 4, beta_start: 1e-3, beta_end: 0.1 },
        }
    }

    fn unet_config(&self) -> UNet2dConfig {
        UNet2dConfig {
            in_channels: 2,
            out_channels: 1,
            base_channels: self.base_channels,
            channel_multipliers: self.channel_multipliers.clone(),
            attention: self.attention.clone(),
            res_blocks_per_level: self.res_blocks_per_level,
            cond_dim: 0,
            attention_heads: self.attention_heads,
        }
    }

    pub fn validate(&self) -> Result<(), SrError> {
        if self.low_size == 0 || self.high_size % self.low_size != 0 {
            return Err(SrError::BadTargetSize { target: self.high_size, low: self.low_size });
        }
        self.unet_config().validate(self.high_size).map_err(SrError::BadConfig)?;
        self.schedule.build()?;
        Ok(())
    }

    pub fn low_shape(&self) -> [usize; 3] {
        [1, self.low_size, self.low_size]
    }

    pub fn high_shape(&self) -> [usize; 3] {
        [1, self.high_size, self.high_size]
    }
}

pub struct SpatialSr {
    pub config: SsrConfig,
    pub params: ParamSet,
    unet: UNet2d,
}

impl SpatialSr {
    pub fn init(config: &SsrConfig, seed: u64) -> Result<Self, SrError> {
        config.validate()?;
        let mut pb = ParamBuilder::new(crate::rng::derive(seed, &[crate::rng::stream::SSR, 0]));
        let unet = UNet2d::build(&mut pb, "unet", &config.unet_config());
        Ok(Self { config: config.clone(), params: pb.build(), unet })
    }

    pub fn with_params(&self, params: ParamSet) -> Self {
        assert_eq!(params.len(), self.params.len(), "parameter layout mismatch");
        Self { config: self.config.clone(), params, unet: self.unet.clone() }
    }

    pub fn schedule(&self) -> NoiseSchedule {
        self.config.schedule.build().expect("validated at init")
    }

    fn check_high(&self, x: &Array3<f64>) -> Result<(), SrError> {
        let expected = self.config.high_shape();
        if x.shape() != expected {
            return Err(SrError::BadShape {
                got: x.shape().to_vec(),
                expected: expected.to_vec(),
            });
        }
        Ok(())
    }

    /// Predict the injected noise for one corrupted high-resolution frame,
    /// conditioned on the already-upscaled low frame.
    pub fn predict_noise_ssr(
        &self,
        low_up: &Array3<f64>,
        x_eps: &Array3<f64>,
        t: usize,
    ) -> Result<Array3<f64>, SrError> {
        self.check_high(low_up)?;
        self.check_high(x_eps)?;
        let steps = self.config.schedule.steps;
        if t == 0 || t > steps {
            return Err(DiffusionError::BadTimestep { t, steps }.into());
        }
        let g = Graph::inference();
        let vars = self.params.bind(&g);
        let cond = g.constant(stack3(std::slice::from_ref(low_up)));
        let xe = g.constant(stack3(std::slice::from_ref(x_eps)));
        let out = self.forward_batch(&g, &vars, &cond, &xe, &[t]);
        let arr = out.to_array().index_axis_move(Axis(0), 0);
        if arr.iter().any(|v| !v.is_finite()) {
            return Err(SrError::NonFinite {
                context: "predicted noise".into(),
                diagnostic: "non-finite activation".into(),
            });
        }
        Ok(arr.into_dimensionality().expect("3d"))
    }

    /// `cond` and `x_eps` in `(B, 1, H, W)`; concatenated along channels.
    fn forward_batch(
        &self,
        g: &Graph,
        vars: &[Tensor],
        cond: &Tensor,
        x_eps: &Tensor,
        ts: &[usize],
    ) -> Tensor {
        let x_in = g.concat(1, &[x_eps, cond]);
        self.unet.forward(g, vars, &x_in, ts, None)
    }

    /// L1 noise loss for explicit draws against the given parameters.
    pub fn loss_with_params(
        &self,
        params: &ParamSet,
        batch: &[SrPair],
        ts: &[usize],
        eps: &ArrayD<f64>,
    ) -> f64 {
        let (loss, _, _) = self.loss_graph(params, batch, ts, eps, false);
        loss
    }

    fn loss_graph(
        &self,
        params: &ParamSet,
        batch: &[SrPair],
        ts: &[usize],
        eps: &ArrayD<f64>,
        recording: bool,
    ) -> (f64, Tensor, Graph) {
        let g = if recording { Graph::new() } else { Graph::inference() };
        let vars = params.bind(&g);
        let highs: Vec<Array3<f64>> = batch.iter().map(|p| p.high.clone()).collect();
        let conds: Vec<Array3<f64>> = batch
            .iter()
            .map(|p| {
                upscale_bilinear(&p.low, self.config.high_size, self.config.high_size)
                    .expect("validated pair geometry")
            })
            .collect();
        let x0 = stack3(&highs);
        let schedule = self.schedule();
        let x_eps = crate::predictor::forward_diffuse_batch(&x0, ts, eps, &schedule);
        let cond = g.constant(stack3(&conds));
        let xe = g.constant(x_eps);
        let eps_hat = self.forward_batch(&g, &vars, &cond, &xe, ts);
        let eps_t = g.constant(eps.clone());
        let loss = g.mean_all(&g.abs(&g.sub(&eps_hat, &eps_t)));
        let value = loss.scalar();
        (value, loss, g)
    }

    pub fn loss_and_grads(
        &self,
        batch: &[SrPair],
        ts: &[usize],
        eps: &ArrayD<f64>,
    ) -> (f64, Vec<Option<ArrayD<f64>>>) {
        let g = Graph::new();
        let vars = self.params.bind(&g);
        let highs: Vec<Array3<f64>> = batch.iter().map(|p| p.high.clone()).collect();
        let conds: Vec<Array3<f64>> = batch
            .iter()
            .map(|p| {
                upscale_bilinear(&p.low, self.config.high_size, self.config.high_size)
                    .expect("validated pair geometry")
            })
            .collect();
        let x0 = stack3(&highs);
        let schedule = self.schedule();
        let x_eps = crate::predictor::forward_diffuse_batch(&x0, ts, eps, &schedule);
        let cond = g.constant(stack3(&conds));
        let xe = g.constant(x_eps);
        let eps_hat = self.forward_batch(&g, &vars, &cond, &xe, ts);
        let eps_t = g.constant(eps.clone());
        let loss = g.mean_all(&g.abs(&g.sub(&eps_hat, &eps_t)));
        let value = loss.scalar();
        let mut grads = g.backward(&loss);
        (value, vars.iter().map(|v| grads.take(v)).collect())
    }

    pub fn draw_step_inputs(
        &self,
        batch_len: usize,
        rng: &mut ChaCha8Rng,
    ) -> (Vec<usize>, ArrayD<f64>) {
        let steps = self.config.schedule.steps;
        let ts: Vec<usize> = (0..batch_len).map(|_| rng.random_range(1..=steps)).collect();
        let shape = [batch_len, 1, self.config.high_size, self.config.high_size];
        let eps = diffusion::standard_normal(&shape, rng);
        (ts, eps)
    }

    /// Full ancestral sampling conditioned on the upscaled low frame;
    /// output clamped to `[-1, 1]`.
    pub fn super_resolve(
        &self,
        low: &Array3<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Array3<f64>, SrError> {
        let expected = self.config.low_shape();
        if low.shape() != expected {
            return Err(SrError::BadShape {
                got: low.shape().to_vec(),
                expected: expected.to_vec(),
            });
        }
        let hs = self.config.high_size;
        let up = upscale_bilinear(low, hs, hs)?;
        let schedule = self.schedule();
        let g = Graph::inference();
        let vars = self.params.bind(&g);
        let cond = g.constant(stack3(std::slice::from_ref(&up)));
        let sampled: ArrayD<f64> = diffusion::sample(
            |state: &ArrayD<f64>, t: usize| -> Result<ArrayD<f64>, SrError> {
                let xe = g.constant(state.clone());
                Ok(self.forward_batch(&g, &vars, &cond, &xe, &[t]).to_array())
            },
            &[1, 1, hs, hs],
            &schedule,
            rng,
        )?;
        let out = sampled
            .index_axis_move(Axis(0), 0)
            .mapv(|v| v.clamp(-1.0, 1.0));
        Ok(out.into_dimensionality().expect("3d"))
    }
}

pub struct SsrTrainState {
    pub model: SpatialSr,
    pub opt: Adam,
    pub ema: Ema,
    pub seed: u64,
    pub step: u64,
}

impl SsrTrainState {
    pub fn new(
        config: &SsrConfig,
        adam: AdamConfig,
        ema_decay: f64,
        seed: u64,
    ) -> Result<Self, SrError> {
        let model = SpatialSr::init(config, seed)?;
        let opt = Adam::new(&model.params, adam);
        let ema = Ema::new(&model.params, ema_decay);
        Ok(Self { model, opt, ema, seed, step: 0 })
    }

    pub fn ema_model(&self) -> SpatialSr {
        self.model.with_params(self.ema.snapshot(&self.model.params))
    }

    pub fn step_rng(&self) -> ChaCha8Rng {
        crate::rng::derive(self.seed, &[crate::rng::stream::SSR, self.step + 1])
    }

    pub fn train_step(&mut self, batch: &[SrPair], rng: &mut ChaCha8Rng) -> Result<f64, SrError> {
        if batch.is_empty() {
            return Err(SrError::EmptyBatch);
        }
        for pair in batch {
            if pair.high.shape() != self.model.config.high_shape()
                || pair.low.shape() != self.model.config.low_shape()
            {
                return Err(SrError::BadShape {
                    got: pair.high.shape().to_vec(),
                    expected: self.model.config.high_shape().to_vec(),
                });
            }
        }
        let (ts, eps) = self.model.draw_step_inputs(batch.len(), rng);
        let (loss, grads) = self.model.loss_and_grads(batch, &ts, &eps);
        if !loss.is_finite() {
            return Err(SrError::NonFinite {
                context: "training loss".into(),
                diagnostic: format!("loss={loss}, timesteps={ts:?}"),
            });
        }
        self.opt.apply(&mut self.model.params, &grads);
        self.ema.update(&self.model.params);
        self.step += 1;
        Ok(loss)
    }
}

/// Stack `(1, H, W)` frames into `(B, 1, H, W)`.
pub fn stack3(items: &[Array3<f64>]) -> ArrayD<f64> {
    assert!(!items.is_empty());
    let s = items[0].shape().to_vec();
    let mut out = ArrayD::zeros(IxDyn(&[items.len(), s[0], s[1], s[2]]));
    for (b, item) in items.iter().enumerate() {
        assert_eq!(item.shape(), &s[..]);
        out.index_axis_mut(Axis(0), b).assign(item);
    }
    out
}
