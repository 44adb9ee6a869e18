//! The 3D denoising UNet of the prediction stage. Spatial resolution halves
//! per level while the time axis is preserved; temporal self-attention can
//! be enabled per level and always runs in the middle block.

use serde::{Deserialize, Serialize};

use super::blocks::{
    Conv3dLayer, GroupNormLayer, ResBlock3d, TemporalAttention, TimestepMlp,
};
use super::graph::{Graph, Tensor};
use super::params::ParamBuilder;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UNet3dConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_channels: usize,
    pub channel_multipliers: Vec<usize>,
    /// Temporal self-attention toggle per level.
    pub attention: Vec<bool>,
    pub res_blocks_per_level: usize,
    pub cond_dim: usize,
    pub attention_heads: usize,
}

impl UNet3dConfig {
    pub fn levels(&self) -> usize {
        self.channel_multipliers.len()
    }

    pub fn emb_dim(&self) -> usize {
        4 * self.base_channels + self.cond_dim
    }

    pub fn validate(&self, input_side: usize) -> Result<(), String> {
        if self.levels() < 2 {
            return Err(format!("need at least 2 resolution levels, got {}", self.levels()));
        }
        if self.attention.len() != self.levels() {
            return Err("attention flags must match the level count".into());
        }
        let down_factor = 1usize << (self.levels() - 1);
        if input_side % down_factor != 0 {
            return Err(format!(
                "input side {input_side} not divisible by 2^(levels-1) = {down_factor}"
            ));
        }
        if self.res_blocks_per_level == 0 {
            return Err("need at least one residual block per level".into());
        }
        Ok(())
    }
}

#[derive(Clone)]
struct Level {
    down_blocks: Vec<ResBlock3d>,
    down_attn: Vec<Option<TemporalAttention>>,
    downsample: Option<Conv3dLayer>,
    up_blocks: Vec<ResBlock3d>,
    up_attn: Vec<Option<TemporalAttention>>,
    upsample: Option<Conv3dLayer>,
}

#[derive(Clone)]
pub struct UNet3d {
    pub config: UNet3dConfig,
    temb: TimestepMlp,
    conv_in: Conv3dLayer,
    levels: Vec<Level>,
    mid_block1: ResBlock3d,
    mid_attn: TemporalAttention,
    mid_block2: ResBlock3d,
    norm_out: GroupNormLayer,
    conv_out: Conv3dLayer,
}

impl UNet3d {
    pub fn build(pb: &mut ParamBuilder, name: &str, config: &UNet3dConfig) -> Self {
        let emb = config.emb_dim();
        let heads = config.attention_heads;
        let k = (3, 3, 3);
        pb.scoped(name, |pb| {
            let temb = TimestepMlp::new(pb, "temb", config.base_channels, 4 * config.base_channels);
            let conv_in = Conv3dLayer::new(
                pb,
                "conv_in",
                config.in_channels,
                config.base_channels,
                k,
                (1, 1, 1),
                (1, 1, 1),
            );
            let nl = config.levels();
            let ch = |l: usize| config.base_channels * config.channel_multipliers[l];
            let mut levels = Vec::with_capacity(nl);
            for l in 0..nl {
                let cin = if l == 0 { config.base_channels } else { ch(l - 1) };
                levels.push(pb.scoped(&format!("level{l}"), |pb| {
                    let mut down_blocks = Vec::new();
                    let mut down_attn = Vec::new();
                    for b in 0..config.res_blocks_per_level {
                        let bin = if b == 0 { cin } else { ch(l) };
                        down_blocks.push(ResBlock3d::new(pb, &format!("down{b}"), bin, ch(l), Some(emb)));
                        down_attn.push(config.attention[l].then(|| {
                            TemporalAttention::new(pb, &format!("down_attn{b}"), ch(l), heads)
                        }));
                    }
                    // spatial-only downsampling: the frame axis keeps its length
                    let downsample = (l + 1 < nl)
                        .then(|| Conv3dLayer::new(pb, "down", ch(l), ch(l), k, (1, 2, 2), (1, 1, 1)));
                    let mut up_blocks = Vec::new();
                    let mut up_attn = Vec::new();
                    for b in 0..config.res_blocks_per_level {
                        let bin = if b == 0 { 2 * ch(l) } else { ch(l) };
                        up_blocks.push(ResBlock3d::new(pb, &format!("up{b}"), bin, ch(l), Some(emb)));
                        up_attn.push(config.attention[l].then(|| {
                            TemporalAttention::new(pb, &format!("up_attn{b}"), ch(l), heads)
                        }));
                    }
                    let upsample = (l > 0).then(|| {
                        Conv3dLayer::new(pb, "up", ch(l), ch(l - 1), k, (1, 1, 1), (1, 1, 1))
                    });
                    Level { down_blocks, down_attn, downsample, up_blocks, up_attn, upsample }
                }));
            }
            let top = ch(nl - 1);
            let mid_block1 = ResBlock3d::new(pb, "mid1", top, top, Some(emb));
            let mid_attn = TemporalAttention::new(pb, "mid_attn", top, heads);
            let mid_block2 = ResBlock3d::new(pb, "mid2", top, top, Some(emb));
            let norm_out = GroupNormLayer::new(pb, "norm_out", config.base_channels);
            let conv_out = Conv3dLayer::with_gain(
                pb,
                "conv_out",
                config.base_channels,
                config.out_channels,
                k,
                (1, 1, 1),
                (1, 1, 1),
                0.1,
            );
            Self {
                config: config.clone(),
                temb,
                conv_in,
                levels,
                mid_block1,
                mid_attn,
                mid_block2,
                norm_out,
                conv_out,
            }
        })
    }

    /// `x (B, in_channels, T, H, W)` with one timestep per item and an
    /// optional conditioning vector `(B, cond_dim)`.
    pub fn forward(
        &self,
        g: &Graph,
        vars: &[Tensor],
        x: &Tensor,
        ts: &[usize],
        cond: Option<&Tensor>,
    ) -> Tensor {
        assert_eq!(x.shape()[0], ts.len(), "one timestep per batch item");
        let temb = self.temb.forward(g, vars, ts);
        let emb = match (self.config.cond_dim, cond) {
            (0, None) => temb,
            (d, Some(c)) => {
                assert_eq!(c.shape(), [ts.len(), d], "conditioning vector shape");
                g.concat(1, &[&temb, c])
            }
            (d, None) => panic!("network requires a conditioning vector of dim {d}"),
        };

        let mut h = self.conv_in.forward(g, vars, x);
        let mut skips: Vec<Tensor> = Vec::with_capacity(self.levels.len());
        for level in &self.levels {
            for (block, attn) in level.down_blocks.iter().zip(&level.down_attn) {
                h = block.forward(g, vars, &h, Some(&emb));
                if let Some(attn) = attn {
                    h = attn.forward(g, vars, &h);
                }
            }
            skips.push(h.clone());
            if let Some(down) = &level.downsample {
                h = down.forward(g, vars, &h);
            }
        }

        h = self.mid_block1.forward(g, vars, &h, Some(&emb));
        h = self.mid_attn.forward(g, vars, &h);
        h = self.mid_block2.forward(g, vars, &h, Some(&emb));

        for (level, skip) in self.levels.iter().zip(skips.iter()).rev() {
            h = g.concat(1, &[&h, skip]);
            for (block, attn) in level.up_blocks.iter().zip(&level.up_attn) {
                h = block.forward(g, vars, &h, Some(&emb));
                if let Some(attn) = attn {
                    h = attn.forward(g, vars, &h);
                }
            }
            if let Some(up) = &level.upsample {
                h = g.upsample2x_spatial3d(&h);
                h = up.forward(g, vars, &h);
            }
        }

        h = self.norm_out.forward(g, vars, &h);
        h = g.silu(&h);
        self.conv_out.forward(g, vars, &h)
    }
}
