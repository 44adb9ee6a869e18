//! Layers and blocks assembled into the denoising networks: convolutions
//! with owned parameters, normalization, residual blocks with additive
//! embedding injection, and multi-head self-attention over either space or
//! time.

use ndarray::{Array2, IxDyn};

use super::graph::{Graph, Tensor};
use super::norm_groups;
use super::params::{ParamBuilder, ParamId};
use crate::diffusion::timestep_embedding;

pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub w: ParamId,
    pub b: ParamId,
}

impl LinearLayer {
    pub fn new(pb: &mut ParamBuilder, name: &str, din: usize, dout: usize) -> Self {
        Self::with_gain(pb, name, din, dout, 1.0)
    }

    pub fn with_gain(pb: &mut ParamBuilder, name: &str, din: usize, dout: usize, gain: f64) -> Self {
        pb.scoped(name, |pb| Self {
            w: pb.normal("w", &[dout, din], gain * (2.0 / din as f64).sqrt()),
            b: pb.zeros("b", &[dout]),
        })
    }

    pub fn forward(&self, g: &Graph, vars: &[Tensor], x: &Tensor) -> Tensor {
        g.linear(x, &vars[self.w.0], &vars[self.b.0])
    }
}

#[derive(Debug, Clone)]
pub struct Conv2dLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dLayer {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        Self::with_gain(pb, name, cin, cout, kernel, stride, pad, 1.0)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_gain(
        pb: &mut ParamBuilder,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        gain: f64,
    ) -> Self {
        let fan_in = cin * kernel * kernel;
        pb.scoped(name, |pb| Self {
            w: pb.normal(
                "w",
                &[cout, cin, kernel, kernel],
                gain * (2.0 / fan_in as f64).sqrt(),
            ),
            b: pb.zeros("b", &[cout]),
            stride,
            pad,
        })
    }

    pub fn forward(&self, g: &Graph, vars: &[Tensor], x: &Tensor) -> Tensor {
        g.conv2d(x, &vars[self.w.0], &vars[self.b.0], self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct Conv3dLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: (usize, usize, usize),
    pub pad: (usize, usize, usize),
}

impl Conv3dLayer {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize, usize),
        stride: (usize, usize, usize),
        pad: (usize, usize, usize),
    ) -> Self {
        Self::with_gain(pb, name, cin, cout, kernel, stride, pad, 1.0)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_gain(
        pb: &mut ParamBuilder,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize, usize),
        stride: (usize, usize, usize),
        pad: (usize, usize, usize),
        gain: f64,
    ) -> Self {
        let fan_in = cin * kernel.0 * kernel.1 * kernel.2;
        pb.scoped(name, |pb| Self {
            w: pb.normal(
                "w",
                &[cout, cin, kernel.0, kernel.1, kernel.2],
                gain * (2.0 / fan_in as f64).sqrt(),
            ),
            b: pb.zeros("b", &[cout]),
            stride,
            pad,
        })
    }

    pub fn forward(&self, g: &Graph, vars: &[Tensor], x: &Tensor) -> Tensor {
        g.conv3d(x, &vars[self.w.0], &vars[self.b.0], self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct GroupNormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNormLayer {
    pub fn new(pb: &mut ParamBuilder, name: &str, channels: usize) -> Self {
        pb.scoped(name, |pb| Self {
            gamma: pb.ones("gamma", &[channels]),
            beta: pb.zeros("beta", &[channels]),
            groups: norm_groups(channels),
        })
    }

    pub fn forward(&self, g: &Graph, vars: &[Tensor], x: &Tensor) -> Tensor {
        g.group_norm(x, &vars[self.gamma.0], &vars[self.beta.0], self.groups, NORM_EPS)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormLayer {
    pub fn new(pb: &mut ParamBuilder, name: &str, dim: usize) -> Self {
        pb.scoped(name, |pb| Self {
            gamma: pb.ones("gamma", &[dim]),
            beta: pb.zeros("beta", &[dim]),
        })
    }

    pub fn forward(&self, g: &Graph, vars: &[Tensor], x: &Tensor) -> Tensor {
        g.layer_norm(x, &vars[self.gamma.0], &vars[self.beta.0], NORM_EPS)
    }
}

/// Sinusoidal timestep embedding followed by a two-layer MLP, producing the
/// vector injected into residual blocks.
#[derive(Debug, Clone)]
pub struct TimestepMlp {
    pub sin_dim: usize,
    pub l1: LinearLayer,
    pub l2: LinearLayer,
}

impl TimestepMlp {
    pub fn new(pb: &mut ParamBuilder, name: &str, sin_dim: usize, out_dim: usize) -> Self {
        pb.scoped(name, |pb| Self {
            sin_dim,
            l1: LinearLayer::new(pb, "l1", sin_dim, out_dim),
            l2: LinearLayer::new(pb, "l2", out_dim, out_dim),
        })
    }

    /// Embed one timestep per batch item.
    pub fn forward(&self, g: &Graph, vars: &[Tensor], ts: &[usize]) -> Tensor {
        let mut base = Array2::zeros((ts.len(), self.sin_dim));
        for (row, &t) in ts.iter().enumerate() {
            let emb = timestep_embedding(t, self.sin_dim).expect("even dim");
            base.row_mut(row).assign(&emb);
        }
        let base = g.constant(base.into_dyn());
        let h = self.l1.forward(g, vars, &base);
        let h = g.silu(&h);
        self.l2.forward(g, vars, &h)
    }
}

/// Residual block with group norm, SiLU, and additive embedding injection
/// between the two convolutions.
#[derive(Debug, Clone)]
pub struct ResBlock2d {
    norm1: GroupNormLayer,
    conv1: Conv2dLayer,
    emb_proj: Option<LinearLayer>,
    norm2: GroupNormLayer,
    conv2: Conv2dLayer,
    skip: Option<Conv2dLayer>,
}

impl ResBlock2d {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        cin: usize,
        cout: usize,
        emb_dim: Option<usize>,
    ) -> Self {
        pb.scoped(name, |pb| Self {
            norm1: GroupNormLayer::new(pb, "norm1", cin),
            conv1: Conv2dLayer::new(pb, "conv1", cin, cout, 3, 1, 1),
            emb_proj: emb_dim.map(|d| LinearLayer::new(pb, "emb", d, cout)),
            norm2: GroupNormLayer::new(pb, "norm2", cout),
            conv2: Conv2dLayer::new(pb, "conv2", cout, cout, 3, 1, 1),
            skip: (cin != cout).then(|| Conv2dLayer::new(pb, "skip", cin, cout, 1, 1, 0)),
        })
    }

    pub fn forward(&self, g: &Graph, vars: &[Tensor], x: &Tensor, emb: Option<&Tensor>) -> Tensor {
        let mut h = self.norm1.forward(g, vars, x);
        h = g.silu(&h);
        h = self.conv1.forward(g, vars, &h);
        if let (Some(proj), Some(emb)) = (&self.emb_proj, emb) {
            let v = proj.forward(g, vars, emb);
            h = g.add_channel_vec(&h, &v);
        }
        h = self.norm2.forward(g, vars, &h);
        h = g.silu(&h);
        h = self.conv2.forward(g, vars, &h);
        let skip = match &self.skip {
            Some(conv) => conv.forward(g, vars, x),
            None => x.clone(),
        };
        g.add(&h, &skip)
    }
}

#[derive(Debug, Clone)]
pub struct ResBlock3d {
    norm1: GroupNormLayer,
    conv1: Conv3dLayer,
    emb_proj: Option<LinearLayer>,
    norm2: GroupNormLayer,
    conv2: Conv3dLayer,
    skip: Option<Conv3dLayer>,
}

impl ResBlock3d {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        cin: usize,
        cout: usize,
        emb_dim: Option<usize>,
    ) -> Self {
        let k = (3, 3, 3);
        let s = (1, 1, 1);
        let p = (1, 1, 1);
        pb.scoped(name, |pb| Self {
            norm1: GroupNormLayer::new(pb, "norm1", cin),
            conv1: Conv3dLayer::new(pb, "conv1", cin, cout, k, s, p),
            emb_proj: emb_dim.map(|d| LinearLayer::new(pb, "emb", d, cout)),
            norm2: GroupNormLayer::new(pb, "norm2", cout),
            conv2: Conv3dLayer::new(pb, "conv2", cout, cout, k, s, p),
            skip: (cin != cout).then(|| Conv3dLayer::new(pb, "skip", cin, cout, (1, 1, 1), s, (0, 0, 0))),
        })
    }

    pub fn forward(&self, g: &Graph, vars: &[Tensor], x: &Tensor, emb: Option<&Tensor>) -> Tensor {
        let mut h = self.norm1.forward(g, vars, x);
        h = g.silu(&h);
        h = self.conv1.forward(g, vars, &h);
        if let (Some(proj), Some(emb)) = (&self.emb_proj, emb) {
            let v = proj.forward(g, vars, emb);
            h = g.add_channel_vec(&h, &v);
        }
        h = self.norm2.forward(g, vars, &h);
        h = g.silu(&h);
        h = self.conv2.forward(g, vars, &h);
        let skip = match &self.skip {
            Some(conv) => conv.forward(g, vars, x),
            None => x.clone(),
        };
        g.add(&h, &skip)
    }
}

/// Multi-head self-attention over a token sequence `(N, L, C)`.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub qkv: LinearLayer,
    pub out: LinearLayer,
    pub heads: usize,
    pub channels: usize,
}

impl MultiHeadAttention {
    pub fn new(pb: &mut ParamBuilder, name: &str, channels: usize, heads: usize) -> Self {
        assert!(channels % heads == 0, "channels {channels} not divisible by heads {heads}");
        pb.scoped(name, |pb| Self {
            qkv: LinearLayer::new(pb, "qkv", channels, 3 * channels),
            out: LinearLayer::with_gain(pb, "out", channels, channels, 0.5),
            heads,
            channels,
        })
    }

    pub fn forward(&self, g: &Graph, vars: &[Tensor], tokens: &Tensor) -> Tensor {
        let shape = tokens.shape().to_vec();
        assert_eq!(shape.len(), 3, "attention tokens must be (N, L, C)");
        let (n, l, c) = (shape[0], shape[1], shape[2]);
        assert_eq!(c, self.channels);

        let flat = g.reshape(tokens, &[n * l, c]);
        let qkv = self.qkv.forward(g, vars, &flat); // (N*L, 3C)
        let q = g.reshape(&g.slice_axis(&qkv, 1, 0, c), &[n, l, c]);
        let k = g.reshape(&g.slice_axis(&qkv, 1, c, c), &[n, l, c]);
        let v = g.reshape(&g.slice_axis(&qkv, 1, 2 * c, c), &[n, l, c]);
        let ctx = g.attention(&q, &k, &v, self.heads);
        let ctx = g.reshape(&ctx, &[n * l, c]);
        let out = self.out.forward(g, vars, &ctx);
        g.reshape(&out, &[n, l, c])
    }
}

/// Self-attention over the spatial positions of a `(B, C, H, W)` map,
/// wrapped in a pre-norm residual.
#[derive(Debug, Clone)]
pub struct SpatialAttention {
    norm: GroupNormLayer,
    mha: MultiHeadAttention,
}

impl SpatialAttention {
    pub fn new(pb: &mut ParamBuilder, name: &str, channels: usize, heads: usize) -> Self {
        pb.scoped(name, |pb| Self {
            norm: GroupNormLayer::new(pb, "norm", channels),
            mha: MultiHeadAttention::new(pb, "mha", channels, heads),
        })
    }

    pub fn forward(&self, g: &Graph, vars: &[Tensor], x: &Tensor) -> Tensor {
        let s = x.shape().to_vec();
        assert_eq!(s.len(), 4);
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let n = self.norm.forward(g, vars, x);
        let tokens = g.reshape(&n, &[b, c, h * w]);
        let tokens = g.permute(&tokens, &[0, 2, 1]); // (B, HW, C)
        let att = self.mha.forward(g, vars, &tokens);
        let att = g.permute(&att, &[0, 2, 1]);
        let att = g.reshape(&att, &[b, c, h, w]);
        g.add(x, &att)
    }
}

/// Self-attention along the time axis of a `(B, C, T, H, W)` volume: each
/// spatial position attends over its own temporal sequence.
#[derive(Debug, Clone)]
pub struct TemporalAttention {
    norm: GroupNormLayer,
    mha: MultiHeadAttention,
}

impl TemporalAttention {
    pub fn new(pb: &mut ParamBuilder, name: &str, channels: usize, heads: usize) -> Self {
        pb.scoped(name, |pb| Self {
            norm: GroupNormLayer::new(pb, "norm", channels),
            mha: MultiHeadAttention::new(pb, "mha", channels, heads),
        })
    }

    pub fn forward(&self, g: &Graph, vars: &[Tensor], x: &Tensor) -> Tensor {
        let s = x.shape().to_vec();
        assert_eq!(s.len(), 5);
        let (b, c, t, h, w) = (s[0], s[1], s[2], s[3], s[4]);
        let n = self.norm.forward(g, vars, x);
        let tokens = g.reshape(&n, &[b, c, t, h * w]);
        let tokens = g.permute(&tokens, &[0, 3, 2, 1]); // (B, HW, T, C)
        let tokens = g.reshape(&tokens, &[b * h * w, t, c]);
        let att = self.mha.forward(g, vars, &tokens);
        let att = g.reshape(&att, &[b, h * w, t, c]);
        let att = g.permute(&att, &[0, 3, 2, 1]);
        let att = g.reshape(&att, &[b, c, t, h, w]);
        g.add(x, &att)
    }
}

/// Learned additive position bias for a fixed token count.
#[derive(Debug, Clone)]
pub struct PositionEmbedding {
    pub table: ParamId,
    pub tokens: usize,
    pub dim: usize,
}

impl PositionEmbedding {
    pub fn new(pb: &mut ParamBuilder, name: &str, tokens: usize, dim: usize) -> Self {
        pb.scoped(name, |pb| Self {
            table: pb.normal("table", &[tokens * dim], 0.02),
            tokens,
            dim,
        })
    }

    pub fn forward(&self, g: &Graph, vars: &[Tensor], tokens: &Tensor) -> Tensor {
        let s = tokens.shape().to_vec();
        assert_eq!(s, [s[0], self.tokens, self.dim]);
        let flat = g.reshape(tokens, &[s[0], self.tokens * self.dim]);
        let biased = g.bias_channel(&flat, &vars[self.table.0]);
        g.reshape(&biased, &[s[0], self.tokens, self.dim])
    }
}

/// Extract non-overlapping `p x p` patches from `(B, 1, H, W)` into tokens
/// `(B, (H/p)*(W/p), p*p)`.
pub fn patchify(g: &Graph, x: &Tensor, p: usize) -> Tensor {
    let s = x.shape().to_vec();
    assert_eq!(s.len(), 4);
    assert_eq!(s[1], 1, "patchify expects a single channel");
    let (b, h, w) = (s[0], s[2], s[3]);
    assert!(h % p == 0 && w % p == 0, "patch size {p} must divide {h}x{w}");
    let (hp, wp) = (h / p, w / p);
    let t = g.reshape(x, &[b, hp, p, wp, p]);
    let t = g.permute(&t, &[0, 1, 3, 2, 4]); // (B, hp, wp, p, p)
    g.reshape(&t, &[b, hp * wp, p * p])
}

/// Broadcast helper: constants of a given shape.
pub fn zeros_like(g: &Graph, t: &Tensor) -> Tensor {
    g.constant(ndarray::ArrayD::zeros(IxDyn(t.shape())))
}
