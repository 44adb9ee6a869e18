//! Group/layer normalization and nearest-neighbor upsampling.

use ndarray::{ArrayD, IxDyn};

use super::graph::{Graph, Tensor};

impl Graph {
    /// Group normalization over `(B, C, ...)` with affine per-channel
    /// parameters. Channels are split into `groups` contiguous groups;
    /// statistics pool over the channels of a group and all trailing axes.
    pub fn group_norm(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        beta: &Tensor,
        groups: usize,
        eps: f64,
    ) -> Tensor {
        let shape = x.shape().to_vec();
        assert!(shape.len() >= 3, "group_norm input needs trailing axes");
        let (b, c) = (shape[0], shape[1]);
        assert!(groups >= 1 && c % groups == 0, "channels {c} not divisible by groups {groups}");
        assert_eq!(gamma.shape(), [c]);
        assert_eq!(beta.shape(), [c]);
        let s: usize = shape[2..].iter().product();
        let cg = c / groups; // channels per group
        let n = (cg * s) as f64; // elements per group

        let xs = x.data().as_slice().expect("layout");
        let gs = gamma.data().as_slice().expect("layout");
        let bs = beta.data().as_slice().expect("layout");

        let mut normalized = vec![0.0; xs.len()];
        let mut out = vec![0.0; xs.len()];
        let mut inv_std = vec![0.0; b * groups];
        for bi in 0..b {
            for gi in 0..groups {
                let base = (bi * c + gi * cg) * s;
                let span = cg * s;
                let mut mean = 0.0;
                for k in 0..span {
                    mean += xs[base + k];
                }
                mean /= n;
                let mut var = 0.0;
                for k in 0..span {
                    let d = xs[base + k] - mean;
                    var += d * d;
                }
                var /= n;
                let istd = 1.0 / (var + eps).sqrt();
                inv_std[bi * groups + gi] = istd;
                for ci in 0..cg {
                    let ch = gi * cg + ci;
                    let row = base + ci * s;
                    for k in 0..s {
                        let y = (xs[row + k] - mean) * istd;
                        normalized[row + k] = y;
                        out[row + k] = gs[ch] * y + bs[ch];
                    }
                }
            }
        }

        let out = ArrayD::from_shape_vec(IxDyn(&shape), out).expect("shape");
        let gamma_d = gamma.data_rc();
        let shape_c = shape.clone();
        self.push_op(
            out,
            vec![x.node(), gamma.node(), beta.node()],
            Box::new(move |gr, need| {
                let grs = gr.as_slice().expect("layout");
                let gam = gamma_d.as_slice().expect("layout");
                let gx = need[0].then(|| {
                    let mut dx = vec![0.0; grs.len()];
                    for bi in 0..b {
                        for gi in 0..groups {
                            let base = (bi * c + gi * cg) * s;
                            let istd = inv_std[bi * groups + gi];
                            // ghat = upstream * gamma, pooled statistics
                            let mut mean_g = 0.0;
                            let mut mean_gy = 0.0;
                            for ci in 0..cg {
                                let ch = gi * cg + ci;
                                let row = base + ci * s;
                                for k in 0..s {
                                    let gh = grs[row + k] * gam[ch];
                                    mean_g += gh;
                                    mean_gy += gh * normalized[row + k];
                                }
                            }
                            mean_g /= n;
                            mean_gy /= n;
                            for ci in 0..cg {
                                let ch = gi * cg + ci;
                                let row = base + ci * s;
                                for k in 0..s {
                                    let gh = grs[row + k] * gam[ch];
                                    dx[row + k] =
                                        istd * (gh - mean_g - normalized[row + k] * mean_gy);
                                }
                            }
                        }
                    }
                    ArrayD::from_shape_vec(IxDyn(&shape_c), dx).expect("shape")
                });
                let ggamma = need[1].then(|| {
                    let mut dg = vec![0.0; c];
                    for bi in 0..b {
                        for ch in 0..c {
                            let row = (bi * c + ch) * s;
                            let mut acc = 0.0;
                            for k in 0..s {
                                acc += grs[row + k] * normalized[row + k];
                            }
                            dg[ch] += acc;
                        }
                    }
                    ArrayD::from_shape_vec(IxDyn(&[c]), dg).expect("shape")
                });
                let gbeta = need[2].then(|| {
                    let mut db = vec![0.0; c];
                    for bi in 0..b {
                        for ch in 0..c {
                            let row = (bi * c + ch) * s;
                            let mut acc = 0.0;
                            for k in 0..s {
                                acc += grs[row + k];
                            }
                            db[ch] += acc;
                        }
                    }
                    ArrayD::from_shape_vec(IxDyn(&[c]), db).expect("shape")
                });
                vec![gx, ggamma, gbeta]
            }),
        )
    }

    /// Layer normalization over the last axis with affine parameters.
    pub fn layer_norm(&self, x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Tensor {
        let shape = x.shape().to_vec();
        let d = *shape.last().expect("layer_norm needs an axis");
        assert_eq!(gamma.shape(), [d]);
        assert_eq!(beta.shape(), [d]);
        let rows = x.len() / d;
        let n = d as f64;

        let xs = x.data().as_slice().expect("layout");
        let gs = gamma.data().as_slice().expect("layout");
        let bs = beta.data().as_slice().expect("layout");
        let mut normalized = vec![0.0; xs.len()];
        let mut out = vec![0.0; xs.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let base = r * d;
            let mut mean = 0.0;
            for k in 0..d {
                mean += xs[base + k];
            }
            mean /= n;
            let mut var = 0.0;
            for k in 0..d {
                let dv = xs[base + k] - mean;
                var += dv * dv;
            }
            var /= n;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[r] = istd;
            for k in 0..d {
                let y = (xs[base + k] - mean) * istd;
                normalized[base + k] = y;
                out[base + k] = gs[k] * y + bs[k];
            }
        }

        let out = ArrayD::from_shape_vec(IxDyn(&shape), out).expect("shape");
        let gamma_d = gamma.data_rc();
        let shape_c = shape.clone();
        self.push_op(
            out,
            vec![x.node(), gamma.node(), beta.node()],
            Box::new(move |gr, need| {
                let grs = gr.as_slice().expect("layout");
                let gam = gamma_d.as_slice().expect("layout");
                let gx = need[0].then(|| {
                    let mut dx = vec![0.0; grs.len()];
                    for r in 0..rows {
                        let base = r * d;
                        let istd = inv_std[r];
                        let mut mean_g = 0.0;
                        let mut mean_gy = 0.0;
                        for k in 0..d {
                            let gh = grs[base + k] * gam[k];
                            mean_g += gh;
                            mean_gy += gh * normalized[base + k];
                        }
                        mean_g /= n;
                        mean_gy /= n;
                        for k in 0..d {
                            let gh = grs[base + k] * gam[k];
                            dx[base + k] = istd * (gh - mean_g - normalized[base + k] * mean_gy);
                        }
                    }
                    ArrayD::from_shape_vec(IxDyn(&shape_c), dx).expect("shape")
                });
                let ggamma = need[1].then(|| {
                    let mut dg = vec![0.0; d];
                    for r in 0..rows {
                        for k in 0..d {
                            dg[k] += grs[r * d + k] * normalized[r * d + k];
                        }
                    }
                    ArrayD::from_shape_vec(IxDyn(&[d]), dg).expect("shape")
                });
                let gbeta = need[2].then(|| {
                    let mut db = vec![0.0; d];
                    for r in 0..rows {
                        for k in 0..d {
                            db[k] += grs[r * d + k];
                        }
                    }
                    ArrayD::from_shape_vec(IxDyn(&[d]), db).expect("shape")
                });
                vec![gx, ggamma, gbeta]
            }),
        )
    }

    /// Nearest-neighbor 2x upsampling of `(B, C, H, W)`.
    pub fn upsample2x_2d(&self, x: &Tensor) -> Tensor {
        let s = x.shape().to_vec();
        assert_eq!(s.len(), 4);
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let xs = x.data().as_slice().expect("layout");
        let mut out = vec![0.0; b * c * 4 * h * w];
        let (h2, w2) = (2 * h, 2 * w);
        for bc in 0..b * c {
            let src = bc * h * w;
            let dst = bc * h2 * w2;
            for i in 0..h2 {
                for j in 0..w2 {
                    out[dst + i * w2 + j] = xs[src + (i / 2) * w + j / 2];
                }
            }
        }
        let out = ArrayD::from_shape_vec(IxDyn(&[b, c, h2, w2]), out).expect("shape");
        self.push_op(
            out,
            vec![x.node()],
            Box::new(move |gr, _| {
                let grs = gr.as_slice().expect("layout");
                let mut dx = vec![0.0; b * c * h * w];
                for bc in 0..b * c {
                    let src = bc * h2 * w2;
                    let dst = bc * h * w;
                    for i in 0..h2 {
                        for j in 0..w2 {
                            dx[dst + (i / 2) * w + j / 2] += grs[src + i * w2 + j];
                        }
                    }
                }
                vec![Some(ArrayD::from_shape_vec(IxDyn(&[b, c, h, w]), dx).expect("shape"))]
            }),
        )
    }

    /// Nearest-neighbor 2x upsampling of the two spatial axes of
    /// `(B, C, T, H, W)`; the time axis is untouched.
    pub fn upsample2x_spatial3d(&self, x: &Tensor) -> Tensor {
        let s = x.shape().to_vec();
        assert_eq!(s.len(), 5);
        let (b, c, t, h, w) = (s[0], s[1], s[2], s[3], s[4]);
        let xs = x.data().as_slice().expect("layout");
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![0.0; b * c * t * h2 * w2];
        for bct in 0..b * c * t {
            let src = bct * h * w;
            let dst = bct * h2 * w2;
            for i in 0..h2 {
                for j in 0..w2 {
                    out[dst + i * w2 + j] = xs[src + (i / 2) * w + j / 2];
                }
            }
        }
        let out = ArrayD::from_shape_vec(IxDyn(&[b, c, t, h2, w2]), out).expect("shape");
        self.push_op(
            out,
            vec![x.node()],
            Box::new(move |gr, _| {
                let grs = gr.as_slice().expect("layout");
                let mut dx = vec![0.0; b * c * t * h * w];
                for bct in 0..b * c * t {
                    let src = bct * h2 * w2;
                    let dst = bct * h * w;
                    for i in 0..h2 {
                        for j in 0..w2 {
                            dx[dst + (i / 2) * w + j / 2] += grs[src + i * w2 + j];
                        }
                    }
                }
                vec![Some(
                    ArrayD::from_shape_vec(IxDyn(&[b, c, t, h, w]), dx).expect("shape"),
                )]
            }),
        )
    }
}
