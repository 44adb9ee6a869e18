//! 2D and 3D convolutions via im2col plus GEMM.
//!
//! Columns are laid out `(C * kernel, B * positions)`: each kernel tap owns
//! a contiguous row, so im2col writes and GEMM packing both stream through
//! memory, and the forward product `w2 (O, K) x col (K, B*P)` runs in the
//! wide orientation the GEMM kernel likes. col2im parallelizes over the
//! batch via disjoint column ranges.

use ndarray::{Array2, ArrayD, Axis, IxDyn};
use rayon::prelude::*;

use super::graph::{Graph, Tensor};
use super::linalg::matmul_into;

#[derive(Clone, Copy)]
struct Geom {
    b: usize,
    c: usize,
    d: usize,
    h: usize,
    w: usize,
    o: usize,
    kd: usize,
    kh: usize,
    kw: usize,
    stride: (usize, usize, usize),
    pad: (usize, usize, usize),
    dout: usize,
    ho: usize,
    wo: usize,
    /// number of spatial axes in the public tensor layout (2 or 3)
    rank: usize,
}

impl Geom {
    fn positions(&self) -> usize {
        self.dout * self.ho * self.wo
    }
    fn k(&self) -> usize {
        self.c * self.kd * self.kh * self.kw
    }
    fn in_volume(&self) -> usize {
        self.d * self.h * self.w
    }
}

fn out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    assert!(
        input + 2 * pad >= kernel,
        "convolution kernel {kernel} larger than padded input {input}+2*{pad}"
    );
    (input + 2 * pad - kernel) / stride + 1
}

/// Fill `col (K, B*P)`; each row streams over output positions.
fn im2col(x: &ArrayD<f64>, g: Geom) -> Array2<f64> {
    let p = g.positions();
    let k = g.k();
    let xs = x.as_slice().expect("standard layout");
    let mut col = Array2::<f64>::zeros((k, g.b * p));
    let bp = g.b * p;
    let cs = col.as_slice_mut().expect("layout");
    // each row is one kernel tap of one input channel
    cs.par_chunks_mut(bp).enumerate().for_each(|(row, dst)| {
        let kx = row % g.kw;
        let ky = (row / g.kw) % g.kh;
        let kt = (row / (g.kw * g.kh)) % g.kd;
        let c = row / (g.kw * g.kh * g.kd);
        for b in 0..g.b {
            let xoff = (b * g.c + c) * g.in_volume();
            let boff = b * p;
            for t in 0..g.dout {
                let z = (t * g.stride.0 + kt) as isize - g.pad.0 as isize;
                if z < 0 || z >= g.d as isize {
                    continue;
                }
                for i in 0..g.ho {
                    let y = (i * g.stride.1 + ky) as isize - g.pad.1 as isize;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    let src_row = xoff + (z as usize * g.h + y as usize) * g.w;
                    let dst_row = boff + (t * g.ho + i) * g.wo;
                    if g.stride.2 == 1 {
                        // contiguous run: clip the j range once
                        let x0 = kx as isize - g.pad.2 as isize;
                        let j_lo = (-x0).max(0) as usize;
                        let j_hi = ((g.w as isize - x0).min(g.wo as isize)).max(j_lo as isize)
                            as usize;
                        if j_hi > j_lo {
                            let src0 = (src_row as isize + x0 + j_lo as isize) as usize;
                            dst[dst_row + j_lo..dst_row + j_hi]
                                .copy_from_slice(&xs[src0..src0 + (j_hi - j_lo)]);
                        }
                    } else {
                        for j in 0..g.wo {
                            let xx = (j * g.stride.2 + kx) as isize - g.pad.2 as isize;
                            if xx < 0 || xx >= g.w as isize {
                                continue;
                            }
                            dst[dst_row + j] = xs[src_row + xx as usize];
                        }
                    }
                }
            }
        }
    });
    col
}

/// Scatter-add `dcol (K, B*P)` back onto the input gradient; parallel over
/// batch items (disjoint output slices).
fn col2im(dcol: &Array2<f64>, g: Geom) -> ArrayD<f64> {
    let p = g.positions();
    let k = g.k();
    let bp = g.b * p;
    let mut shape = vec![g.b, g.c];
    if g.rank == 3 {
        shape.push(g.d);
    }
    shape.push(g.h);
    shape.push(g.w);
    let mut dx = ArrayD::<f64>::zeros(IxDyn(&[g.b, g.c * g.in_volume()]));
    let dcs = dcol.as_slice().expect("layout");
    dx.axis_chunks_iter_mut(Axis(0), 1)
        .into_iter()
        .enumerate()
        .collect::<Vec<_>>()
        .into_par_iter()
        .for_each(|(b, mut chunk)| {
            let xs = chunk.as_slice_mut().expect("chunk layout");
            for row in 0..k {
                let kx = row % g.kw;
                let ky = (row / g.kw) % g.kh;
                let kt = (row / (g.kw * g.kh)) % g.kd;
                let c = row / (g.kw * g.kh * g.kd);
                let src_base = row * bp + b * p;
                let xoff = c * g.in_volume();
                for t in 0..g.dout {
                    let z = (t * g.stride.0 + kt) as isize - g.pad.0 as isize;
                    if z < 0 || z >= g.d as isize {
                        continue;
                    }
                    for i in 0..g.ho {
                        let y = (i * g.stride.1 + ky) as isize - g.pad.1 as isize;
                        if y < 0 || y >= g.h as isize {
                            continue;
                        }
                        let dst_row = xoff + (z as usize * g.h + y as usize) * g.w;
                        let src_row = src_base + (t * g.ho + i) * g.wo;
                        for j in 0..g.wo {
                            let xx = (j * g.stride.2 + kx) as isize - g.pad.2 as isize;
                            if xx < 0 || xx >= g.w as isize {
                                continue;
                            }
                            xs[dst_row + xx as usize] += dcs[src_row + j];
                        }
                    }
                }
            }
        });
    dx.into_shape_with_order(IxDyn(&shape)).expect("geometry")
}

/// `out2 (O, B*P) = w2 (O, K) x col` plus per-row bias.
fn conv_gemm(
    col: &Array2<f64>,
    w2: ndarray::ArrayView2<'_, f64>,
    bias: &ArrayD<f64>,
) -> Array2<f64> {
    let (o, bp) = (w2.nrows(), col.ncols());
    let mut out2 = Array2::<f64>::zeros((o, bp));
    matmul_into(w2, col.view(), out2.view_mut());
    let bs = bias.as_slice().expect("bias layout");
    for (mut row, &add) in out2.rows_mut().into_iter().zip(bs.iter()) {
        if add != 0.0 {
            row.mapv_inplace(|v| v + add);
        }
    }
    out2
}

/// `(O, B*P)` rows into `(B, O, spatial)` layout.
fn scatter_out(out2: &Array2<f64>, b: usize, o: usize, spatial: &[usize]) -> ArrayD<f64> {
    let p: usize = spatial.iter().product();
    let mut shape = vec![b, o];
    shape.extend_from_slice(spatial);
    let mut out = ArrayD::<f64>::zeros(IxDyn(&shape));
    {
        let os = out.as_slice_mut().expect("layout");
        let is_ = out2.as_slice().expect("layout");
        for oi in 0..o {
            for bi in 0..b {
                let src = oi * (b * p) + bi * p;
                let dst = (bi * o + oi) * p;
                os[dst..dst + p].copy_from_slice(&is_[src..src + p]);
            }
        }
    }
    out
}

/// `(B, O, spatial)` gradient into `(O, B*P)` rows.
fn gather_grad(gr: &ArrayD<f64>, b: usize, o: usize, p: usize) -> Array2<f64> {
    let mut g2 = Array2::<f64>::zeros((o, b * p));
    {
        let gs = gr.as_slice().expect("layout");
        let g2s = g2.as_slice_mut().expect("layout");
        for oi in 0..o {
            for bi in 0..b {
                let src = (bi * o + oi) * p;
                let dst = oi * (b * p) + bi * p;
                g2s[dst..dst + p].copy_from_slice(&gs[src..src + p]);
            }
        }
    }
    g2
}

fn conv_impl(graph: &Graph, x: &Tensor, w: &Tensor, bias: &Tensor, g: Geom) -> Tensor {
    let col = im2col(x.data(), g);
    let w2 = w
        .data()
        .view()
        .into_shape_with_order((g.o, g.k()))
        .expect("kernel layout");
    let out2 = conv_gemm(&col, w2, bias.data());
    let spatial: Vec<usize> = if g.rank == 3 {
        vec![g.dout, g.ho, g.wo]
    } else {
        vec![g.ho, g.wo]
    };
    let out = scatter_out(&out2, g.b, g.o, &spatial);
    let (xd, wd) = (x.data_rc(), w.data_rc());
    let wshape = w.shape().to_vec();
    graph.push_op(
        out,
        vec![x.node(), w.node(), bias.node()],
        Box::new(move |gr, need| {
            let p = g.positions();
            let k = g.k();
            let g2 = gather_grad(gr, g.b, g.o, p);
            let w2 = wd.view().into_shape_with_order((g.o, k)).expect("layout");
            let gx = need[0].then(|| {
                let mut dcol = Array2::<f64>::zeros((k, g.b * p));
                matmul_into(w2.t(), g2.view(), dcol.view_mut());
                col2im(&dcol, g)
            });
            let gw = need[1].then(|| {
                // accumulate as (K, O) so the wide col operand packs from
                // contiguous memory, then transpose the small result
                let col = im2col(&xd, g);
                let mut dwt = Array2::<f64>::zeros((k, g.o));
                matmul_into(col.view(), g2.t(), dwt.view_mut());
                dwt.t()
                    .as_standard_layout()
                    .to_owned()
                    .into_dyn()
                    .into_shape_with_order(IxDyn(&wshape))
                    .expect("shape")
            });
            let gb = need[2].then(|| g2.sum_axis(Axis(1)).into_dyn());
            vec![gx, gw, gb]
        }),
    )
}

impl Graph {
    /// 2D convolution: `x (B, C, H, W)` with kernel `w (O, C, kh, kw)`.
    pub fn conv2d(
        &self,
        x: &Tensor,
        w: &Tensor,
        bias: &Tensor,
        stride: usize,
        pad: usize,
    ) -> Tensor {
        let xs = x.shape();
        let ws = w.shape();
        assert_eq!(xs.len(), 4, "conv2d input must be (B, C, H, W)");
        assert_eq!(ws.len(), 4, "conv2d kernel must be (O, C, kh, kw)");
        assert_eq!(xs[1], ws[1], "conv2d channel mismatch");
        let g = Geom {
            b: xs[0],
            c: xs[1],
            d: 1,
            h: xs[2],
            w: xs[3],
            o: ws[0],
            kd: 1,
            kh: ws[2],
            kw: ws[3],
            stride: (1, stride, stride),
            pad: (0, pad, pad),
            dout: 1,
            ho: out_len(xs[2], ws[2], stride, pad),
            wo: out_len(xs[3], ws[3], stride, pad),
            rank: 2,
        };
        assert_eq!(bias.shape(), [g.o], "conv2d bias shape");
        conv_impl(self, x, w, bias, g)
    }

    /// 3D convolution: `x (B, C, D, H, W)` with kernel `w (O, C, kd, kh, kw)`.
    pub fn conv3d(
        &self,
        x: &Tensor,
        w: &Tensor,
        bias: &Tensor,
        stride: (usize, usize, usize),
        pad: (usize, usize, usize),
    ) -> Tensor {
        let xs = x.shape();
        let ws = w.shape();
        assert_eq!(xs.len(), 5, "conv3d input must be (B, C, D, H, W)");
        assert_eq!(ws.len(), 5, "conv3d kernel must be (O, C, kd, kh, kw)");
        assert_eq!(xs[1], ws[1], "conv3d channel mismatch");
        let g = Geom {
            b: xs[0],
            c: xs[1],
            d: xs[2],
            h: xs[3],
            w: xs[4],
            o: ws[0],
            kd: ws[2],
            kh: ws[3],
            kw: ws[4],
            stride,
            pad,
            dout: out_len(xs[2], ws[2], stride.0, pad.0),
            ho: out_len(xs[3], ws[3], stride.1, pad.1),
            wo: out_len(xs[4], ws[4], stride.2, pad.2),
            rank: 3,
        };
        assert_eq!(bias.shape(), [g.o], "conv3d bias shape");
        conv_impl(self, x, w, bias, g)
    }
}
