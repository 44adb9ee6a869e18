//! Fused multi-head scaled-dot-product attention.
//!
//! Projections stay outside as ordinary linear layers; this op takes the
//! already-projected `q`, `k`, `v` in `(N, L, C)` layout, splits `C` into
//! heads internally, and runs the score/softmax/context chain with one
//! rayon task per sequence. The attention matrix is retained for backward.

use std::rc::Rc;

use ndarray::{ArrayD, IxDyn};
use rayon::prelude::*;

use super::graph::{Graph, Tensor};

struct AttnDims {
    l: usize,
    c: usize,
    hd: usize,
}

/// Copy head `h` of sequence `n` from `(N, L, C)` into an `(L, hd)` buffer.
fn load_head(src: &[f64], d: &AttnDims, n: usize, h: usize, buf: &mut [f64]) {
    for l in 0..d.l {
        let off = (n * d.l + l) * d.c + h * d.hd;
        buf[l * d.hd..(l + 1) * d.hd].copy_from_slice(&src[off..off + d.hd]);
    }
}

fn store_head(dst: &mut [f64], d: &AttnDims, n: usize, h: usize, buf: &[f64]) {
    for l in 0..d.l {
        let off = (n * d.l + l) * d.c + h * d.hd;
        dst[off..off + d.hd].copy_from_slice(&buf[l * d.hd..(l + 1) * d.hd]);
    }
}

/// `out (L, hd) = att (L, L) x v (L, hd)`; `transpose_a` uses `att^T`.
fn small_matmul_lv(att: &[f64], v: &[f64], l: usize, hd: usize, transpose_a: bool, out: &mut [f64]) {
    out.fill(0.0);
    for i in 0..l {
        for j in 0..l {
            let a = if transpose_a { att[j * l + i] } else { att[i * l + j] };
            if a == 0.0 {
                continue;
            }
            let vrow = &v[j * hd..(j + 1) * hd];
            let orow = &mut out[i * hd..(i + 1) * hd];
            for t in 0..hd {
                orow[t] += a * vrow[t];
            }
        }
    }
}

/// `out (L, L) = a (L, hd) x b (L, hd)^T`.
fn small_matmul_ll(a: &[f64], b: &[f64], l: usize, hd: usize, out: &mut [f64]) {
    for i in 0..l {
        let arow = &a[i * hd..(i + 1) * hd];
        for j in 0..l {
            let brow = &b[j * hd..(j + 1) * hd];
            let mut acc = 0.0;
            for t in 0..hd {
                acc += arow[t] * brow[t];
            }
            out[i * l + j] = acc;
        }
    }
}

impl Graph {
    /// Multi-head attention over pre-projected `q`, `k`, `v` of shape
    /// `(N, L, C)` with `C = heads * head_dim`.
    pub fn attention(&self, q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Tensor {
        let shape = q.shape().to_vec();
        assert_eq!(shape.len(), 3, "attention expects (N, L, C)");
        assert_eq!(k.shape(), &shape[..], "attention k shape");
        assert_eq!(v.shape(), &shape[..], "attention v shape");
        let (n, l, c) = (shape[0], shape[1], shape[2]);
        assert!(c % heads == 0, "channels {c} not divisible by heads {heads}");
        let hd = c / heads;
        let scale = 1.0 / (hd as f64).sqrt();

        let qs = q.data().as_slice().expect("layout");
        let ks = k.data().as_slice().expect("layout");
        let vs = v.data().as_slice().expect("layout");
        let mut out = vec![0.0; n * l * c];
        let mut att = vec![0.0; n * heads * l * l];

        {
            let d = AttnDims { l, c, hd };
            let out_chunks = out.chunks_mut(l * c);
            let att_chunks = att.chunks_mut(heads * l * l);
            out_chunks
                .zip(att_chunks)
                .enumerate()
                .collect::<Vec<_>>()
                .into_par_iter()
                .for_each(|(ni, (out_n, att_n))| {
                    let mut qb = vec![0.0; l * hd];
                    let mut kb = vec![0.0; l * hd];
                    let mut vb = vec![0.0; l * hd];
                    let mut ctx = vec![0.0; l * hd];
                    for h in 0..heads {
                        load_head(qs, &d, ni, h, &mut qb);
                        load_head(ks, &d, ni, h, &mut kb);
                        load_head(vs, &d, ni, h, &mut vb);
                        let scores = &mut att_n[h * l * l..(h + 1) * l * l];
                        small_matmul_ll(&qb, &kb, l, hd, scores);
                        // scaled softmax per row
                        for i in 0..l {
                            let row = &mut scores[i * l..(i + 1) * l];
                            let mut max = f64::NEG_INFINITY;
                            for r in row.iter_mut() {
                                *r *= scale;
                                max = max.max(*r);
                            }
                            let mut sum = 0.0;
                            for r in row.iter_mut() {
                                *r = (*r - max).exp();
                                sum += *r;
                            }
                            for r in row.iter_mut() {
                                *r /= sum;
                            }
                        }
                        small_matmul_lv(scores, &vb, l, hd, false, &mut ctx);
                        // write into the head's column block of this sequence
                        for li in 0..l {
                            let off = li * c + h * hd;
                            out_n[off..off + hd].copy_from_slice(&ctx[li * hd..(li + 1) * hd]);
                        }
                    }
                });
        }

        let out = ArrayD::from_shape_vec(IxDyn(&shape), out).expect("shape");
        let att = Rc::new(att);
        let (qd, kd, vd) = (q.data_rc(), k.data_rc(), v.data_rc());
        self.push_op(
            out,
            vec![q.node(), k.node(), v.node()],
            Box::new(move |gr, need| {
                let d = AttnDims { l, c, hd };
                let grs = gr.as_slice().expect("layout");
                let qs = qd.as_slice().expect("layout");
                let ks = kd.as_slice().expect("layout");
                let vs = vd.as_slice().expect("layout");
                let att = att.as_ref();

                let mut dq = vec![0.0; n * l * c];
                let mut dk = vec![0.0; n * l * c];
                let mut dv = vec![0.0; n * l * c];
                {
                    let chunks: Vec<(usize, (&mut [f64], (&mut [f64], &mut [f64])))> = dq
                        .chunks_mut(l * c)
                        .zip(dk.chunks_mut(l * c).zip(dv.chunks_mut(l * c)))
                        .enumerate()
                        .collect();
                    chunks.into_par_iter().for_each(|(ni, (dq_n, (dk_n, dv_n)))| {
                        let local = AttnDims { l, c, hd };
                        let mut qb = vec![0.0; l * hd];
                        let mut kb = vec![0.0; l * hd];
                        let mut vb = vec![0.0; l * hd];
                        let mut gctx = vec![0.0; l * hd];
                        let mut datt = vec![0.0; l * l];
                        let mut hbuf = vec![0.0; l * hd];
                        for h in 0..heads {
                            load_head(qs, &d, ni, h, &mut qb);
                            load_head(ks, &d, ni, h, &mut kb);
                            load_head(vs, &d, ni, h, &mut vb);
                            for li in 0..l {
                                let off = (ni * l + li) * c + h * hd;
                                gctx[li * hd..(li + 1) * hd]
                                    .copy_from_slice(&grs[off..off + hd]);
                            }
                            let att_h = &att[(ni * heads + h) * l * l..(ni * heads + h + 1) * l * l];
                            // d_att = gctx x v^T
                            small_matmul_ll(&gctx, &vb, l, hd, &mut datt);
                            // softmax backward, folding in the scale
                            for i in 0..l {
                                let arow = &att_h[i * l..(i + 1) * l];
                                let drow = &mut datt[i * l..(i + 1) * l];
                                let mut dot = 0.0;
                                for j in 0..l {
                                    dot += arow[j] * drow[j];
                                }
                                for j in 0..l {
                                    drow[j] = arow[j] * (drow[j] - dot) * scale;
                                }
                            }
                            // d_q = d_scores x k
                            small_matmul_lv(&datt, &kb, l, hd, false, &mut hbuf);
                            store_head(dq_n, &local, 0, h, &hbuf);
                            // d_k = d_scores^T x q
                            small_matmul_lv(&datt, &qb, l, hd, true, &mut hbuf);
                            store_head(dk_n, &local, 0, h, &hbuf);
                            // d_v = att^T x gctx
                            small_matmul_lv(att_h, &gctx, l, hd, true, &mut hbuf);
                            store_head(dv_n, &local, 0, h, &hbuf);
                        }
                    });
                }
                let mk = |v: Vec<f64>| ArrayD::from_shape_vec(IxDyn(&[n, l, c]), v).expect("shape");
                vec![
                    need[0].then(|| mk(dq)),
                    need[1].then(|| mk(dk)),
                    need[2].then(|| mk(dv)),
                ]
            }),
        )
    }
}
