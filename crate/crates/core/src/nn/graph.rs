//! Reverse-mode automatic differentiation on `f64` arrays.
//!
//! A [`Graph`] records every operation on a tape. [`Tensor`] values hold
//! reference-counted array data plus an optional tape node; constants stay
//! off the tape, so inference graphs carry no bookkeeping. Calling
//! [`Graph::backward`] walks the tape once in reverse and accumulates
//! gradients for every tracked leaf.
//!
//! All data is kept in standard (row-major, contiguous) layout: shape ops
//! materialize their result, which keeps the op implementations simple and
//! the memory access patterns predictable.

use std::cell::RefCell;
use std::rc::Rc;

use ndarray::{ArrayD, Axis, IxDyn};

use super::linalg::matmul_into;

pub type NodeId = usize;

pub(crate) type GradFn = Box<dyn Fn(&ArrayD<f64>, &[bool]) -> Vec<Option<ArrayD<f64>>>>;

struct Node {
    parents: Vec<Option<NodeId>>,
    grad_fn: Option<GradFn>,
}

/// A value on (or off) the tape.
#[derive(Clone)]
pub struct Tensor {
    data: Rc<ArrayD<f64>>,
    node: Option<NodeId>,
}

impl Tensor {
    pub fn data(&self) -> &ArrayD<f64> {
        &self.data
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Extract the value of a zero-dimensional (scalar) tensor.
    pub fn scalar(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "scalar() on non-scalar tensor");
        *self.data.iter().next().expect("nonempty")
    }

    pub fn to_array(&self) -> ArrayD<f64> {
        self.data.as_ref().clone()
    }

    pub(crate) fn data_rc(&self) -> Rc<ArrayD<f64>> {
        Rc::clone(&self.data)
    }

    pub(crate) fn node(&self) -> Option<NodeId> {
        self.node
    }
}

/// The autodiff tape.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    recording: bool,
}

impl Graph {
    /// A recording graph for training.
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), recording: true }
    }

    /// A non-recording graph: every op produces constants. Use for sampling
    /// and other forward-only work.
    pub fn inference() -> Self {
        Self { nodes: RefCell::new(Vec::new()), recording: false }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, data: ArrayD<f64>) -> Tensor {
        Tensor { data: Rc::new(data), node: None }
    }

    /// A tracked leaf (parameter or differentiable input).
    pub fn leaf(&self, data: ArrayD<f64>) -> Tensor {
        if !self.recording {
            return self.constant(data);
        }
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { parents: Vec::new(), grad_fn: None });
        Tensor { data: Rc::new(data), node: Some(id) }
    }

    pub(crate) fn push_op(
        &self,
        data: ArrayD<f64>,
        parents: Vec<Option<NodeId>>,
        grad_fn: GradFn,
    ) -> Tensor {
        if !self.recording || parents.iter().all(Option::is_none) {
            return self.constant(data);
        }
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { parents, grad_fn: Some(grad_fn) });
        Tensor { data: Rc::new(data), node: Some(id) }
    }

    /// Walk the tape backwards from `loss` (which must be scalar) and return
    /// the accumulated leaf gradients.
    pub fn backward(&self, loss: &Tensor) -> Gradients {
        assert_eq!(loss.len(), 1, "backward requires a scalar loss");
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<ArrayD<f64>>> = (0..nodes.len()).map(|_| None).collect();
        let Some(loss_id) = loss.node else {
            return Gradients { grads };
        };
        grads[loss_id] = Some(ArrayD::from_elem(loss.data.raw_dim(), 1.0));
        for id in (0..=loss_id).rev() {
            let node = &nodes[id];
            let Some(grad_fn) = &node.grad_fn else {
                continue; // leaf: keep the accumulated gradient
            };
            let Some(gr) = grads[id].take() else {
                continue; // nothing flowed into this node
            };
            let need: Vec<bool> = node.parents.iter().map(Option::is_some).collect();
            let parent_grads = grad_fn(&gr, &need);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (slot, pg) in node.parents.iter().zip(parent_grads) {
                if let (Some(pid), Some(pg)) = (slot, pg) {
                    match &mut grads[*pid] {
                        Some(acc) => *acc += &pg,
                        empty => *empty = Some(pg),
                    }
                }
            }
        }
        Gradients { grads }
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients by tape node, produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    /// Remove and return the gradient accumulated for `t`, if any.
    pub fn take(&mut self, t: &Tensor) -> Option<ArrayD<f64>> {
        t.node.and_then(|id| self.grads.get_mut(id).and_then(Option::take))
    }
}

// ---------------------------------------------------------------------------
// elementwise and shape operations
// ---------------------------------------------------------------------------

impl Graph {
    pub fn add(&self, a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!(a.shape(), b.shape(), "add: shape mismatch");
        let data = a.data.as_ref() + b.data.as_ref();
        self.push_op(
            data,
            vec![a.node, b.node],
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| g.clone()),
                    need[1].then(|| g.clone()),
                ]
            }),
        )
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!(a.shape(), b.shape(), "sub: shape mismatch");
        let data = a.data.as_ref() - b.data.as_ref();
        self.push_op(
            data,
            vec![a.node, b.node],
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| g.clone()),
                    need[1].then(|| g.mapv(|v| -v)),
                ]
            }),
        )
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!(a.shape(), b.shape(), "mul: shape mismatch");
        let data = a.data.as_ref() * b.data.as_ref();
        let (da, db) = (Rc::clone(&a.data), Rc::clone(&b.data));
        self.push_op(
            data,
            vec![a.node, b.node],
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| g * db.as_ref()),
                    need[1].then(|| g * da.as_ref()),
                ]
            }),
        )
    }

    pub fn scale(&self, a: &Tensor, c: f64) -> Tensor {
        let data = a.data.mapv(|v| v * c);
        self.push_op(
            data,
            vec![a.node],
            Box::new(move |g, _| vec![Some(g.mapv(|v| v * c))]),
        )
    }

    pub fn silu(&self, a: &Tensor) -> Tensor {
        let data = a.data.mapv(|x| x * sigmoid(x));
        let src = Rc::clone(&a.data);
        self.push_op(
            data,
            vec![a.node],
            Box::new(move |g, _| {
                let mut out = src.as_ref().clone();
                out.zip_mut_with(g, |x, &gv| {
                    let s = sigmoid(*x);
                    *x = gv * s * (1.0 + *x * (1.0 - s));
                });
                vec![Some(out)]
            }),
        )
    }

    pub fn tanh(&self, a: &Tensor) -> Tensor {
        let data = a.data.mapv(f64::tanh);
        let out_rc = Rc::new(data);
        let cap = Rc::clone(&out_rc);
        let t = self.push_shared(
            out_rc,
            vec![a.node],
            Box::new(move |g, _| {
                let mut d = cap.as_ref().clone();
                d.zip_mut_with(g, |y, &gv| *y = gv * (1.0 - *y * *y));
                vec![Some(d)]
            }),
        );
        t
    }

    pub fn abs(&self, a: &Tensor) -> Tensor {
        let data = a.data.mapv(f64::abs);
        let src = Rc::clone(&a.data);
        self.push_op(
            data,
            vec![a.node],
            Box::new(move |g, _| {
                let mut out = src.as_ref().clone();
                out.zip_mut_with(g, |x, &gv| *x = gv * sign(*x));
                vec![Some(out)]
            }),
        )
    }

    /// Mean over every element, producing a scalar (0-dim) tensor.
    pub fn mean_all(&self, a: &Tensor) -> Tensor {
        let n = a.len() as f64;
        let mean = a.data.iter().sum::<f64>() / n;
        let shape = a.data.raw_dim();
        self.push_op(
            ArrayD::from_elem(IxDyn(&[]), mean),
            vec![a.node],
            Box::new(move |g, _| {
                let gv = *g.iter().next().expect("scalar grad");
                vec![Some(ArrayD::from_elem(shape.clone(), gv / n))]
            }),
        )
    }

    pub fn reshape(&self, a: &Tensor, shape: &[usize]) -> Tensor {
        let data = a
            .data
            .as_ref()
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape: incompatible shape");
        let orig = a.data.raw_dim();
        self.push_op(
            data,
            vec![a.node],
            Box::new(move |g, _| {
                vec![Some(
                    g.clone().into_shape_with_order(orig.clone()).expect("reshape grad"),
                )]
            }),
        )
    }

    pub fn permute(&self, a: &Tensor, axes: &[usize]) -> Tensor {
        let data = a
            .data
            .view()
            .permuted_axes(IxDyn(axes))
            .as_standard_layout()
            .to_owned();
        let mut inverse = vec![0usize; axes.len()];
        for (i, &ax) in axes.iter().enumerate() {
            inverse[ax] = i;
        }
        self.push_op(
            data,
            vec![a.node],
            Box::new(move |g, _| {
                vec![Some(
                    g.view()
                        .permuted_axes(IxDyn(&inverse))
                        .as_standard_layout()
                        .to_owned(),
                )]
            }),
        )
    }

    pub fn concat(&self, axis: usize, parts: &[&Tensor]) -> Tensor {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|t| t.data.view()).collect();
        let data = ndarray::concatenate(Axis(axis), &views)
            .expect("concat: incompatible shapes")
            .as_standard_layout()
            .to_owned();
        let extents: Vec<usize> = parts.iter().map(|t| t.shape()[axis]).collect();
        let nodes: Vec<Option<NodeId>> = parts.iter().map(|t| t.node).collect();
        self.push_op(
            data,
            nodes,
            Box::new(move |g, need| {
                let mut out = Vec::with_capacity(extents.len());
                let mut offset = 0;
                for (k, &len) in extents.iter().enumerate() {
                    if need[k] {
                        let piece = g
                            .slice_axis(Axis(axis), ndarray::Slice::from(offset..offset + len))
                            .as_standard_layout()
                            .to_owned();
                        out.push(Some(piece));
                    } else {
                        out.push(None);
                    }
                    offset += len;
                }
                out
            }),
        )
    }

    pub fn slice_axis(&self, a: &Tensor, axis: usize, start: usize, len: usize) -> Tensor {
        let data = a
            .data
            .slice_axis(Axis(axis), ndarray::Slice::from(start..start + len))
            .as_standard_layout()
            .to_owned();
        let orig = a.data.raw_dim();
        self.push_op(
            data,
            vec![a.node],
            Box::new(move |g, _| {
                let mut out = ArrayD::zeros(orig.clone());
                out.slice_axis_mut(Axis(axis), ndarray::Slice::from(start..start + len))
                    .assign(g);
                vec![Some(out)]
            }),
        )
    }

    /// Mean over every axis after the first two: `(B, C, ...) -> (B, C)`.
    pub fn mean_spatial(&self, a: &Tensor) -> Tensor {
        let shape = a.shape().to_vec();
        assert!(shape.len() >= 3, "mean_spatial needs trailing axes");
        let (b, c) = (shape[0], shape[1]);
        let s: usize = shape[2..].iter().product();
        let flat = a
            .data
            .as_ref()
            .clone()
            .into_shape_with_order(IxDyn(&[b, c, s]))
            .expect("standard layout");
        let mut out = ArrayD::zeros(IxDyn(&[b, c]));
        for bi in 0..b {
            for ci in 0..c {
                let mut acc = 0.0;
                for k in 0..s {
                    acc += flat[[bi, ci, k]];
                }
                out[[bi, ci]] = acc / s as f64;
            }
        }
        let orig = a.data.raw_dim();
        self.push_op(
            out,
            vec![a.node],
            Box::new(move |g, _| {
                let mut d = ArrayD::zeros(IxDyn(&[b, c, s]));
                for bi in 0..b {
                    for ci in 0..c {
                        let gv = g[[bi, ci]] / s as f64;
                        for k in 0..s {
                            d[[bi, ci, k]] = gv;
                        }
                    }
                }
                vec![Some(d.into_shape_with_order(orig.clone()).expect("shape"))]
            }),
        )
    }

    /// Add a per-channel bias: `x (B, C, ...) + b (C)`.
    pub fn bias_channel(&self, x: &Tensor, b: &Tensor) -> Tensor {
        let shape = x.shape().to_vec();
        assert!(shape.len() >= 2);
        let (bsz, c) = (shape[0], shape[1]);
        assert_eq!(b.shape(), [c]);
        let s: usize = shape[2..].iter().product();
        let mut data = x.data.as_ref().clone();
        {
            let mut flat = data.view_mut().into_shape_with_order((bsz, c, s)).expect("layout");
            for bi in 0..bsz {
                for ci in 0..c {
                    let bias = b.data[[ci]];
                    flat.index_axis_mut(Axis(0), bi)
                        .index_axis_mut(Axis(0), ci)
                        .mapv_inplace(|v| v + bias);
                }
            }
        }
        self.push_op(
            data,
            vec![x.node, b.node],
            Box::new(move |g, need| {
                let gx = need[0].then(|| g.clone());
                let gb = need[1].then(|| {
                    let flat = g.view().into_shape_with_order((bsz, c, s)).expect("layout");
                    let mut acc = ArrayD::zeros(IxDyn(&[c]));
                    for bi in 0..bsz {
                        for ci in 0..c {
                            let mut sum = 0.0;
                            for k in 0..s {
                                sum += flat[[bi, ci, k]];
                            }
                            acc[[ci]] += sum;
                        }
                    }
                    acc
                });
                vec![gx, gb]
            }),
        )
    }

    /// Add a per-item channel vector: `x (B, C, ...) + v (B, C)` broadcast
    /// over the trailing axes. This is how timestep and conditioning
    /// embeddings are injected into residual blocks.
    pub fn add_channel_vec(&self, x: &Tensor, v: &Tensor) -> Tensor {
        let shape = x.shape().to_vec();
        assert!(shape.len() >= 2);
        let (bsz, c) = (shape[0], shape[1]);
        assert_eq!(v.shape(), [bsz, c], "add_channel_vec: vector shape");
        let s: usize = shape[2..].iter().product();
        let mut data = x.data.as_ref().clone();
        {
            let mut flat = data.view_mut().into_shape_with_order((bsz, c, s)).expect("layout");
            for bi in 0..bsz {
                for ci in 0..c {
                    let add = v.data[[bi, ci]];
                    flat.index_axis_mut(Axis(0), bi)
                        .index_axis_mut(Axis(0), ci)
                        .mapv_inplace(|val| val + add);
                }
            }
        }
        self.push_op(
            data,
            vec![x.node, v.node],
            Box::new(move |g, need| {
                let gx = need[0].then(|| g.clone());
                let gv = need[1].then(|| {
                    let flat = g.view().into_shape_with_order((bsz, c, s)).expect("layout");
                    let mut acc = ArrayD::zeros(IxDyn(&[bsz, c]));
                    for bi in 0..bsz {
                        for ci in 0..c {
                            let mut sum = 0.0;
                            for k in 0..s {
                                sum += flat[[bi, ci, k]];
                            }
                            acc[[bi, ci]] = sum;
                        }
                    }
                    acc
                });
                vec![gx, gv]
            }),
        )
    }

    /// Fully connected layer: `x (N, D_in) * w^T (D_in, D_out) + b`.
    pub fn linear(&self, x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
        let (n, din) = as2(x.shape());
        let (dout, din2) = as2(w.shape());
        assert_eq!(din, din2, "linear: input dim mismatch");
        assert_eq!(b.shape(), [dout]);
        let x2 = x.data.view().into_dimensionality::<ndarray::Ix2>().expect("2d");
        let w2 = w.data.view().into_dimensionality::<ndarray::Ix2>().expect("2d");
        let mut out = ndarray::Array2::<f64>::zeros((n, dout));
        matmul_into(x2.view(), w2.t(), out.view_mut());
        for mut row in out.rows_mut() {
            for (o, &bias) in row.iter_mut().zip(b.data.iter()) {
                *o += bias;
            }
        }
        let (xd, wd) = (Rc::clone(&x.data), Rc::clone(&w.data));
        self.push_op(
            out.into_dyn(),
            vec![x.node, w.node, b.node],
            Box::new(move |g, need| {
                let g2 = g.view().into_dimensionality::<ndarray::Ix2>().expect("2d");
                let x2 = xd.view().into_dimensionality::<ndarray::Ix2>().expect("2d");
                let w2 = wd.view().into_dimensionality::<ndarray::Ix2>().expect("2d");
                let gx = need[0].then(|| {
                    let mut out = ndarray::Array2::<f64>::zeros((n, din));
                    matmul_into(g2.view(), w2.view(), out.view_mut());
                    out.into_dyn()
                });
                let gw = need[1].then(|| {
                    let mut out = ndarray::Array2::<f64>::zeros((dout, din));
                    matmul_into(g2.t(), x2.view(), out.view_mut());
                    out.into_dyn()
                });
                let gb = need[2].then(|| g2.sum_axis(Axis(0)).into_dyn());
                vec![gx, gw, gb]
            }),
        )
    }

    /// Batched matrix multiply: `(N, P, Q) x (N, Q, R) -> (N, P, R)`.
    pub fn bmm(&self, a: &Tensor, b: &Tensor) -> Tensor {
        let (n, p, q) = as3(a.shape());
        let (n2, q2, r) = as3(b.shape());
        assert_eq!(n, n2, "bmm: batch mismatch");
        assert_eq!(q, q2, "bmm: inner dim mismatch");
        let a3 = a.data.view().into_dimensionality::<ndarray::Ix3>().expect("3d");
        let b3 = b.data.view().into_dimensionality::<ndarray::Ix3>().expect("3d");
        let mut out = ndarray::Array3::<f64>::zeros((n, p, r));
        for k in 0..n {
            let mut o = out.index_axis_mut(Axis(0), k);
            matmul_into(a3.index_axis(Axis(0), k), b3.index_axis(Axis(0), k), o.view_mut());
        }
        let (ad, bd) = (Rc::clone(&a.data), Rc::clone(&b.data));
        self.push_op(
            out.into_dyn(),
            vec![a.node, b.node],
            Box::new(move |g, need| {
                let g3 = g.view().into_dimensionality::<ndarray::Ix3>().expect("3d");
                let a3 = ad.view().into_dimensionality::<ndarray::Ix3>().expect("3d");
                let b3 = bd.view().into_dimensionality::<ndarray::Ix3>().expect("3d");
                let ga = need[0].then(|| {
                    let mut out = ndarray::Array3::<f64>::zeros((n, p, q));
                    for k in 0..n {
                        let mut o = out.index_axis_mut(Axis(0), k);
                        matmul_into(
                            g3.index_axis(Axis(0), k),
                            b3.index_axis(Axis(0), k).reversed_axes(),
                            o.view_mut(),
                        );
                    }
                    out.into_dyn()
                });
                let gb = need[1].then(|| {
                    let mut out = ndarray::Array3::<f64>::zeros((n, q, r));
                    for k in 0..n {
                        let mut o = out.index_axis_mut(Axis(0), k);
                        matmul_into(
                            a3.index_axis(Axis(0), k).reversed_axes(),
                            g3.index_axis(Axis(0), k),
                            o.view_mut(),
                        );
                    }
                    out.into_dyn()
                });
                vec![ga, gb]
            }),
        )
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&self, x: &Tensor) -> Tensor {
        let shape = x.shape().to_vec();
        let d = *shape.last().expect("softmax needs at least 1 axis");
        let rows = x.len() / d;
        let mut data = x.data.as_ref().clone();
        {
            let mut flat = data.view_mut().into_shape_with_order((rows, d)).expect("layout");
            for mut row in flat.rows_mut() {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
        }
        let out_rc = Rc::new(data);
        let cap = Rc::clone(&out_rc);
        self.push_shared(
            out_rc,
            vec![x.node],
            Box::new(move |g, _| {
                let y = cap.view().into_shape_with_order((rows, d)).expect("layout");
                let gf = g.view().into_shape_with_order((rows, d)).expect("layout");
                let mut out = ndarray::Array2::<f64>::zeros((rows, d));
                for r in 0..rows {
                    let yr = y.row(r);
                    let gr = gf.row(r);
                    let dot: f64 = yr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
                    let mut or = out.row_mut(r);
                    for k in 0..d {
                        or[k] = yr[k] * (gr[k] - dot);
                    }
                }
                vec![Some(
                    out.into_dyn()
                        .into_shape_with_order(IxDyn(&g.shape().to_vec()))
                        .expect("shape"),
                )]
            }),
        )
    }

    /// Push a node whose output array is shared with the backward closure.
    pub(crate) fn push_shared(
        &self,
        data: Rc<ArrayD<f64>>,
        parents: Vec<Option<NodeId>>,
        grad_fn: GradFn,
    ) -> Tensor {
        if !self.recording || parents.iter().all(Option::is_none) {
            return Tensor { data, node: None };
        }
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { parents, grad_fn: Some(grad_fn) });
        Tensor { data, node: Some(id) }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn as2(shape: &[usize]) -> (usize, usize) {
    assert_eq!(shape.len(), 2, "expected 2-d shape, got {shape:?}");
    (shape[0], shape[1])
}

fn as3(shape: &[usize]) -> (usize, usize, usize) {
    assert_eq!(shape.len(), 3, "expected 3-d shape, got {shape:?}");
    (shape[0], shape[1], shape[2])
}
