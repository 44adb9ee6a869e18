//! A small reverse-mode autodiff engine and the network blocks built on it.
//!
//! The engine is deliberately minimal: `f64` arrays, a flat tape, and
//! exactly the operations the nowcasting networks need (convolutions in two
//! and three dimensions, group/layer norm, attention primitives, nearest
//! upsampling). Parallelism only ever partitions output elements across
//! threads, so every result is bit-identical regardless of thread count.

mod attn;
mod conv;
mod graph;
mod linalg;
mod norm;

pub mod blocks;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod unet2d;
pub mod unet3d;

pub use graph::{Gradients, Graph, Tensor};
pub use optim::{Adam, AdamConfig, Ema};
pub use params::{Param, ParamBuilder, ParamId, ParamSet};

/// Exposed for benchmarking only.
pub fn test_matmul(
    a: ndarray::ArrayView2<'_, f64>,
    b: ndarray::ArrayView2<'_, f64>,
    out: ndarray::ArrayViewMut2<'_, f64>,
) {
    linalg::matmul_into(a, b, out);
}

/// Largest divisor of `channels` not exceeding 8, used as the group count
/// for group normalization so tiny test configurations stay valid.
pub fn norm_groups(channels: usize) -> usize {
    for g in (1..=8usize.min(channels)).rev() {
        if channels % g == 0 {
            return g;
        }
    }
    1
}

#[cfg(test)]
mod op_gradients {
    use super::gradcheck::{central_diff, relative_error, sample_coords, Coord};
    use super::*;
    use ndarray::{ArrayD, IxDyn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> ArrayD<f64> {
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        ArrayD::from_shape_vec(IxDyn(shape), v).unwrap()
    }

    /// Check every coefficient of every parameter against central
    /// differences for an arbitrary scalar-valued graph function.
    fn check_all(params: ParamSet, f: impl Fn(&Graph, &[Tensor]) -> Tensor) {
        let mut params = params;
        // analytic gradients
        let g = Graph::new();
        let bound = params.bind(&g);
        let loss = f(&g, &bound);
        let mut grads = g.backward(&loss);
        let analytic: Vec<ArrayD<f64>> = bound
            .iter()
            .map(|t| grads.take(t).unwrap_or_else(|| ArrayD::zeros(t.data().raw_dim())))
            .collect();

        let eval = |ps: &ParamSet| {
            let g = Graph::inference();
            let bound = ps.bind(&g);
            f(&g, &bound).scalar()
        };
        for idx in 0..params.len() {
            let len = params.value(ParamId(idx)).len();
            for flat in 0..len {
                let coord = Coord { param: ParamId(idx), flat };
                let num = central_diff(&mut params, coord, eval);
                let ana = analytic[idx].as_slice().unwrap()[flat];
                let err = relative_error(ana, num);
                assert!(
                    err <= 5e-5,
                    "param {idx} coeff {flat}: analytic {ana} vs numeric {num} (err {err})"
                );
            }
        }
    }

    #[test]
    fn elementwise_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParamSet::default();
        ps.push("a", randn(&[3, 4], &mut rng));
        ps.push("b", randn(&[3, 4], &mut rng));
        check_all(ps, |g, t| {
            let prod = g.mul(&t[0], &t[1]);
            let s = g.silu(&prod);
            let th = g.tanh(&s);
            let diff = g.sub(&th, &t[1]);
            let sc = g.scale(&diff, 1.7);
            let sum = g.add(&sc, &t[0]);
            g.mean_all(&g.abs(&sum))
        });
    }

    #[test]
    fn shape_ops_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ps = ParamSet::default();
        ps.push("a", randn(&[2, 3, 4], &mut rng));
        ps.push("b", randn(&[2, 3, 4], &mut rng));
        check_all(ps, |g, t| {
            let cat = g.concat(1, &[&t[0], &t[1]]);
            let slc = g.slice_axis(&cat, 1, 1, 4);
            let perm = g.permute(&slc, &[2, 0, 1]);
            let flat = g.reshape(&perm, &[4, 8]);
            let sm = g.softmax_last(&flat);
            g.mean_all(&g.mul(&sm, &sm))
        });
    }

    #[test]
    fn linear_and_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamSet::default();
        ps.push("x", randn(&[5, 3], &mut rng));
        ps.push("w", randn(&[4, 3], &mut rng));
        ps.push("b", randn(&[4], &mut rng));
        check_all(ps, |g, t| {
            let y = g.linear(&t[0], &t[1], &t[2]);
            g.mean_all(&g.abs(&y))
        });
    }

    #[test]
    fn bmm_and_mean_spatial() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ps = ParamSet::default();
        ps.push("a", randn(&[3, 2, 4], &mut rng));
        ps.push("b", randn(&[3, 4, 5], &mut rng));
        check_all(ps, |g, t| {
            let y = g.bmm(&t[0], &t[1]);
            let pooled = g.mean_spatial(&y);
            g.mean_all(&g.mul(&pooled, &pooled))
        });
    }

    #[test]
    fn channel_injections() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ps = ParamSet::default();
        ps.push("x", randn(&[2, 3, 2, 2], &mut rng));
        ps.push("bias", randn(&[3], &mut rng));
        ps.push("vec", randn(&[2, 3], &mut rng));
        check_all(ps, |g, t| {
            let y = g.bias_channel(&t[0], &t[1]);
            let z = g.add_channel_vec(&y, &t[2]);
            g.mean_all(&g.mul(&z, &z))
        });
    }

    #[test]
    fn conv2d_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut ps = ParamSet::default();
        ps.push("x", randn(&[2, 3, 5, 6], &mut rng));
        ps.push("w", randn(&[4, 3, 3, 3], &mut rng));
        ps.push("b", randn(&[4], &mut rng));
        check_all(ps, |g, t| {
            let y = g.conv2d(&t[0], &t[1], &t[2], 1, 1);
            g.mean_all(&g.mul(&y, &y))
        });
    }

    #[test]
    fn conv2d_strided_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut ps = ParamSet::default();
        ps.push("x", randn(&[1, 2, 6, 6], &mut rng));
        ps.push("w", randn(&[3, 2, 3, 3], &mut rng));
        ps.push("b", randn(&[3], &mut rng));
        check_all(ps, |g, t| {
            let y = g.conv2d(&t[0], &t[1], &t[2], 2, 1);
            g.mean_all(&g.abs(&y))
        });
    }

    #[test]
    fn conv3d_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ps = ParamSet::default();
        ps.push("x", randn(&[1, 2, 3, 4, 4], &mut rng));
        ps.push("w", randn(&[3, 2, 3, 3, 3], &mut rng));
        ps.push("b", randn(&[3], &mut rng));
        check_all(ps, |g, t| {
            let y = g.conv3d(&t[0], &t[1], &t[2], (1, 1, 1), (1, 1, 1));
            g.mean_all(&g.mul(&y, &y))
        });
    }

    #[test]
    fn conv3d_spatial_stride_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut ps = ParamSet::default();
        ps.push("x", randn(&[1, 2, 3, 4, 4], &mut rng));
        ps.push("w", randn(&[2, 2, 3, 3, 3], &mut rng));
        ps.push("b", randn(&[2], &mut rng));
        check_all(ps, |g, t| {
            let y = g.conv3d(&t[0], &t[1], &t[2], (1, 2, 2), (1, 1, 1));
            g.mean_all(&g.abs(&y))
        });
    }

    #[test]
    fn group_norm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut ps = ParamSet::default();
        ps.push("x", randn(&[2, 4, 3, 3], &mut rng));
        ps.push("gamma", randn(&[4], &mut rng));
        ps.push("beta", randn(&[4], &mut rng));
        check_all(ps, |g, t| {
            let y = g.group_norm(&t[0], &t[1], &t[2], 2, 1e-5);
            g.mean_all(&g.mul(&y, &y))
        });
    }

    #[test]
    fn layer_norm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut ps = ParamSet::default();
        ps.push("x", randn(&[3, 5], &mut rng));
        ps.push("gamma", randn(&[5], &mut rng));
        ps.push("beta", randn(&[5], &mut rng));
        check_all(ps, |g, t| {
            let y = g.layer_norm(&t[0], &t[1], &t[2], 1e-5);
            g.mean_all(&g.mul(&y, &y))
        });
    }

    #[test]
    fn upsample_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut ps = ParamSet::default();
        ps.push("x", randn(&[1, 2, 3, 3], &mut rng));
        check_all(ps, |g, t| {
            let y = g.upsample2x_2d(&t[0]);
            g.mean_all(&g.mul(&y, &y))
        });
        let mut ps = ParamSet::default();
        ps.push("x", randn(&[1, 2, 2, 3, 3], &mut rng));
        check_all(ps, |g, t| {
            let y = g.upsample2x_spatial3d(&t[0]);
            g.mean_all(&g.mul(&y, &y))
        });
    }

    #[test]
    fn fan_out_accumulates() {
        // one tensor feeding several consumers must sum its gradients
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut ps = ParamSet::default();
        ps.push("x", randn(&[4, 4], &mut rng));
        check_all(ps, |g, t| {
            let a = g.silu(&t[0]);
            let b = g.tanh(&t[0]);
            let c = g.mul(&t[0], &a);
            let s1 = g.add(&a, &b);
            let s2 = g.add(&s1, &c);
            g.mean_all(&g.mul(&s2, &s2))
        });
    }

    #[test]
    fn sampled_coords_cover_all_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut ps = ParamSet::default();
        ps.push("a", randn(&[2, 2], &mut rng));
        ps.push("b", randn(&[3], &mut rng));
        let coords = sample_coords(&ps, 7, &mut rng);
        assert_eq!(coords.len(), 7);
        for c in coords {
            assert!(c.flat < ps.value(c.param).len());
        }
    }

    #[test]
    fn inference_graph_records_nothing() {
        let g = Graph::inference();
        let x = g.leaf(ArrayD::from_elem(IxDyn(&[2, 2]), 1.0));
        let y = g.silu(&x);
        assert!(y.node().is_none());
    }
}
