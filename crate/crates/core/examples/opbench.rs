//! Micro-timing of the engine ops at prediction-stage shapes.

use std::time::Instant;

use ndarray::{ArrayD, IxDyn};
use nowcast::nn::{Graph, ParamBuilder};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn randn(shape: &[usize], seed: u64) -> ArrayD<f64> {
    nowcast::diffusion::standard_normal(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn time_op(label: &str, mut f: impl FnMut()) {
    // warm up
    f();
    let t0 = Instant::now();
    let mut iters = 0;
    while t0.elapsed().as_secs_f64() < 0.5 {
        f();
        iters += 1;
    }
    println!("{label:<44} {:>9.3} ms", t0.elapsed().as_secs_f64() * 1e3 / iters as f64);
}

fn main() {
    let b = 4;
    // L0 conv3d: 16ch, 20 frames, 16x16
    let x = randn(&[b, 16, 20, 16, 16], 1);
    let w = randn(&[16, 16, 3, 3, 3], 2);
    let bias = ArrayD::zeros(IxDyn(&[16]));
    time_op("conv3d fwd 16->16 @20x16x16 b4", || {
        let g = Graph::inference();
        let xt = g.constant(x.clone());
        let wt = g.constant(w.clone());
        let bt = g.constant(bias.clone());
        let _ = g.conv3d(&xt, &wt, &bt, (1, 1, 1), (1, 1, 1));
    });
    time_op("conv3d fwd+bwd 16->16 @20x16x16 b4", || {
        let g = Graph::new();
        let xt = g.constant(x.clone());
        let wt = g.leaf(w.clone());
        let bt = g.leaf(bias.clone());
        let y = g.conv3d(&xt, &wt, &bt, (1, 1, 1), (1, 1, 1));
        let loss = g.mean_all(&g.abs(&y));
        let _ = g.backward(&loss);
    });
    time_op("conv3d fwd+bwd(+dx) 16->16", || {
        let g = Graph::new();
        let xt = g.leaf(x.clone());
        let wt = g.leaf(w.clone());
        let bt = g.leaf(bias.clone());
        let y = g.conv3d(&xt, &wt, &bt, (1, 1, 1), (1, 1, 1));
        let loss = g.mean_all(&g.abs(&y));
        let _ = g.backward(&loss);
    });

    // group norm at the same shape
    let gamma = ArrayD::from_elem(IxDyn(&[16]), 1.0);
    time_op("group_norm fwd+bwd @ (4,16,20,16,16)", || {
        let g = Graph::new();
        let xt = g.leaf(x.clone());
        let gt = g.leaf(gamma.clone());
        let bt = g.leaf(bias.clone());
        let y = g.group_norm(&xt, &gt, &bt, 8, 1e-5);
        let loss = g.mean_all(&g.abs(&y));
        let _ = g.backward(&loss);
    });

    time_op("silu fwd+bwd @ (4,16,20,16,16)", || {
        let g = Graph::new();
        let xt = g.leaf(x.clone());
        let y = g.silu(&xt);
        let loss = g.mean_all(&g.abs(&y));
        let _ = g.backward(&loss);
    });

    // temporal attention tokens: (B*H*W, T, C) = (1024, 20, 32)
    let mut pb = ParamBuilder::new(ChaCha8Rng::seed_from_u64(3));
    let mha = nowcast::nn::blocks::MultiHeadAttention::new(&mut pb, "mha", 32, 4);
    let params = pb.build();
    let tokens = randn(&[1024, 20, 32], 4);
    time_op("mha fwd (1024,20,32) h4", || {
        let g = Graph::inference();
        let vars = params.bind(&g);
        let t = g.constant(tokens.clone());
        let _ = mha.forward(&g, &vars, &t);
    });
    time_op("mha fwd+bwd (1024,20,32) h4", || {
        let g = Graph::new();
        let vars = params.bind(&g);
        let t = g.constant(tokens.clone());
        let y = mha.forward(&g, &vars, &t);
        let loss = g.mean_all(&g.abs(&y));
        let _ = g.backward(&loss);
    });

    // concat+slice+permute plumbing at volume shapes
    time_op("concat+slice @ (4,16,20,16,16)", || {
        let g = Graph::new();
        let a = g.leaf(x.clone());
        let bt = g.leaf(x.clone());
        let c = g.concat(1, &[&a, &bt]);
        let s = g.slice_axis(&c, 1, 8, 16);
        let loss = g.mean_all(&g.abs(&s));
        let _ = g.backward(&loss);
    });
}
