//! Decompose conv3d forward cost at the prediction-stage shape.
use std::time::Instant;
use ndarray::Array2;

fn time_part(label: &str, mut f: impl FnMut()) {
    f();
    let t0 = Instant::now();
    let mut iters = 0;
    while t0.elapsed().as_secs_f64() < 0.6 {
        f();
        iters += 1;
    }
    println!("{label:<36} {:>9.3} ms", t0.elapsed().as_secs_f64() * 1e3 / iters as f64);
}

fn main() {
    let (k, bp, o) = (432usize, 20480usize, 16usize);
    time_part("alloc+zero col (432 x 20480)", || {
        let col = Array2::<f64>::zeros((k, bp));
        std::hint::black_box(&col);
    });
    let col = Array2::<f64>::from_elem((k, bp), 0.5);
    let w2 = Array2::<f64>::from_elem((o, k), 0.1);
    time_part("gemm (16,432)x(432,20480) serial", || {
        let mut out = Array2::<f64>::zeros((o, bp));
        ndarray::linalg::general_mat_mul(1.0, &w2.view(), &col.view(), 0.0, &mut out.view_mut());
        std::hint::black_box(&out);
    });
    time_part("gemm via matmul_into (split)", || {
        let mut out = Array2::<f64>::zeros((o, bp));
        nowcast::nn::test_matmul(w2.view(), col.view(), out.view_mut());
        std::hint::black_box(&out);
    });
    // pure memory traffic: copy 70MB
    let src = vec![0.7f64; k * bp];
    time_part("memcpy 70MB", || {
        let dst = src.clone();
        std::hint::black_box(&dst);
    });
}
