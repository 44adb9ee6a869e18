//! Matrix-multiply helper with deterministic row-wise parallelism.

use ndarray::{ArrayView2, ArrayViewMut2, Axis};

/// `out = a * b`. Splits the larger output dimension across rayon threads,
/// so no thread re-packs the whole wide operand; every output element is
/// computed by exactly one thread with a fixed reduction order, making
/// results bit-identical regardless of thread count.
pub fn matmul_into(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, out: ArrayViewMut2<'_, f64>) {
    let (m, k) = a.dim();
    let (k2, n) = b.dim();
    assert_eq!(k, k2, "matmul: inner dimensions {k} vs {k2}");
    assert_eq!(out.dim(), (m, n), "matmul: output shape");
    let work = m * k * n;
    let threads = rayon::current_num_threads();
    if threads <= 1 || work < (1 << 18) || m.max(n) < 2 {
        ndarray::linalg::general_mat_mul(1.0, &a, &b, 0.0, &mut { out });
        return;
    }
    split(a, b, out, threads.min(m.max(n)));
}

fn split(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    mut out: ArrayViewMut2<'_, f64>,
    parts: usize,
) {
    if parts <= 1 {
        ndarray::linalg::general_mat_mul(1.0, &a, &b, 0.0, &mut out);
        return;
    }
    let (m, n) = out.dim();
    if m >= n {
        let mid = m / 2;
        let (a_top, a_bot) = a.split_at(Axis(0), mid);
        let (out_top, out_bot) = out.split_at(Axis(0), mid);
        rayon::join(
            || split(a_top, b, out_top, parts / 2),
            || split(a_bot, b, out_bot, parts - parts / 2),
        );
    } else {
        let mid = n / 2;
        let (b_left, b_right) = b.split_at(Axis(1), mid);
        let (out_left, out_right) = out.split_at(Axis(1), mid);
        rayon::join(
            || split(a, b_left, out_left, parts / 2),
            || split(a, b_right, out_right, parts - parts / 2),
        );
    }
}
