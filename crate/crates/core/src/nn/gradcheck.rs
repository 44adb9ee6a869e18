//! Central-difference gradient verification.
//!
//! The checks perturb individual weight coefficients and compare the
//! resulting finite-difference slope against the analytic gradient from the
//! tape. They are used by the per-op unit tests and by the acceptance suite.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamSet};

/// A single scalar coefficient within a parameter set.
#[derive(Debug, Clone, Copy)]
pub struct Coord {
    pub param: ParamId,
    pub flat: usize,
}

/// Sample `count` distinct coefficients across all parameters.
pub fn sample_coords(params: &ParamSet, count: usize, rng: &mut ChaCha8Rng) -> Vec<Coord> {
    let total = params.coefficient_count();
    assert!(total > 0, "no coefficients to sample");
    let mut picked = std::collections::BTreeSet::new();
    while picked.len() < count.min(total) {
        picked.insert(rng.random_range(0..total));
    }
    picked
        .into_iter()
        .map(|mut flat| {
            for idx in 0..params.len() {
                let len = params.value(ParamId(idx)).len();
                if flat < len {
                    return Coord { param: ParamId(idx), flat };
                }
                flat -= len;
            }
            unreachable!("flat index within bounds")
        })
        .collect()
}

fn get(params: &ParamSet, c: Coord) -> f64 {
    params.value(c.param).as_slice().expect("layout")[c.flat]
}

fn set(params: &mut ParamSet, c: Coord, v: f64) {
    params.value_mut(c.param).as_slice_mut().expect("layout")[c.flat] = v;
}

/// Central finite difference of `f` along one coefficient.
pub fn central_diff(
    params: &mut ParamSet,
    coord: Coord,
    mut f: impl FnMut(&ParamSet) -> f64,
) -> f64 {
    let w0 = get(params, coord);
    let h = 1e-5 * w0.abs().max(1.0);
    set(params, coord, w0 + h);
    let up = f(params);
    set(params, coord, w0 - h);
    let down = f(params);
    set(params, coord, w0);
    (up - down) / (2.0 * h)
}

/// Relative error with a floor that keeps near-zero gradients comparable.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}
