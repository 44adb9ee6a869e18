//! Denoising-diffusion mechanics shared by the prediction and
//! super-resolution stages.
//!
//! The forward process corrupts clean data `x0` along a discrete schedule of
//! noise levels: `x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps` with
//! `abar_t` the running product of `alpha_t = 1 - beta_t`. The reverse
//! (ancestral) step inverts one level using a predicted noise `eps_hat`:
//!
//! ```text
//! x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t) + sigma_t * z
//! ```
//!
//! with `sigma_t = sqrt(beta_t)` and `z = 0` at the final step. Timesteps
//! are 1-based: `t` ranges over `[1, T]` and `t = 0` means clean data.

use ndarray::{Array1, ArrayD};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("step count must be at least 1")]
    EmptySchedule,
    #[error("beta endpoints ({start}, {end}) must satisfy 0 < start <= end < 1")]
    BadBetaRange { start: f64, end: f64 },
    #[error("timestep {t} outside schedule bounds [1, {steps}]")]
    BadTimestep { t: usize, steps: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("embedding dimension {0} must be even and positive")]
    OddEmbeddingDim(usize),
    #[error("denoiser returned shape {got:?}, expected {expected:?}")]
    DenoiserShape { got: Vec<usize>, expected: Vec<usize> },
}

/// Serializable schedule parameters; the realized sequences live in
/// [`NoiseSchedule`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: 1000, beta_start: 1e-4, beta_end: 0.02 }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule, DiffusionError> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

/// The discrete beta/alpha-bar sequences governing forward and reverse
/// diffusion.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear beta schedule, inclusive of both endpoints.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, DiffusionError> {
        if steps == 0 {
            return Err(DiffusionError::EmptySchedule);
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(DiffusionError::BadBetaRange { start: beta_start, end: beta_end });
        }
        let betas: Vec<f64> = if steps == 1 {
            vec![beta_start]
        } else {
            (0..steps)
                .map(|i| {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                })
                .collect()
        };
        Ok(Self::from_betas(betas))
    }

    fn from_betas(betas: Vec<f64>) -> Self {
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut product = 1.0;
        for &a in &alphas {
            product *= a;
            alpha_bars.push(product);
        }
        Self { betas, alphas, alpha_bars }
    }

    pub fn step_count(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<(), DiffusionError> {
        if t == 0 || t > self.step_count() {
            return Err(DiffusionError::BadTimestep { t, steps: self.step_count() });
        }
        Ok(())
    }

    /// `beta_t`, 1-based.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `alpha_t = 1 - beta_t`, 1-based.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// Running product of alphas up to `t`, 1-based.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }
}

fn check_same_shape(a: &ArrayD<f64>, b: &ArrayD<f64>) -> Result<(), DiffusionError> {
    if a.shape() != b.shape() {
        return Err(DiffusionError::ShapeMismatch {
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Corrupt clean data to noise level `t`:
/// `sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps`.
pub fn forward_diffuse(
    x0: &ArrayD<f64>,
    t: usize,
    eps: &ArrayD<f64>,
    schedule: &NoiseSchedule,
) -> Result<ArrayD<f64>, DiffusionError> {
    schedule.check(t)?;
    check_same_shape(x0, eps)?;
    let abar = schedule.alpha_bar(t);
    let (ca, cb) = (abar.sqrt(), (1.0 - abar).sqrt());
    let mut out = x0.mapv(|v| v * ca);
    out.zip_mut_with(eps, |o, &e| *o += cb * e);
    Ok(out)
}

/// One ancestral reverse step from level `t` to `t - 1`.
///
/// `z` is ignored (forced to zero) at `t = 1`, so the final step is the
/// deterministic posterior mean.
pub fn ddpm_step(
    x_t: &ArrayD<f64>,
    t: usize,
    eps_hat: &ArrayD<f64>,
    schedule: &NoiseSchedule,
    z: &ArrayD<f64>,
) -> Result<ArrayD<f64>, DiffusionError> {
    schedule.check(t)?;
    check_same_shape(x_t, eps_hat)?;
    check_same_shape(x_t, z)?;
    let beta = schedule.beta(t);
    let alpha = schedule.alpha(t);
    let abar = schedule.alpha_bar(t);
    let eps_coef = beta / (1.0 - abar).sqrt();
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let sigma = if t == 1 { 0.0 } else { beta.sqrt() };
    let mut out = ArrayD::zeros(x_t.raw_dim());
    ndarray::Zip::from(&mut out)
        .and(x_t)
        .and(eps_hat)
        .and(z)
        .for_each(|o, &x, &e, &n| {
            *o = inv_sqrt_alpha * (x - eps_coef * e) + sigma * n;
        });
    Ok(out)
}

/// Draw a standard-normal array of the given shape from `rng`.
pub fn standard_normal(shape: &[usize], rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    let n: usize = shape.iter().product();
    let values: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    ArrayD::from_shape_vec(ndarray::IxDyn(shape), values).expect("shape matches length")
}

/// Full ancestral sampling loop from pure noise down to a sample.
///
/// The denoiser receives the current state and the timestep; any
/// conditioning is captured inside the closure. Deterministic given the
/// random stream.
pub fn sample<E, F>(
    mut denoiser: F,
    shape: &[usize],
    schedule: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<ArrayD<f64>, E>
where
    E: From<DiffusionError>,
    F: FnMut(&ArrayD<f64>, usize) -> Result<ArrayD<f64>, E>,
{
    let mut x = standard_normal(shape, rng);
    for t in (1..=schedule.step_count()).rev() {
        let eps_hat = denoiser(&x, t)?;
        if eps_hat.shape() != x.shape() {
            return Err(DiffusionError::DenoiserShape {
                got: eps_hat.shape().to_vec(),
                expected: x.shape().to_vec(),
            }
            .into());
        }
        let z = if t > 1 {
            standard_normal(shape, rng)
        } else {
            ArrayD::zeros(x.raw_dim())
        };
        x = ddpm_step(&x, t, &eps_hat, schedule, &z).map_err(E::from)?;
    }
    Ok(x)
}

/// Standard sinusoidal timestep embedding: half sines, half cosines over
/// log-spaced frequencies with base period 10000.
pub fn timestep_embedding(t: usize, dim: usize) -> Result<Array1<f64>, DiffusionError> {
    if dim == 0 || dim % 2 != 0 {
        return Err(DiffusionError::OddEmbeddingDim(dim));
    }
    let half = dim / 2;
    let mut out = Array1::zeros(dim);
    for i in 0..half {
        let exponent = if half > 1 { i as f64 / (half - 1) as f64 } else { 0.0 };
        let freq = (-(10000f64.ln()) * exponent).exp();
        let arg = t as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    Ok(out)
}

/// Mean absolute difference between the drawn and predicted noise.
pub fn l1_eps_loss(eps: &ArrayD<f64>, eps_hat: &ArrayD<f64>) -> Result<f64, DiffusionError> {
    check_same_shape(eps, eps_hat)?;
    let n = eps.len() as f64;
    let sum: f64 = eps.iter().zip(eps_hat.iter()).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::linear(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars(), &[0.5]);
    }

    #[test]
    fn two_step_cumulative_product() {
        let s = NoiseSchedule::from_betas(vec![0.1, 0.2]);
        assert_abs_diff_eq!(s.alpha_bar(1), 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(s.alpha_bar(2), 0.72, epsilon = 1e-15);
    }

    #[test]
    fn ddpm_convention_endpoints() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        assert_eq!(s.beta(1), 1e-4);
        assert_eq!(s.beta(1000), 0.02);
        for t in 2..=1000 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1), "alpha_bar not strictly decreasing");
            assert!(s.beta(t) >= s.beta(t - 1), "beta not nondecreasing");
        }
        assert_abs_diff_eq!(s.alpha_bar(1), 1.0 - s.beta(1), epsilon = 0.0);
    }

    #[test]
    fn schedule_internal_consistency() {
        for steps in [1usize, 2, 64, 1000] {
            let s = NoiseSchedule::linear(steps, 1e-4, 0.02).unwrap();
            let mut product = 1.0;
            for t in 1..=steps {
                assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
                product *= s.alpha(t);
                assert!(
                    (s.alpha_bar(t) - product).abs() <= 1e-12,
                    "alpha_bar inconsistent at t={t} (T={steps})"
                );
            }
        }
    }

    #[test]
    fn invalid_schedules_rejected() {
        assert!(matches!(NoiseSchedule::linear(0, 0.1, 0.2), Err(DiffusionError::EmptySchedule)));
        assert!(NoiseSchedule::linear(4, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::linear(4, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::linear(4, 0.1, 1.0).is_err());
    }

    fn arr(values: &[f64]) -> ArrayD<f64> {
        ArrayD::from_shape_vec(ndarray::IxDyn(&[values.len()]), values.to_vec()).unwrap()
    }

    #[test]
    fn forward_diffuse_identity_endpoints() {
        // alpha_bar == 1 cannot be hit by a valid schedule, but beta close to
        // zero approaches identity; check both limits by direct construction
        let s = NoiseSchedule::from_betas(vec![1.0]); // beta = 1 -> abar = 0
        let x0 = arr(&[0.3, -0.7]);
        let eps = arr(&[1.5, 2.5]);
        let out = forward_diffuse(&x0, 1, &eps, &s).unwrap();
        assert_eq!(out, eps);

        let s = NoiseSchedule::from_betas(vec![0.0]); // beta = 0 -> abar = 1
        let out = forward_diffuse(&x0, 1, &eps, &s).unwrap();
        assert_eq!(out, x0);
    }

    #[test]
    fn forward_diffuse_closed_form_value() {
        // abar = 0.25: with x0 = 1, eps = 1, x_t = 0.5 + sqrt(0.75)
        let s = NoiseSchedule::from_betas(vec![0.75]);
        let out = forward_diffuse(&arr(&[1.0]), 1, &arr(&[1.0]), &s).unwrap();
        assert_abs_diff_eq!(out[[0]], 1.3660254037844386, epsilon = 1e-12);
    }

    #[test]
    fn forward_diffuse_rejects_bad_inputs() {
        let s = NoiseSchedule::linear(4, 0.1, 0.2).unwrap();
        let x0 = arr(&[1.0, 2.0]);
        assert!(matches!(
            forward_diffuse(&x0, 5, &arr(&[0.0, 0.0]), &s),
            Err(DiffusionError::BadTimestep { t: 5, steps: 4 })
        ));
        assert!(matches!(
            forward_diffuse(&x0, 0, &arr(&[0.0, 0.0]), &s),
            Err(DiffusionError::BadTimestep { .. })
        ));
        assert!(matches!(
            forward_diffuse(&x0, 1, &arr(&[0.0]), &s),
            Err(DiffusionError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn ddpm_step_last_step_ignores_z() {
        let s = NoiseSchedule::linear(3, 0.1, 0.3).unwrap();
        let x = arr(&[0.5, -0.25]);
        let e = arr(&[0.1, 0.2]);
        let a = ddpm_step(&x, 1, &e, &s, &arr(&[100.0, -100.0])).unwrap();
        let b = ddpm_step(&x, 1, &e, &s, &arr(&[0.0, 0.0])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ddpm_step_inverts_forward_diffuse_at_t1() {
        let s = NoiseSchedule::linear(1, 0.37, 0.37).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x0 = standard_normal(&[3, 4], &mut rng);
        let eps = standard_normal(&[3, 4], &mut rng);
        let x1 = forward_diffuse(&x0, 1, &eps, &s).unwrap();
        let back = ddpm_step(&x1, 1, &eps, &s, &ArrayD::zeros(x0.raw_dim())).unwrap();
        for (a, b) in back.iter().zip(x0.iter()) {
            assert!((a - b).abs() <= 1e-9, "inversion drift: {a} vs {b}");
        }
    }

    #[test]
    fn ddpm_step_shape_contract() {
        let s = NoiseSchedule::linear(2, 0.1, 0.2).unwrap();
        let x = standard_normal(&[2, 3, 5], &mut ChaCha8Rng::seed_from_u64(0));
        let out = ddpm_step(&x, 2, &x, &s, &x).unwrap();
        assert_eq!(out.shape(), x.shape());
    }

    #[test]
    fn sample_single_step_closed_form() {
        // denoiser identically zero, T = 1: x0 = x_T / sqrt(alpha_1)
        let s = NoiseSchedule::linear(1, 0.19, 0.19).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let out: ArrayD<f64> = sample::<DiffusionError, _>(
            |x, _t| Ok(ArrayD::zeros(x.raw_dim())),
            &[2, 2],
            &s,
            &mut rng,
        )
        .unwrap();
        let mut rng2 = ChaCha8Rng::seed_from_u64(7);
        let x_t = standard_normal(&[2, 2], &mut rng2);
        let expected = x_t.mapv(|v| v / (1.0 - 0.19f64).sqrt());
        for (a, b) in out.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn sample_is_deterministic_given_seed() {
        let s = NoiseSchedule::linear(8, 0.01, 0.2).unwrap();
        let denoiser = |x: &ArrayD<f64>, t: usize| -> Result<ArrayD<f64>, DiffusionError> {
            Ok(x.mapv(|v| (v * 0.1).tanh() + t as f64 * 1e-3))
        };
        let a = sample(denoiser, &[4, 4], &s, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample(denoiser, &[4, 4], &s, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        let c = sample(denoiser, &[4, 4], &s, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sample_shape_contract_and_mismatch_abort() {
        let s = NoiseSchedule::linear(2, 0.1, 0.2).unwrap();
        let out = sample::<DiffusionError, _>(
            |x, _| Ok(x.clone()),
            &[16, 1, 32, 32],
            &s,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert_eq!(out.shape(), &[16, 1, 32, 32]);

        let bad = sample::<DiffusionError, _>(
            |_, _| Ok(ArrayD::zeros(ndarray::IxDyn(&[2, 2]))),
            &[3, 3],
            &s,
            &mut ChaCha8Rng::seed_from_u64(1),
        );
        assert!(matches!(bad, Err(DiffusionError::DenoiserShape { .. })));
    }

    #[test]
    fn embedding_basics() {
        let e = timestep_embedding(0, 8).unwrap();
        for i in 0..4 {
            assert_eq!(e[i], 0.0);
            assert_eq!(e[4 + i], 1.0);
        }
        assert!(matches!(timestep_embedding(1, 7), Err(DiffusionError::OddEmbeddingDim(7))));
        for t in 0..200 {
            let e = timestep_embedding(t, 16).unwrap();
            assert!(e.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn embeddings_pairwise_distinct() {
        let embeddings: Vec<Array1<f64>> =
            (1..=64).map(|t| timestep_embedding(t, 16).unwrap()).collect();
        for i in 0..embeddings.len() {
            for j in i + 1..embeddings.len() {
                let diff: f64 = (&embeddings[i] - &embeddings[j])
                    .iter()
                    .map(|v| v.abs())
                    .fold(0.0, f64::max);
                assert!(diff > 1e-9, "t={} and t={} collide", i + 1, j + 1);
            }
        }
    }

    #[test]
    fn l1_loss_values() {
        let a = arr(&[0.0, 0.0, 0.0]);
        let b = arr(&[1.0, 1.0, 1.0]);
        assert_eq!(l1_eps_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(l1_eps_loss(&a, &b).unwrap(), 1.0);
        assert!(l1_eps_loss(&a, &arr(&[1.0])).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = standard_normal(&[4, 4], &mut rng);
        let y = standard_normal(&[4, 4], &mut rng);
        let got = l1_eps_loss(&x, &y).unwrap();
        let mut acc = 0.0;
        for (a, b) in x.iter().zip(y.iter()) {
            acc += (a - b).abs();
        }
        assert!((got - acc / 16.0).abs() <= 1e-12);
    }

    #[test]
    fn forward_marginal_statistics() {
        // empirical mean within 1% of sqrt(abar) * x0, variance within 2%
        // of (1 - abar), over 1e5 draws at a fixed seed
        let s = NoiseSchedule::linear(64, 1e-4, 0.02).unwrap();
        let t = 32;
        let abar = s.alpha_bar(t);
        let x0 = arr(&[2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let eps = standard_normal(&[1], &mut rng);
            let xt = forward_diffuse(&x0, t, &eps, &s).unwrap()[[0]];
            sum += xt;
            sum_sq += xt * xt;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let expected_mean = abar.sqrt() * 2.0;
        let expected_var = 1.0 - abar;
        assert!(
            (mean - expected_mean).abs() <= 0.01 * expected_mean.abs(),
            "mean {mean} vs {expected_mean}"
        );
        assert!(
            (var - expected_var).abs() <= 0.02 * expected_var,
            "var {var} vs {expected_var}"
        );
    }
}
