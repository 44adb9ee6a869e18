//! Ensemble forecast verification.
//!
//! All scores operate on rain-rate fields in mm/h:
//!
//! * [`crps_ensemble`] — continuous ranked probability score of the ensemble
//!   empirical CDF, averaged over pixels; lower is better.
//! * [`fss`] — fractions skill score of threshold exceedance over a square
//!   neighborhood; 1 is perfect.
//! * [`csi`] — critical success index (hits over hits+misses+false alarms).
//! * [`mse_norm`] — mean squared error after scaling both fields by a rate
//!   ceiling and clipping to `[0, 1]`.
//!
//! [`lead_time_table`] applies the full protocol to a 16-frame forecast,
//! scoring frames 1, 4, 8, 12 and 16 as lead times 5-80 minutes.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, ArrayView4, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: forecast {forecast:?} vs observation {observation:?}")]
    ShapeMismatch { forecast: Vec<usize>, observation: Vec<usize> },
    #[error("ensemble must have at least one member")]
    EmptyEnsemble,
    #[error("window must be odd and at least 1, got {0}")]
    BadWindow(usize),
    #[error("expected {expected} forecast frames, got {got}")]
    BadFrameCount { expected: usize, got: usize },
}

/// Lead times scored by the protocol, minutes.
pub const LEAD_MINUTES: [usize; 5] = [5, 20, 40, 60, 80];
/// 1-based forecast frame indices corresponding to [`LEAD_MINUTES`] at
/// 5-minute cadence.
pub const LEAD_FRAMES: [usize; 5] = [1, 4, 8, 12, 16];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    /// Exceedance threshold for CSI, mm/h.
    pub csi_threshold: f64,
    /// Exceedance threshold for FSS, mm/h.
    pub fss_threshold: f64,
    /// FSS neighborhood side, odd pixels.
    pub fss_window: usize,
    /// Rate ceiling used by the normalized MSE.
    pub max_rate: f64,
}

impl VerifyConfig {
    /// Low-threshold preset (exceedance above 0.06 mm/h).
    pub fn light_rain() -> Self {
        Self { csi_threshold: 0.06, fss_threshold: 0.06, fss_window: 9, max_rate: 128.0 }
    }

    /// High-threshold preset (exceedance above 1 mm/h).
    pub fn heavy_rain() -> Self {
        Self { csi_threshold: 1.0, fss_threshold: 1.0, fss_window: 9, max_rate: 128.0 }
    }
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self::light_rain()
    }
}

/// Per-lead-time scores for one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    rows: [MetricRow; 5],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub lead_min: usize,
    pub crps: f64,
    pub fss: f64,
    pub csi: f64,
    pub mse_norm: f64,
}

impl MetricTable {
    pub fn rows(&self) -> &[MetricRow; 5] {
        &self.rows
    }

    pub fn row(&self, lead_min: usize) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.lead_min == lead_min)
    }

    /// CSV serialization: header plus five data rows, 6-decimal fixed point.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lead_min,crps,fss,csi,mse_norm\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                r.lead_min, r.crps, r.fss, r.csi, r.mse_norm
            ));
        }
        out
    }
}

fn check_same_shape(f: &[usize], o: &[usize]) -> Result<(), MetricsError> {
    if f != o {
        return Err(MetricsError::ShapeMismatch { forecast: f.to_vec(), observation: o.to_vec() });
    }
    Ok(())
}

/// Ensemble CRPS against one observed field, averaged over pixels.
///
/// Per pixel this is the empirical-CDF estimator
/// `mean_i |x_i - y| - (1 / 2M^2) * sum_ij |x_i - x_j|`,
/// which equals the exact integral of the squared difference between the
/// ensemble CDF and the observation step function.
pub fn crps_ensemble(
    members: ArrayView3<'_, f64>,
    obs: ArrayView2<'_, f64>,
) -> Result<f64, MetricsError> {
    let (m, h, w) = members.dim();
    if m == 0 {
        return Err(MetricsError::EmptyEnsemble);
    }
    check_same_shape(&[h, w], obs.shape())?;
    let mut total = 0.0;
    let mut values = vec![0.0; m];
    for i in 0..h {
        for j in 0..w {
            for (k, v) in values.iter_mut().enumerate() {
                *v = members[[k, i, j]];
            }
            let y = obs[[i, j]];
            let mut term_obs = 0.0;
            let mut term_pairs = 0.0;
            for a in 0..m {
                term_obs += (values[a] - y).abs();
                for b in 0..m {
                    term_pairs += (values[a] - values[b]).abs();
                }
            }
            total += term_obs / m as f64 - term_pairs / (2.0 * (m * m) as f64);
        }
    }
    Ok(total / (h * w) as f64)
}

/// Neighborhood exceedance fractions by window mean with zero padding.
fn exceedance_fractions(field: ArrayView2<'_, f64>, threshold: f64, window: usize) -> Array2<f64> {
    let (h, w) = field.dim();
    let half = (window / 2) as i64;
    let denom = (window * window) as f64;
    let mut out = Array2::zeros((h, w));
    for i in 0..h as i64 {
        for j in 0..w as i64 {
            let mut count = 0.0;
            for di in -half..=half {
                let y = i + di;
                if y < 0 || y >= h as i64 {
                    continue;
                }
                for dj in -half..=half {
                    let x = j + dj;
                    if x < 0 || x >= w as i64 {
                        continue;
                    }
                    if field[[y as usize, x as usize]] > threshold {
                        count += 1.0;
                    }
                }
            }
            out[[i as usize, j as usize]] = count / denom;
        }
    }
    out
}

/// Fractions skill score of threshold exceedance.
///
/// Both fields are binarized at `threshold`, neighborhood fractions are
/// taken with a `window x window` mean (zero padded), and
/// `FSS = 1 - sum (Pf - Po)^2 / (sum Pf^2 + sum Po^2)`. When neither field
/// exceeds the threshold anywhere the score is defined as 1.
pub fn fss(
    forecast: ArrayView2<'_, f64>,
    obs: ArrayView2<'_, f64>,
    threshold: f64,
    window: usize,
) -> Result<f64, MetricsError> {
    check_same_shape(forecast.shape(), obs.shape())?;
    if window % 2 == 0 || window == 0 {
        return Err(MetricsError::BadWindow(window));
    }
    let pf = exceedance_fractions(forecast, threshold, window);
    let po = exceedance_fractions(obs, threshold, window);
    let num: f64 = pf.iter().zip(po.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = pf.iter().map(|a| a * a).sum::<f64>() + po.iter().map(|b| b * b).sum::<f64>();
    if den == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - num / den)
}

/// Critical success index of threshold exceedance; 1 when no pixel exceeds
/// the threshold in either field.
pub fn csi(
    forecast: ArrayView2<'_, f64>,
    obs: ArrayView2<'_, f64>,
    threshold: f64,
) -> Result<f64, MetricsError> {
    check_same_shape(forecast.shape(), obs.shape())?;
    let mut hits = 0u64;
    let mut misses = 0u64;
    let mut false_alarms = 0u64;
    for (&f, &o) in forecast.iter().zip(obs.iter()) {
        match (f > threshold, o > threshold) {
            (true, true) => hits += 1,
            (false, true) => misses += 1,
            (true, false) => false_alarms += 1,
            (false, false) => {}
        }
    }
    let denom = hits + misses + false_alarms;
    if denom == 0 {
        return Ok(1.0);
    }
    Ok(hits as f64 / denom as f64)
}

/// Mean squared error after dividing both fields by `max_rate` and clipping
/// to `[0, 1]`.
pub fn mse_norm(
    forecast: ArrayView2<'_, f64>,
    obs: ArrayView2<'_, f64>,
    max_rate: f64,
) -> Result<f64, MetricsError> {
    check_same_shape(forecast.shape(), obs.shape())?;
    assert!(max_rate > 0.0, "max_rate must be positive");
    let n = forecast.len() as f64;
    let sum: f64 = forecast
        .iter()
        .zip(obs.iter())
        .map(|(&f, &o)| {
            let a = (f / max_rate).clamp(0.0, 1.0);
            let b = (o / max_rate).clamp(0.0, 1.0);
            (a - b) * (a - b)
        })
        .sum();
    Ok(sum / n)
}

/// Score a 16-frame ensemble forecast at lead times 5-80 minutes.
///
/// CRPS uses all members; FSS, CSI and normalized MSE use the ensemble mean
/// field. Forecast frames are indexed 1-based, so frame 1 is the 5-minute
/// lead and frame 16 the 80-minute lead.
pub fn lead_time_table(
    ensemble: ArrayView4<'_, f64>,
    obs: ArrayView3<'_, f64>,
    config: &VerifyConfig,
) -> Result<MetricTable, MetricsError> {
    let (m, frames, h, w) = ensemble.dim();
    if m == 0 {
        return Err(MetricsError::EmptyEnsemble);
    }
    if frames != 16 {
        return Err(MetricsError::BadFrameCount { expected: 16, got: frames });
    }
    check_same_shape(&[frames, h, w], obs.shape())?;
    let mean = ensemble.mean_axis(Axis(0)).expect("nonempty ensemble");
    let mut rows = Vec::with_capacity(5);
    for (&frame, &lead) in LEAD_FRAMES.iter().zip(LEAD_MINUTES.iter()) {
        let idx = frame - 1;
        let members_frame = ensemble.index_axis(Axis(1), idx);
        let obs_frame = obs.index_axis(Axis(0), idx);
        let mean_frame = mean.index_axis(Axis(0), idx);
        rows.push(MetricRow {
            lead_min: lead,
            crps: crps_ensemble(members_frame, obs_frame)?,
            fss: fss(mean_frame, obs_frame, config.fss_threshold, config.fss_window)?,
            csi: csi(mean_frame, obs_frame, config.csi_threshold)?,
            mse_norm: mse_norm(mean_frame, obs_frame, config.max_rate)?,
        });
    }
    Ok(MetricTable { rows: rows.try_into().expect("exactly five leads") })
}

/// Baseline forecast: repeat the last context frame at every lead time.
pub fn persistence_forecast(context: ArrayView3<'_, f64>) -> Array3<f64> {
    let (n, h, w) = context.dim();
    assert!(n >= 1, "context must contain at least one frame");
    let last = context.index_axis(Axis(0), n - 1);
    let mut out = Array3::zeros((16, h, w));
    for k in 0..16 {
        out.index_axis_mut(Axis(0), k).assign(&last);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{arr2, Array3, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exact CRPS for one pixel: piecewise integral of the squared
    /// difference between the empirical CDF and the observation step.
    fn crps_exact_integral(members: &[f64], y: f64) -> f64 {
        let mut xs = members.to_vec();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = xs.len() as f64;
        // breakpoints: sorted members plus the observation
        let mut points = xs.clone();
        points.push(y);
        points.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut total = 0.0;
        for w in points.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            // CDF value and indicator are constant on (a, b)
            let mid = 0.5 * (a + b);
            let cdf = xs.iter().filter(|&&x| x <= mid).count() as f64 / m;
            let ind = if mid >= y { 1.0 } else { 0.0 };
            total += (cdf - ind).powi(2) * (b - a);
        }
        // tails: below min(points) both are 0 or 1 identically only if the
        // observation is inside; handle the outside-tail where CDF=0,ind=1
        // or CDF=1,ind=0 -- those segments are already covered because the
        // observation itself is a breakpoint and beyond the extreme points
        // the integrand is zero.
        total
    }

    fn splat(members: &[f64]) -> Array3<f64> {
        Array3::from_shape_vec((members.len(), 1, 1), members.to_vec()).unwrap()
    }

    #[test]
    fn crps_perfect_deterministic_forecast_is_zero() {
        let obs = arr2(&[[1.0, 2.0], [0.0, 5.0]]);
        let members = obs.clone().insert_axis(Axis(0));
        assert_eq!(crps_ensemble(members.view(), obs.view()).unwrap(), 0.0);
    }

    #[test]
    fn crps_two_member_bracket() {
        let members = splat(&[0.0, 2.0]);
        let obs = arr2(&[[1.0]]);
        assert_abs_diff_eq!(
            crps_ensemble(members.view(), obs.view()).unwrap(),
            0.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn crps_degenerate_ensemble_is_mae() {
        let members = splat(&[3.5, 3.5, 3.5]);
        let obs = arr2(&[[1.25]]);
        assert_abs_diff_eq!(
            crps_ensemble(members.view(), obs.view()).unwrap(),
            2.25,
            epsilon = 1e-12
        );
    }

    #[test]
    fn crps_matches_exact_integral_on_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let m = rng.random_range(1..=5);
            let members: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y = rng.random_range(-3.5..3.5);
            let got = crps_ensemble(splat(&members).view(), arr2(&[[y]]).view()).unwrap();
            let want = crps_exact_integral(&members, y);
            assert!(
                (got - want).abs() <= 1e-8,
                "estimator {got} vs integral {want} for {members:?}, y={y}"
            );
        }
    }

    #[test]
    fn crps_rejects_empty_and_mismatched() {
        let obs = arr2(&[[0.0]]);
        let empty = Array3::<f64>::zeros((0, 1, 1));
        assert!(matches!(
            crps_ensemble(empty.view(), obs.view()),
            Err(MetricsError::EmptyEnsemble)
        ));
        let members = splat(&[1.0]);
        let obs_big = arr2(&[[0.0, 1.0]]);
        assert!(matches!(
            crps_ensemble(members.view(), obs_big.view()),
            Err(MetricsError::ShapeMismatch { .. })
        ));
    }

    fn brute_force_fraction(field: &Array2<f64>, thr: f64, window: usize) -> Array2<f64> {
        let (h, w) = field.dim();
        let half = window as i64 / 2;
        Array2::from_shape_fn((h, w), |(i, j)| {
            let mut c = 0.0;
            for di in -half..=half {
                for dj in -half..=half {
                    let y = i as i64 + di;
                    let x = j as i64 + dj;
                    if y >= 0 && y < h as i64 && x >= 0 && x < w as i64
                        && field[[y as usize, x as usize]] > thr
                    {
                        c += 1.0;
                    }
                }
            }
            c / (window * window) as f64
        })
    }

    #[test]
    fn fss_identical_fields_score_one() {
        let f = arr2(&[[0.0, 2.0], [3.0, 0.01]]);
        assert_eq!(fss(f.view(), f.view(), 1.0, 3).unwrap(), 1.0);
    }

    #[test]
    fn fss_disjoint_exceedance_scores_zero() {
        let f = Array2::from_elem((4, 4), 0.0);
        let o = Array2::from_elem((4, 4), 2.0);
        assert_eq!(fss(f.view(), o.view(), 1.0, 3).unwrap(), 0.0);
    }

    #[test]
    fn fss_no_exceedance_anywhere_scores_one() {
        let z = Array2::from_elem((4, 4), 0.0);
        assert_eq!(fss(z.view(), z.view(), 1.0, 3).unwrap(), 1.0);
    }

    #[test]
    fn fss_even_window_rejected() {
        let z = Array2::from_elem((4, 4), 0.0);
        assert!(matches!(fss(z.view(), z.view(), 1.0, 4), Err(MetricsError::BadWindow(4))));
    }

    #[test]
    fn fss_matches_brute_force_fractions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let f = Array2::from_shape_fn((8, 8), |_| rng.random_range(0.0..2.0));
            let o = Array2::from_shape_fn((8, 8), |_| rng.random_range(0.0..2.0));
            let got = fss(f.view(), o.view(), 1.0, 3).unwrap();
            let pf = brute_force_fraction(&f, 1.0, 3);
            let po = brute_force_fraction(&o, 1.0, 3);
            let num: f64 = (&pf - &po).mapv(|d| d * d).sum();
            let den: f64 = pf.mapv(|v| v * v).sum() + po.mapv(|v| v * v).sum();
            let want = if den == 0.0 { 1.0 } else { 1.0 - num / den };
            assert!((got - want).abs() <= 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn csi_counts_contingency_table() {
        // 2x2 fields built to give hits=2, misses=1, false_alarms=1
        let f = arr2(&[[2.0, 2.0], [2.0, 0.0]]);
        let o = arr2(&[[2.0, 2.0], [0.0, 2.0]]);
        assert_abs_diff_eq!(csi(f.view(), o.view(), 1.0).unwrap(), 0.5, epsilon = 0.0);
    }

    #[test]
    fn csi_perfect_and_all_miss() {
        let o = arr2(&[[2.0, 0.0], [0.0, 2.0]]);
        assert_eq!(csi(o.view(), o.view(), 1.0).unwrap(), 1.0);
        let dry = Array2::from_elem((2, 2), 0.0);
        let wet = Array2::from_elem((2, 2), 2.0);
        assert_eq!(csi(dry.view(), wet.view(), 1.0).unwrap(), 0.0);
        // no exceedance anywhere scores 1 by convention
        assert_eq!(csi(dry.view(), dry.view(), 1.0).unwrap(), 1.0);
    }

    #[test]
    fn mse_norm_endpoints_and_recomputation() {
        let o = arr2(&[[128.0, 128.0]]);
        let f = arr2(&[[0.0, 0.0]]);
        assert_eq!(mse_norm(f.view(), o.view(), 128.0).unwrap(), 1.0);
        assert_eq!(mse_norm(o.view(), o.view(), 128.0).unwrap(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = Array2::from_shape_fn((6, 7), |_| rng.random_range(0.0..150.0));
        let o = Array2::from_shape_fn((6, 7), |_| rng.random_range(0.0..150.0));
        let got = mse_norm(f.view(), o.view(), 128.0).unwrap();
        let mut acc = 0.0;
        for (a, b) in f.iter().zip(o.iter()) {
            let d = (a / 128.0).clamp(0.0, 1.0) - (b / 128.0).clamp(0.0, 1.0);
            acc += d * d;
        }
        assert!((got - acc / 42.0).abs() <= 1e-12);
    }

    #[test]
    fn table_perfect_forecast() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let obs = Array3::from_shape_fn((16, 6, 6), |_| rng.random_range(0.0..8.0));
        let ens = obs.clone().insert_axis(Axis(0));
        let table = lead_time_table(ens.view(), obs.view(), &VerifyConfig::default()).unwrap();
        for row in table.rows() {
            assert_eq!(row.crps, 0.0);
            assert_eq!(row.fss, 1.0);
            assert_eq!(row.csi, 1.0);
            assert_eq!(row.mse_norm, 0.0);
        }
    }

    #[test]
    fn table_lead_mapping_is_pinned() {
        assert_eq!(LEAD_FRAMES, [1, 4, 8, 12, 16]);
        assert_eq!(LEAD_MINUTES, [5, 20, 40, 60, 80]);
        // scoring must read exactly those frames: make frame 4 (lead 20)
        // perfect and every other frame wrong, then check the row
        let obs = Array3::from_elem((16, 4, 4), 2.0);
        let mut member = Array3::from_elem((16, 4, 4), 9.0);
        member.index_axis_mut(Axis(0), 3).fill(2.0);
        let ens = member.insert_axis(Axis(0));
        let table = lead_time_table(ens.view(), obs.view(), &VerifyConfig::default()).unwrap();
        assert_eq!(table.row(20).unwrap().crps, 0.0);
        assert!(table.row(40).unwrap().crps > 0.0);
    }

    #[test]
    fn table_member_permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let obs = Array3::from_shape_fn((16, 5, 5), |_| rng.random_range(0.0..4.0));
        let ens = Array4::from_shape_fn((3, 16, 5, 5), |_| rng.random_range(0.0..4.0));
        let mut permuted = ens.clone();
        // swap members 0 and 2
        let m0 = ens.index_axis(Axis(0), 0).to_owned();
        let m2 = ens.index_axis(Axis(0), 2).to_owned();
        permuted.index_axis_mut(Axis(0), 0).assign(&m2);
        permuted.index_axis_mut(Axis(0), 2).assign(&m0);
        let cfg = VerifyConfig::default();
        let a = lead_time_table(ens.view(), obs.view(), &cfg).unwrap();
        let b = lead_time_table(permuted.view(), obs.view(), &cfg).unwrap();
        for (x, y) in a.rows().iter().zip(b.rows().iter()) {
            assert_abs_diff_eq!(x.crps, y.crps, epsilon = 1e-12);
            assert_abs_diff_eq!(x.fss, y.fss, epsilon = 1e-12);
            assert_abs_diff_eq!(x.csi, y.csi, epsilon = 1e-12);
            assert_abs_diff_eq!(x.mse_norm, y.mse_norm, epsilon = 1e-12);
        }
    }

    #[test]
    fn table_rejects_wrong_frame_count() {
        let obs = Array3::zeros((12, 4, 4));
        let ens = Array4::zeros((1, 12, 4, 4));
        assert!(matches!(
            lead_time_table(ens.view(), obs.view(), &VerifyConfig::default()),
            Err(MetricsError::BadFrameCount { expected: 16, got: 12 })
        ));
    }

    #[test]
    fn persistence_repeats_last_context_frame() {
        let context = Array3::from_shape_fn((4, 3, 3), |(t, i, j)| (t * 9 + i * 3 + j) as f64);
        let fc = persistence_forecast(context.view());
        assert_eq!(fc.shape(), [16, 3, 3]);
        for k in 0..16 {
            assert_eq!(
                fc.index_axis(Axis(0), k),
                context.index_axis(Axis(0), 3)
            );
        }
        // CRPS of persistence against obs == last frame is 0 at every lead
        let obs = fc.clone();
        let ens = fc.insert_axis(Axis(0));
        let table = lead_time_table(ens.view(), obs.view(), &VerifyConfig::default()).unwrap();
        assert!(table.rows().iter().all(|r| r.crps == 0.0));
    }

    #[test]
    fn csv_has_header_and_five_fixed_point_rows() {
        let obs = Array3::from_elem((16, 2, 2), 1.0);
        let ens = obs.clone().insert_axis(Axis(0));
        let table = lead_time_table(ens.view(), obs.view(), &VerifyConfig::default()).unwrap();
        let csv = table.to_csv();
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines[0], "lead_min,crps,fss,csi,mse_norm");
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[1], "5,0.000000,1.000000,1.000000,0.000000");
        assert_eq!(lines[5], "80,0.000000,1.000000,1.000000,0.000000");
    }

    #[test]
    fn binarization_invariance_under_monotone_rescale() {
        // squaring preserves the threshold side for positive fields when the
        // threshold is mapped too
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let f = Array2::from_shape_fn((8, 8), |_| rng.random_range(0.1..4.0));
        let o = Array2::from_shape_fn((8, 8), |_| rng.random_range(0.1..4.0));
        let thr = 1.0;
        let f2 = f.mapv(|v| v * v);
        let o2 = o.mapv(|v| v * v);
        assert_abs_diff_eq!(
            fss(f.view(), o.view(), thr, 3).unwrap(),
            fss(f2.view(), o2.view(), thr * thr, 3).unwrap(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            csi(f.view(), o.view(), thr).unwrap(),
            csi(f2.view(), o2.view(), thr * thr).unwrap(),
            epsilon = 0.0
        );
    }
}
