//! The reconstruct stage: diffusion super-resolution of single frames,
//! either directly in pixel space ([`spatial`]) or in the latent space of an
//! autoencoder ([`latent`]).

pub mod latent;
pub mod spatial;

use ndarray::{Array2, Array3, Axis};
use thiserror::Error;

use crate::data::{downsample_area, DataError, NormalizationSpec};
use crate::diffusion::DiffusionError;

#[derive(Debug, Error)]
pub enum SrError {
    #[error("bad input shape {got:?}, expected {expected:?}")]
    BadShape { got: Vec<usize>, expected: Vec<usize> },
    #[error("target size {target} is not a positive multiple of the low resolution {low}")]
    BadTargetSize { target: usize, low: usize },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite values in {context}: {diagnostic}")]
    NonFinite { context: String, diagnostic: String },
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// One training pair: a normalized low-resolution frame and its normalized
/// high-resolution original. The low field is the area-downsampled high
/// field by construction.
#[derive(Debug, Clone)]
pub struct SrPair {
    /// `(1, h, w)` in `[-1, 1]`.
    pub low: Array3<f64>,
    /// `(1, H, W)` in `[-1, 1]`.
    pub high: Array3<f64>,
}

impl SrPair {
    /// Build a pair from one rain-rate frame in mm/h: the low side is the
    /// mean-pooled field, both sides are then normalized.
    pub fn from_rate_frame(
        frame: &Array2<f64>,
        factor: usize,
        spec: &NormalizationSpec,
    ) -> Result<Self, SrError> {
        let low_rate = downsample_area(frame, factor)?;
        let normalize = |f: &Array2<f64>| -> Result<Array3<f64>, SrError> {
            let mut out = Array3::zeros((1, f.dim().0, f.dim().1));
            for ((i, j), &v) in f.indexed_iter() {
                out[[0, i, j]] = spec.normalize_value(v).map_err(SrError::from)?;
            }
            Ok(out)
        };
        Ok(Self { low: normalize(&low_rate)?, high: normalize(frame)? })
    }

    pub fn low_side(&self) -> usize {
        self.low.shape()[1]
    }

    pub fn high_side(&self) -> usize {
        self.high.shape()[1]
    }
}

/// Bilinear upscaling with half-pixel-center alignment; exact on constant
/// fields. The target must be a positive multiple of the input size.
pub fn upscale_bilinear(
    low: &Array3<f64>,
    out_h: usize,
    out_w: usize,
) -> Result<Array3<f64>, SrError> {
    let shape = low.shape();
    if shape.len() != 3 || shape[0] != 1 {
        return Err(SrError::BadShape { got: shape.to_vec(), expected: vec![1, 0, 0] });
    }
    let (h, w) = (shape[1], shape[2]);
    if out_h == 0 || out_h % h != 0 {
        return Err(SrError::BadTargetSize { target: out_h, low: h });
    }
    if out_w == 0 || out_w % w != 0 {
        return Err(SrError::BadTargetSize { target: out_w, low: w });
    }
    let src = low.index_axis(Axis(0), 0);
    let mut out = Array3::zeros((1, out_h, out_w));
    let scale_y = h as f64 / out_h as f64;
    let scale_x = w as f64 / out_w as f64;
    for i in 0..out_h {
        let sy = ((i as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for j in 0..out_w {
            let sx = ((j as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            let top = src[[y0, x0]] * (1.0 - fx) + src[[y0, x1]] * fx;
            let bottom = src[[y1, x0]] * (1.0 - fx) + src[[y1, x1]] * fx;
            out[[0, i, j]] = top * (1.0 - fy) + bottom * fy;
        }
    }
    Ok(out)
}
