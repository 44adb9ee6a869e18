//! Radar-sequence persistence, normalization, windowing and synthetic data.
//!
//! The on-disk container is a small binary format (magic `TRDM`) holding a
//! timestamped stack of rain-rate rasters in mm/h; see [`save_sequence`] and
//! [`load_sequence`]. Rain rates are heavy-tailed, so model-facing values go
//! through a log1p transform to `[-1, 1]` ([`NormalizationSpec`]).

mod format;
mod normalize;
mod synth;
mod window;

pub use format::{load_sequence, read_sequence, save_sequence, write_sequence, FORMAT_VERSION, MAGIC};
pub use normalize::NormalizationSpec;
pub use synth::{dominant_shift, synth_advection_dataset, SynthConfig};
pub use window::{make_windows, SequenceSample, CONTEXT_FRAMES, TARGET_FRAMES, WINDOW_FRAMES};

use ndarray::{Array2, Array3};
use thiserror::Error;

/// Fixed frame cadence: one raster every 5 minutes.
pub const CADENCE_SECONDS: u32 = 300;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad magic bytes {found:?}, expected {expected:?}", expected = MAGIC)]
    BadMagic { found: [u8; 4] },
    #[error("unsupported format version {found}, expected {expected}", expected = FORMAT_VERSION)]
    BadVersion { found: u16 },
    #[error("truncated payload: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("non-finite rain rate at flat index {index}")]
    NonFinite { index: usize },
    #[error("negative rain rate {value} at flat index {index}")]
    NegativeRate { value: f32, index: usize },
    #[error("unsupported cadence {found} s, this pipeline is fixed at {expected} s", expected = CADENCE_SECONDS)]
    BadCadence { found: u32 },
    #[error("sequence must contain at least one frame")]
    Empty,
    #[error("trailing bytes after payload: {0} extra")]
    TrailingBytes(usize),
    #[error("negative input {0} to normalize; rain rates are nonnegative")]
    NegativeInput(f64),
    #[error("side {side} not divisible by pooling factor {factor}")]
    Indivisible { side: usize, factor: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// A timestamped stack of rain-rate rasters at 5-minute cadence.
///
/// Frames are stored time-major as `N x H x W` in mm/h. Construction checks
/// the container invariants (finite, nonnegative, nonempty).
#[derive(Debug, Clone, PartialEq)]
pub struct RadarSequence {
    frames: Array3<f32>,
    start_time: u64,
}

impl RadarSequence {
    pub fn new(frames: Array3<f32>, start_time: u64) -> Result<Self, DataError> {
        if frames.shape()[0] == 0 || frames.shape()[1] == 0 || frames.shape()[2] == 0 {
            return Err(DataError::Empty);
        }
        for (index, &v) in frames.iter().enumerate() {
            if !v.is_finite() {
                return Err(DataError::NonFinite { index });
            }
            if v < 0.0 {
                return Err(DataError::NegativeRate { value: v, index });
            }
        }
        Ok(Self { frames, start_time })
    }

    pub fn frames(&self) -> &Array3<f32> {
        &self.frames
    }

    /// Unix seconds (UTC) of the first frame.
    pub fn start_time(&self) -> u64 {
        self.start_time
    }

    pub fn cadence_seconds(&self) -> u32 {
        CADENCE_SECONDS
    }

    pub fn frame_count(&self) -> usize {
        self.frames.shape()[0]
    }

    /// One frame as `f64`, the precision used by the models.
    pub fn frame_f64(&self, index: usize) -> Array2<f64> {
        self.frames.index_axis(ndarray::Axis(0), index).mapv(f64::from)
    }
}

/// Mean-pool `factor x factor` blocks; conserves the field mean exactly.
pub fn downsample_area(field: &Array2<f64>, factor: usize) -> Result<Array2<f64>, DataError> {
    let (h, w) = field.dim();
    if factor == 0 || h % factor != 0 {
        return Err(DataError::Indivisible { side: h, factor });
    }
    if w % factor != 0 {
        return Err(DataError::Indivisible { side: w, factor });
    }
    let (oh, ow) = (h / factor, w / factor);
    let inv = 1.0 / (factor * factor) as f64;
    let mut out = Array2::zeros((oh, ow));
    for i in 0..oh {
        for j in 0..ow {
            let mut acc = 0.0;
            for di in 0..factor {
                for dj in 0..factor {
                    acc += field[[i * factor + di, j * factor + dj]];
                }
            }
            out[[i, j]] = acc * inv;
        }
    }
    Ok(out)
}

/// Downsample every frame of a sequence, returning `f64` frames.
pub fn downsample_sequence(seq: &RadarSequence, factor: usize) -> Result<Array3<f64>, DataError> {
    let n = seq.frame_count();
    let first = downsample_area(&seq.frame_f64(0), factor)?;
    let (oh, ow) = first.dim();
    let mut out = Array3::zeros((n, oh, ow));
    out.index_axis_mut(ndarray::Axis(0), 0).assign(&first);
    for k in 1..n {
        let d = downsample_area(&seq.frame_f64(k), factor)?;
        out.index_axis_mut(ndarray::Axis(0), k).assign(&d);
    }
    Ok(out)
}
