//! Sliding-window extraction of training samples.

use ndarray::Array4;

use super::{NormalizationSpec, RadarSequence};

/// Conditioning frames per sample (20 minutes of context).
pub const CONTEXT_FRAMES: usize = 4;
/// Forecast frames per sample (80 minutes of lead time).
pub const TARGET_FRAMES: usize = 16;
/// Total frames per window.
pub const WINDOW_FRAMES: usize = CONTEXT_FRAMES + TARGET_FRAMES;

/// One training or inference unit: 4 normalized context frames plus 16
/// normalized target frames, shaped `frames x 1 x H x W`.
#[derive(Debug, Clone)]
pub struct SequenceSample {
    pub context: Array4<f64>,
    pub target: Array4<f64>,
}

impl SequenceSample {
    pub fn height(&self) -> usize {
        self.context.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.context.shape()[3]
    }
}

/// Cut every contiguous 20-frame window at the given stride into a sample.
///
/// Sequences shorter than 20 frames produce no samples. Frames are
/// normalized to `[-1, 1]`; rates are nonnegative by the sequence invariant
/// so normalization cannot fail.
pub fn make_windows(
    seq: &RadarSequence,
    stride: usize,
    spec: &NormalizationSpec,
) -> Vec<SequenceSample> {
    assert!(stride >= 1, "stride must be positive");
    let n = seq.frame_count();
    if n < WINDOW_FRAMES {
        return Vec::new();
    }
    let (h, w) = (seq.frames().shape()[1], seq.frames().shape()[2]);
    let mut out = Vec::new();
    let mut start = 0;
    while start + WINDOW_FRAMES <= n {
        let mut context = Array4::zeros((CONTEXT_FRAMES, 1, h, w));
        let mut target = Array4::zeros((TARGET_FRAMES, 1, h, w));
        for k in 0..WINDOW_FRAMES {
            let frame = seq.frame_f64(start + k);
            let norm = frame.mapv(|v| {
                spec.normalize_value(v).expect("sequence rates are nonnegative")
            });
            let dst = if k < CONTEXT_FRAMES {
                context.index_axis_mut(ndarray::Axis(0), k)
            } else {
                target.index_axis_mut(ndarray::Axis(0), k - CONTEXT_FRAMES)
            };
            dst.into_shape_with_order((h, w))
                .expect("frame slice is contiguous")
                .assign(&norm);
        }
        out.push(SequenceSample { context, target });
        start += stride;
    }
    out
}
