//! Silhouette alignment: vertical normalisation by the body bounding box and
//! horizontal centring on the foreground centre of mass.

use crate::error::{GaitError, Result};

use super::sequence::SilhouetteSequence;

pub const ALIGNED_HEIGHT: usize = 64;
pub const ALIGNED_WIDTH: usize = 44;

/// Foreground test shared by alignment and loading.
#[inline]
pub fn is_foreground(v: u8) -> bool {
    v > 127
}

/// Aligns one frame into `out` (`out_h × out_w`). Returns `false` for an empty frame.
pub fn align_frame(frame: &[u8], height: usize, width: usize, out_h: usize, out_w: usize, out: &mut [u8]) -> bool {
    let mut top = usize::MAX;
    let mut bottom = 0;
    let mut col_sum = 0f64;
    let mut count = 0usize;
    for r in 0..height {
        for (c, &v) in frame[r * width..(r + 1) * width].iter().enumerate() {
            if is_foreground(v) {
                top = top.min(r);
                bottom = r;
                col_sum += c as f64;
                count += 1;
            }
        }
    }
    if count == 0 {
        return false;
    }
    let com = col_sum / count as f64;
    let scale = out_h as f64 / (bottom - top + 1) as f64;
    // Each output pixel covers 1/scale source pixels per axis; sample that
    // footprint on a regular grid and keep pixels that are at least half covered.
    let taps = (1.0 / scale).ceil().max(1.0) as usize;
    let step = 1.0 / (scale * taps as f64);
    let centre = (out_w / 2) as f64;
    for r in 0..out_h {
        let y0 = top as f64 - 0.5 + r as f64 / scale;
        for c in 0..out_w {
            let x0 = com + (c as f64 - centre - 0.5) / scale;
            let mut hits = 0;
            for i in 0..taps {
                let sy = (y0 + (i as f64 + 0.5) * step).round();
                for j in 0..taps {
                    let sx = (x0 + (j as f64 + 0.5) * step).round();
                    if sy >= 0.0 && sx >= 0.0 && (sy as usize) < height && (sx as usize) < width {
                        hits += is_foreground(frame[sy as usize * width + sx as usize]) as usize;
                    }
                }
            }
            out[r * out_w + c] = if 2 * hits >= taps * taps { 255 } else { 0 };
        }
    }
    true
}

/// Aligns every frame to `64 × 44`, dropping empty frames. Returns the
/// aligned sequence and the number of frames dropped.
pub fn align_and_crop(seq: &SilhouetteSequence) -> Result<(SilhouetteSequence, usize)> {
    align_and_crop_to(seq, ALIGNED_HEIGHT, ALIGNED_WIDTH)
}

pub fn align_and_crop_to(seq: &SilhouetteSequence, out_h: usize, out_w: usize) -> Result<(SilhouetteSequence, usize)> {
    let n = seq.num_frames();
    let mut frames = Vec::with_capacity(n * out_h * out_w);
    let mut buf = vec![0u8; out_h * out_w];
    let mut dropped = 0;
    for i in 0..n {
        if align_frame(seq.frame(i), seq.height, seq.width, out_h, out_w, &mut buf) {
            frames.extend_from_slice(&buf);
        } else {
            dropped += 1;
        }
    }
    if frames.is_empty() {
        return Err(GaitError::Data(format!("sequence {} has no foreground in any frame", seq.key())));
    }
    Ok((SilhouetteSequence { height: out_h, width: out_w, frames, ..seq.clone() }, dropped))
}
