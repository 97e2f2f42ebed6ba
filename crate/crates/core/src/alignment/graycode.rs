//! Decoding of captured Gray-code stripe sequences into display coordinates.

use serde::{Deserialize, Serialize};

use super::homography::{Correspondence, CorrespondenceSet};
use crate::error::{Error, Result};
use crate::image::Plane;
use crate::patterns::from_gray;

/// How a captured bit is thresholded.
#[derive(Clone, Copy, Debug)]
pub enum Threshold<'a> {
    /// Per-pixel midpoint between full-white and full-black captures.
    Fields { white: &'a Plane, black: &'a Plane },
    /// Each bit frame is compared against a capture of its complement. The
    /// inverse slices are parallel to the column and row captures.
    Inverse { columns: &'a [Plane], rows: &'a [Plane] },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeOptions {
    /// Minimum white-minus-black contrast (normalized units) for a pixel to be decoded.
    pub min_contrast: f32,
    /// Decoded codes at or beyond these extents are discarded.
    pub display_width: usize,
    pub display_height: usize,
}

impl DecodeOptions {
    pub fn new(display_width: usize, display_height: usize) -> DecodeOptions {
        DecodeOptions { min_contrast: 0.05, display_width, display_height }
    }
}

fn check_shapes(reference: &Plane, planes: &[Plane]) -> Result<()> {
    if planes.iter().any(|p| !p.same_shape(reference)) {
        return Err(Error::Dimension("Gray-code captures differ in size".into()));
    }
    Ok(())
}

/// Decodes column and row Gray-code captures (most significant bit first)
/// into sensor → display correspondences. Pixels below the contrast threshold
/// are omitted. Confidence is the weakest bit margin relative to half the
/// local contrast.
pub fn decode_gray_code(columns: &[Plane], rows: &[Plane], threshold: Threshold<'_>, opts: &DecodeOptions) -> Result<CorrespondenceSet> {
    let reference = columns.first().or(rows.first()).ok_or_else(|| Error::Argument("no Gray-code captures given".into()))?;
    check_shapes(reference, columns)?;
    check_shapes(reference, rows)?;
    if columns.is_empty() || rows.is_empty() {
        return Err(Error::Argument("need both column and row captures".into()));
    }
    match threshold {
        Threshold::Fields { white, black } => {
            check_shapes(reference, std::slice::from_ref(white))?;
            check_shapes(reference, std::slice::from_ref(black))?;
        }
        Threshold::Inverse { columns: ic, rows: ir } => {
            if ic.len() != columns.len() || ir.len() != rows.len() {
                return Err(Error::Argument("inverse captures must pair with every bit frame".into()));
            }
            check_shapes(reference, ic)?;
            check_shapes(reference, ir)?;
        }
    }

    let (w, h) = (reference.width, reference.height);
    let mut pairs = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let decode_axis = |frames: &[Plane], inverse: Option<&[Plane]>| -> Option<(u32, f32)> {
                let mut code = 0u32;
                let mut margin = f32::INFINITY;
                for (k, f) in frames.iter().enumerate() {
                    let v = f.get(x, y);
                    let (mid, half) = match (threshold, inverse) {
                        (Threshold::Fields { white, black }, _) => {
                            let (wv, bv) = (white.get(x, y), black.get(x, y));
                            ((wv + bv) / 2.0, (wv - bv) / 2.0)
                        }
                        (_, Some(inv)) => {
                            let iv = inv[k].get(x, y);
                            ((v + iv) / 2.0, (v - iv).abs() / 2.0)
                        }
                        _ => unreachable!("inverse frames always accompany inverse thresholding"),
                    };
                    if 2.0 * half < opts.min_contrast {
                        return None;
                    }
                    code = (code << 1) | (v > mid) as u32;
                    margin = margin.min(((v - mid).abs() / half).min(1.0));
                }
                Some((from_gray(code), margin))
            };
            let (ic, ir) = match threshold {
                Threshold::Inverse { columns, rows } => (Some(columns), Some(rows)),
                Threshold::Fields { .. } => (None, None),
            };
            let Some((col, mc)) = decode_axis(columns, ic) else { continue };
            let Some((row, mr)) = decode_axis(rows, ir) else { continue };
            if col as usize >= opts.display_width || row as usize >= opts.display_height {
                continue;
            }
            pairs.push(Correspondence { sensor: [x as f64, y as f64], display: [col as f64, row as f64], confidence: mc.min(mr) as f64 });
        }
    }
    Ok(CorrespondenceSet { pairs })
}
