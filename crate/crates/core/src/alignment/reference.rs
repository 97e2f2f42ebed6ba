//! Alignment of a displayed ground-truth image to its RAW capture for paired
//! evaluation. Optical-flow refinement is not performed.

use serde::{Deserialize, Serialize};

use super::homography::Homography;
use super::warp::warp;
use crate::error::{Error, Result};
use crate::image::{demosaic_bilinear, CameraProfile, LinearRgbImage, Plane, RawFrame};
use crate::radiometric::{linearize, DisplayResponse};

/// Sensor-pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignedReference {
    /// Ground truth on the `scale × ROI` grid, in white-balanced sensor space.
    pub gt: LinearRgbImage,
    /// True where the warp sampled inside the resized ground truth.
    pub mask: Vec<bool>,
    /// Demosaicked, white-balanced capture cropped to the ROI.
    pub roi: LinearRgbImage,
}

/// Monotone remap of `src` so that its empirical CDF follows `reference`.
/// Tied source values share their mid-rank; reference quantiles are
/// linearly interpolated, so a constant source maps to the reference median.
pub fn histogram_match(src: &Plane, reference: &Plane) -> Plane {
    let n = src.data.len();
    let mut out = Plane::new(src.width, src.height);
    if n == 0 || reference.data.is_empty() {
        return src.clone();
    }
    let mut ref_sorted = reference.data.clone();
    ref_sorted.sort_by(f32::total_cmp);
    let m = ref_sorted.len();
    let quantile = |f: f64| -> f32 {
        let t = f * (m - 1) as f64;
        let i = (t.floor() as usize).min(m - 1);
        let j = (i + 1).min(m - 1);
        let a = t - i as f64;
        (ref_sorted[i] as f64 * (1.0 - a) + ref_sorted[j] as f64 * a) as f32
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| src.data[a].total_cmp(&src.data[b]));
    let denom = (n - 1).max(1) as f64;
    let mut start = 0;
    while start < n {
        let v = src.data[order[start]];
        let mut end = start + 1;
        while end < n && src.data[order[end]] == v {
            end += 1;
        }
        let f = if n == 1 { 0.5 } else { (start + end - 1) as f64 / 2.0 / denom };
        let mapped = quantile(f);
        for &i in &order[start..end] {
            out.data[i] = mapped;
        }
        start = end;
    }
    out
}

fn keys(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t < 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Normalized 1-D bicubic weights for each output sample. The kernel is
/// stretched by the reduction factor when downsampling.
fn resample_weights(n_in: usize, n_out: usize) -> Vec<(usize, Vec<f64>)> {
    let ratio = n_in as f64 / n_out as f64;
    let support = ratio.max(1.0);
    (0..n_out)
        .map(|o| {
            let center = (o as f64 + 0.5) * ratio - 0.5;
            let lo = (center - 2.0 * support).ceil() as isize;
            let hi = (center + 2.0 * support).floor() as isize;
            let mut w: Vec<f64> = (lo..=hi).map(|i| keys((i as f64 - center) / support)).collect();
            let sum: f64 = w.iter().sum();
            for v in &mut w {
                *v /= sum;
            }
            // clamp-to-edge: fold out-of-range taps onto the borders
            let mut folded = vec![0.0; n_in];
            let (mut first, mut last) = (n_in, 0);
            for (k, i) in (lo..=hi).enumerate() {
                let j = i.clamp(0, n_in as isize - 1) as usize;
                folded[j] += w[k];
                if w[k] != 0.0 {
                    first = first.min(j);
                    last = last.max(j);
                }
            }
            if first > last {
                first = center.round().clamp(0.0, (n_in - 1) as f64) as usize;
                last = first;
                folded[first] = 1.0;
            }
            (first, folded[first..=last].to_vec())
        })
        .collect()
}

/// Separable Keys bicubic (a = −0.5) resize with pixel-centre alignment.
pub fn resize_bicubic(img: &LinearRgbImage, out_width: usize, out_height: usize) -> Result<LinearRgbImage> {
    if out_width == 0 || out_height == 0 || img.width == 0 || img.height == 0 {
        return Err(Error::Dimension("cannot resize to or from an empty image".into()));
    }
    let wx = resample_weights(img.width, out_width);
    let wy = resample_weights(img.height, out_height);
    let mut tmp = vec![0.0f64; out_width * img.height * 3];
    for y in 0..img.height {
        for (ox, (start, w)) in wx.iter().enumerate() {
            for c in 0..3 {
                tmp[(y * out_width + ox) * 3 + c] = w.iter().enumerate().map(|(k, &wk)| wk * img.get(start + k, y, c) as f64).sum();
            }
        }
    }
    let mut out = LinearRgbImage::new(out_width, out_height);
    for (oy, (start, w)) in wy.iter().enumerate() {
        for ox in 0..out_width {
            for c in 0..3 {
                let v: f64 = w.iter().enumerate().map(|(k, &wk)| wk * tmp[((start + k) * out_width + ox) * 3 + c]).sum();
                out.set(ox, oy, c, v as f32);
            }
        }
    }
    Ok(out)
}

fn apply_gains(img: &mut LinearRgbImage, gains: [f64; 3]) {
    for (i, v) in img.data.iter_mut().enumerate() {
        *v = (*v as f64 * gains[i % 3]) as f32;
    }
}

/// Aligns a displayed ground-truth image (normalized display values) to a
/// RAW capture. `h` maps the resized ground-truth grid (`scale × ROI` pixels)
/// onto the HR grid of the ROI.
pub fn align_reference(
    gt: &LinearRgbImage,
    capture: &RawFrame,
    profile: &CameraProfile,
    response: &DisplayResponse,
    h: &Homography,
    roi: Roi,
    scale: usize,
) -> Result<AlignedReference> {
    if scale == 0 {
        return Err(Error::Argument("scale must be positive".into()));
    }
    if roi.width == 0 || roi.height == 0 || roi.x + roi.width > capture.width || roi.y + roi.height > capture.height {
        return Err(Error::Geometry(format!(
            "ROI {}x{} at ({}, {}) lies outside the {}x{} capture",
            roi.width, roi.height, roi.x, roi.y, capture.width, capture.height
        )));
    }
    if capture.meta.cfa != profile.cfa {
        log::warn!("capture CFA {} differs from profile {}; using the capture's", capture.meta.cfa.name(), profile.cfa.name());
    }
    let gains = capture.meta.wb_gains;

    let mut lin = linearize(gt, response);
    apply_gains(&mut lin, gains);
    let mut rgb = demosaic_bilinear(&capture.to_plane()?, capture.meta.cfa)?;
    apply_gains(&mut rgb, gains);
    let roi_rgb = rgb.crop(roi.x, roi.y, roi.width, roi.height)?;

    let (ow, oh) = (scale * roi.width, scale * roi.height);
    let resized = resize_bicubic(&lin, ow, oh)?;
    let matched: Vec<Plane> = (0..3).map(|c| histogram_match(&resized.channel(c), &roi_rgb.channel(c))).collect();
    let matched = LinearRgbImage::from_planes([&matched[0], &matched[1], &matched[2]])?;
    let warped = warp(&matched, h, ow, oh)?;
    Ok(AlignedReference { gt: warped.image, mask: warped.mask, roi: roi_rgb })
}
