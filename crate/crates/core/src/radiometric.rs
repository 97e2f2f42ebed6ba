//! Display-to-sensor radiometry: response curve, colour correction matrix,
//! and the two-point (white/black field) linearization used for binary
//! patterns, which also carries the vignetting/brightness field.

use log::warn;
use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{demosaic_bilinear, LinearRgbImage, Plane, RawFrame};
use crate::io::FloatField;

/// Number of LUT nodes used to represent a response curve.
pub const CURVE_NODES: usize = 1024;

/// Monotone response curve on normalized display values, stored as a dense
/// LUT over `[0, 1]` with linear interpolation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseCurve {
    pub nodes: Vec<f64>,
}

impl ResponseCurve {
    pub fn identity() -> ResponseCurve {
        ResponseCurve::from_fn(|x| x)
    }

    pub fn from_fn(f: impl Fn(f64) -> f64) -> ResponseCurve {
        ResponseCurve { nodes: (0..CURVE_NODES).map(|i| f(i as f64 / (CURVE_NODES - 1) as f64)).collect() }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.nodes.len();
        let t = x.clamp(0.0, 1.0) * (n - 1) as f64;
        let i = (t.floor() as usize).min(n - 2);
        let f = t - i as f64;
        self.nodes[i] + f * (self.nodes[i + 1] - self.nodes[i])
    }

    /// Monotone table inversion. Responses outside the table clamp to the
    /// end points; on flat stretches the lowest argument is returned.
    pub fn inverse(&self, y: f64) -> f64 {
        let n = self.nodes.len();
        if y <= self.nodes[0] {
            return 0.0;
        }
        if y >= self.nodes[n - 1] {
            return 1.0;
        }
        // first node strictly above y
        let hi = self.nodes.partition_point(|&v| v <= y);
        let lo = hi - 1;
        let (a, b) = (self.nodes[lo], self.nodes[hi]);
        let f = if b > a { (y - a) / (b - a) } else { 0.0 };
        (lo as f64 + f) / (n - 1) as f64
    }

    pub fn is_monotone(&self) -> bool {
        self.nodes.windows(2).all(|w| w[0] <= w[1])
    }
}

/// Display response `f` plus the 3×3 colour correction matrix `C`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisplayResponse {
    pub curve: ResponseCurve,
    pub ccm: [[f64; 3]; 3],
}

impl DisplayResponse {
    pub fn identity() -> DisplayResponse {
        DisplayResponse { curve: ResponseCurve::identity(), ccm: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] }
    }
}

/// Pool-adjacent-violators isotonic regression (non-decreasing).
pub fn isotonic(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (v2, w2, n2) = blocks[blocks.len() - 1];
            let (v1, w1, n1) = blocks[blocks.len() - 2];
            if v1 <= v2 {
                break;
            }
            blocks.pop();
            let wsum = w1 + w2;
            *blocks.last_mut().unwrap() = ((v1 * w1 + v2 * w2) / wsum, wsum, n1 + n2);
        }
    }
    blocks.into_iter().flat_map(|(v, _, n)| std::iter::repeat_n(v, n)).collect()
}

/// Symmetric moving average whose radius shrinks at the ends, so straight
/// lines pass through unchanged and monotone input stays monotone.
fn symmetric_smooth(values: &[f64], radius: usize) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| {
            let r = radius.min(i).min(n - 1 - i);
            values[i - r..=i + r].iter().sum::<f64>() / (2 * r + 1) as f64
        })
        .collect()
}

/// Shape-preserving piecewise cubic Hermite interpolation (Fritsch–Carlson).
pub(crate) struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    pub(crate) fn new(x: Vec<f64>, y: Vec<f64>) -> Pchip {
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
        } else {
            for k in 1..n - 1 {
                if delta[k - 1] * delta[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
                }
            }
            let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
                let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
                if s.signum() != d0.signum() {
                    0.0
                } else if d0.signum() != d1.signum() && s.abs() > 3.0 * d0.abs() {
                    3.0 * d0
                } else {
                    s
                }
            };
            d[0] = end(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = end(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Pchip { x, y, d }
    }

    pub(crate) fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        if t <= self.x[0] {
            return self.y[0];
        }
        if t >= self.x[n - 1] {
            return self.y[n - 1];
        }
        let k = self.x.partition_point(|&v| v <= t) - 1;
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[k] + h10 * h * self.d[k] + h01 * self.y[k + 1] + h11 * h * self.d[k + 1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveFitOptions {
    /// Display code value that corresponds to full white (e.g. 255).
    pub max_code: f64,
    /// Radius of the monotone smoothing window applied after the isotonic projection.
    pub smoothing_radius: usize,
    /// Isotonic corrections larger than this are reported as a calibration warning.
    pub monotone_tolerance: f64,
}

impl Default for CurveFitOptions {
    fn default() -> Self {
        CurveFitOptions { max_code: 255.0, smoothing_radius: 1, monotone_tolerance: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveFit {
    pub curve: ResponseCurve,
    pub max_residual: f64,
    /// Number of distinct display levels the curve was fitted through.
    pub nodes_used: usize,
    /// Set when the measurements needed a projection larger than the tolerance.
    pub forced_monotone: bool,
}

/// Fits the display → sensor response from mean gray-patch responses.
pub fn fit_display_curve(levels: &[f64], measured: &[f64], opts: &CurveFitOptions) -> Result<CurveFit> {
    if levels.len() != measured.len() {
        return Err(Error::Argument("levels and measurements differ in length".into()));
    }
    if levels.len() < 8 {
        return Err(Error::Calibration(format!("need at least 8 gray levels, got {}", levels.len())));
    }
    if !(opts.max_code > 0.0) {
        return Err(Error::Argument("max_code must be positive".into()));
    }
    let mut samples: Vec<(f64, f64)> = levels.iter().zip(measured).map(|(&l, &m)| ((l / opts.max_code).clamp(0.0, 1.0), m)).collect();
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    // merge repeated levels
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut ws: Vec<f64> = Vec::new();
    for (x, y) in samples {
        match xs.last() {
            Some(&lx) if lx == x => {
                let k = ys.len() - 1;
                ys[k] = (ys[k] * ws[k] + y) / (ws[k] + 1.0);
                ws[k] += 1.0;
            }
            _ => {
                xs.push(x);
                ys.push(y);
                ws.push(1.0);
            }
        }
    }
    if xs.len() < 2 {
        return Err(Error::Calibration("gray levels are not distinct".into()));
    }
    let iso = isotonic(&ys, &ws);
    let projection = iso.iter().zip(&ys).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let forced_monotone = projection > opts.monotone_tolerance;
    if forced_monotone {
        warn!("display response is non-monotone beyond tolerance ({projection:.3e}); projected onto monotone curve");
    }
    let smooth = isotonic(&symmetric_smooth(&iso, opts.smoothing_radius), &ws);
    let spline = Pchip::new(xs.clone(), smooth);
    let offset = spline.eval(0.0);
    let mut curve = ResponseCurve::from_fn(|x| (spline.eval(x) - offset).max(0.0));
    // guard against round-off in the cubic pieces
    for i in 1..curve.nodes.len() {
        if curve.nodes[i] < curve.nodes[i - 1] {
            curve.nodes[i] = curve.nodes[i - 1];
        }
    }
    let max_residual = xs.iter().zip(&ys).map(|(&x, &y)| (curve.eval(x) - y).abs()).fold(0.0, f64::max);
    Ok(CurveFit { curve, max_residual, nodes_used: xs.len(), forced_monotone })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CcmFit {
    pub ccm: [[f64; 3]; 3],
    /// 2-norm condition number of the display colour matrix.
    pub condition: f64,
    pub rms_residual: f64,
}

/// Least-squares `C` minimizing `Σ ‖C·d − s‖²`.
pub fn fit_ccm(display_linear: &[[f64; 3]], sensor: &[[f64; 3]]) -> Result<CcmFit> {
    if display_linear.len() != sensor.len() {
        return Err(Error::Argument("colour lists differ in length".into()));
    }
    let n = display_linear.len();
    if n < 3 {
        return Err(Error::Fit(format!("need at least 3 colour pairs, got {n}")));
    }
    let d = DMatrix::from_fn(n, 3, |i, j| display_linear[i][j]);
    let s = DMatrix::from_fn(n, 3, |i, j| sensor[i][j]);
    let svd = d.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::Fit("palette is rank deficient; cannot determine a 3x3 CCM".into()));
    }
    // d · Cᵀ = s
    let ct = svd.solve(&s, 0.0).map_err(|e| Error::Fit(e.to_string()))?;
    let ccm = std::array::from_fn(|r| std::array::from_fn(|c| ct[(c, r)]));
    let resid = &d * &ct - &s;
    Ok(CcmFit { ccm, condition: smax / smin, rms_residual: (resid.norm_squared() / (3 * n) as f64).sqrt() })
}

/// `C · f⁻¹(x)` per pixel on normalized display values, clipped to [0, 1].
pub fn linearize(display: &LinearRgbImage, resp: &DisplayResponse) -> LinearRgbImage {
    let c = Matrix3::from_fn(|r, k| resp.ccm[r][k]);
    LinearRgbImage::from_fn(display.width, display.height, |x, y| {
        let p = display.pixel(x, y);
        let u = Vector3::new(resp.curve.inverse(p[0] as f64), resp.curve.inverse(p[1] as f64), resp.curve.inverse(p[2] as f64));
        let v = c * u;
        [v[0].clamp(0.0, 1.0) as f32, v[1].clamp(0.0, 1.0) as f32, v[2].clamp(0.0, 1.0) as f32]
    })
}

/// White- and black-field captures on the HR target grid, in the same units
/// as the sensor black/white levels.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoPointFields {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB.
    pub white: Vec<f32>,
    pub black: Vec<f32>,
    pub black_level: f64,
    pub white_level: f64,
}

impl TwoPointFields {
    pub fn new(white: &LinearRgbImage, black: &LinearRgbImage, black_level: f64, white_level: f64) -> Result<TwoPointFields> {
        if white.width != black.width || white.height != black.height {
            return Err(Error::Dimension("white and black fields differ in size".into()));
        }
        if !(black_level < white_level) {
            return Err(Error::Config("black level must be below white level".into()));
        }
        if let Some(i) = white.data.iter().zip(&black.data).position(|(w, b)| !(w > b)) {
            return Err(Error::Calibration(format!("white field not above black field at pixel {} channel {}", i / 3, i % 3)));
        }
        Ok(TwoPointFields {
            width: white.width,
            height: white.height,
            white: white.data.clone(),
            black: black.data.clone(),
            black_level,
            white_level,
        })
    }

    /// Spatially uniform fields.
    pub fn uniform(width: usize, height: usize, white: [f32; 3], black: [f32; 3], black_level: f64, white_level: f64) -> Result<TwoPointFields> {
        TwoPointFields::new(&LinearRgbImage::uniform(width, height, white), &LinearRgbImage::uniform(width, height, black), black_level, white_level)
    }

    /// Builds HR-grid fields from white/black RAW captures: normalize,
    /// demosaic, crop the sensor window `[x0, x0+w) × [y0, y0+h)` and
    /// upsample it by `scale` with bilinear interpolation. Output pixel `P`
    /// samples sensor position `x0 + P / scale`.
    pub fn from_raw_captures(
        white: &RawFrame,
        black: &RawFrame,
        window: [f64; 2],
        out_width: usize,
        out_height: usize,
        scale: f64,
    ) -> Result<TwoPointFields> {
        let upsample = |raw: &RawFrame| -> Result<LinearRgbImage> {
            let rgb = demosaic_bilinear(&raw.to_plane()?, raw.meta.cfa)?;
            let planes: Vec<Plane> = (0..3)
                .map(|c| {
                    let ch = rgb.channel(c);
                    Plane::from_fn(out_width, out_height, |x, y| {
                        let sx = (window[0] + x as f64 / scale).clamp(0.0, (ch.width - 1) as f64);
                        let sy = (window[1] + y as f64 / scale).clamp(0.0, (ch.height - 1) as f64);
                        crate::alignment::bilinear_with_grad(&ch, sx, sy).map_or(0.0, |s| s.0 as f32)
                    })
                })
                .collect();
            LinearRgbImage::from_planes([&planes[0], &planes[1], &planes[2]])
        };
        TwoPointFields::new(&upsample(white)?, &upsample(black)?, 0.0, 1.0)
    }

    /// Per-sample `(gain, offset)` so that `target = gain · x + offset`
    /// for normalized display value `x`.
    pub fn gain_offset(&self) -> (Vec<f32>, Vec<f32>) {
        let range = self.white_level - self.black_level;
        let gain = self.white.iter().zip(&self.black).map(|(&w, &b)| ((w - b) as f64 / range) as f32).collect();
        let offset = self.black.iter().map(|&b| ((b as f64 - self.black_level) / range) as f32).collect();
        (gain, offset)
    }

    /// Relative brightness field `v` in [0, 1] (white-minus-black, peak-normalized per channel).
    pub fn vignette(&self) -> VignetteMap {
        let mut peak = [0.0f32; 3];
        for (i, (w, b)) in self.white.iter().zip(&self.black).enumerate() {
            peak[i % 3] = peak[i % 3].max(w - b);
        }
        let data = self.white.iter().zip(&self.black).enumerate().map(|(i, (w, b))| (w - b) / peak[i % 3]).collect();
        VignetteMap { field: LinearRgbImage { width: self.width, height: self.height, data } }
    }
}

/// Per-pixel, per-channel brightness gain in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct VignetteMap {
    pub field: LinearRgbImage,
}

impl VignetteMap {
    pub fn to_float_field(&self) -> FloatField {
        FloatField::from_rgb(&self.field)
    }
}

/// Linearized, vignetted HR target for a binary display pattern:
/// `((x ⊙ (y₁ − y₂)) / max + y₂ − b) / (w − b)` with `x / max` given
/// as the normalized pattern.
pub fn two_point_linearize(pattern: &Plane, fields: &TwoPointFields) -> Result<LinearRgbImage> {
    if pattern.width != fields.width || pattern.height != fields.height {
        return Err(Error::Dimension(format!(
            "pattern {}x{} does not match calibration fields {}x{}",
            pattern.width, pattern.height, fields.width, fields.height
        )));
    }
    let (gain, offset) = fields.gain_offset();
    let data = (0..gain.len()).map(|i| pattern.data[i / 3] * gain[i] + offset[i]).collect();
    LinearRgbImage::from_vec(fields.width, fields.height, data)
}
