//! Calibration and evaluation pattern generators.
//!
//! Samples are normalized: `1.0` is the display maximum.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{LinearRgbImage, Plane};

/// Longest Gray-code sequence generated per axis.
pub const MAX_GRAY_BITS: usize = 23;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    GrayCodeV,
    GrayCodeH,
    GraySteps,
    ColorPatches,
    RandomStructures,
    SiemensGrid,
}

/// Which display coordinate a Gray-code sequence encodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Vertical stripes; encodes the column.
    Columns,
    /// Horizontal stripes; encodes the row.
    Rows,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PatternFrame {
    Gray(Plane),
    Rgb(LinearRgbImage),
}

impl PatternFrame {
    pub fn to_rgb(&self) -> LinearRgbImage {
        match self {
            PatternFrame::Gray(p) => LinearRgbImage::from_gray(p),
            PatternFrame::Rgb(img) => img.clone(),
        }
    }

    pub fn as_gray(&self) -> Option<&Plane> {
        match self {
            PatternFrame::Gray(p) => Some(p),
            PatternFrame::Rgb(_) => None,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            PatternFrame::Gray(p) => (p.width, p.height),
            PatternFrame::Rgb(img) => (img.width, img.height),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatternSequence {
    pub kind: PatternKind,
    pub width: usize,
    pub height: usize,
    pub seed: Option<u64>,
    pub frames: Vec<PatternFrame>,
}

impl PatternSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Gray planes of an achromatic sequence.
    pub fn gray_frames(&self) -> Option<Vec<&Plane>> {
        self.frames.iter().map(|f| f.as_gray()).collect()
    }
}

/// Number of Gray-code bits needed for `extent` positions, capped at [`MAX_GRAY_BITS`].
pub fn gray_code_bits(extent: usize) -> usize {
    let mut bits = 0;
    while bits < MAX_GRAY_BITS && (1usize << bits) < extent {
        bits += 1;
    }
    bits.max(1)
}

#[inline]
pub fn to_gray(v: u32) -> u32 {
    v ^ (v >> 1)
}

#[inline]
pub fn from_gray(mut g: u32) -> u32 {
    let mut shift = 1;
    while shift < 32 {
        g ^= g >> shift;
        shift <<= 1;
    }
    g
}

/// Frame `index` of the Gray-code sequence along `axis`, most significant bit first.
pub fn gray_code_frame(width: usize, height: usize, axis: Axis, index: usize) -> Plane {
    let extent = match axis {
        Axis::Columns => width,
        Axis::Rows => height,
    };
    let bits = gray_code_bits(extent);
    let bit = bits - 1 - index;
    Plane::from_fn(width, height, |x, y| {
        let coord = match axis {
            Axis::Columns => x,
            Axis::Rows => y,
        } as u32;
        ((to_gray(coord) >> bit) & 1) as f32
    })
}

/// Binary-reflected Gray-code stripes. With `with_inverse`, every frame is
/// followed by its complement.
pub fn gen_gray_code(width: usize, height: usize, axis: Axis, with_inverse: bool) -> Result<PatternSequence> {
    if width == 0 || height == 0 {
        return Err(Error::Argument("pattern dimensions must be positive".into()));
    }
    let extent = match axis {
        Axis::Columns => width,
        Axis::Rows => height,
    };
    let mut frames = Vec::new();
    for k in 0..gray_code_bits(extent) {
        let frame = gray_code_frame(width, height, axis, k);
        if with_inverse {
            let inv = Plane { data: frame.data.iter().map(|v| 1.0 - v).collect(), ..frame.clone() };
            frames.push(PatternFrame::Gray(frame));
            frames.push(PatternFrame::Gray(inv));
        } else {
            frames.push(PatternFrame::Gray(frame));
        }
    }
    Ok(PatternSequence {
        kind: match axis {
            Axis::Columns => PatternKind::GrayCodeV,
            Axis::Rows => PatternKind::GrayCodeH,
        },
        width,
        height,
        seed: None,
        frames,
    })
}

/// Uniform gray fields at `levels` evenly spaced intensities from black to white.
pub fn gen_gray_steps(width: usize, height: usize, levels: usize) -> Result<PatternSequence> {
    if levels < 2 {
        return Err(Error::Argument(format!("need at least 2 gray levels, got {levels}")));
    }
    let frames = (0..levels).map(|i| PatternFrame::Gray(Plane::filled(width, height, i as f32 / (levels - 1) as f32))).collect();
    Ok(PatternSequence { kind: PatternKind::GraySteps, width, height, seed: None, frames })
}

/// One uniform frame per palette entry (normalized RGB).
pub fn gen_color_patches(width: usize, height: usize, palette: &[[f32; 3]]) -> Result<PatternSequence> {
    if palette.is_empty() {
        return Err(Error::Argument("palette is empty".into()));
    }
    let frames = palette.iter().map(|&rgb| PatternFrame::Rgb(LinearRgbImage::uniform(width, height, rgb))).collect();
    Ok(PatternSequence { kind: PatternKind::ColorPatches, width, height, seed: None, frames })
}

/// 8-bit display values of the 24 classic ColorChecker patches.
const CLASSIC_24: [[u8; 3]; 24] = [
    [115, 82, 68],
    [194, 150, 130],
    [98, 122, 157],
    [87, 108, 67],
    [133, 128, 177],
    [103, 189, 170],
    [214, 126, 44],
    [80, 91, 166],
    [193, 90, 99],
    [94, 60, 108],
    [157, 188, 64],
    [224, 163, 46],
    [56, 61, 150],
    [70, 148, 73],
    [175, 54, 60],
    [231, 199, 31],
    [187, 86, 149],
    [8, 133, 161],
    [243, 243, 242],
    [200, 200, 200],
    [160, 160, 160],
    [122, 122, 121],
    [85, 85, 85],
    [52, 52, 52],
];

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor() as i32;
    let f = h6 - i as f64;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// 140-entry palette laid out like a 14×10 digital colour target: the 24
/// classic patches, a 16-step neutral ramp and a 100-entry hue/saturation/value
/// sweep. Values are display-referred and normalized.
pub fn default_palette() -> Vec<[f32; 3]> {
    let mut palette: Vec<[f32; 3]> = CLASSIC_24.iter().map(|c| [c[0] as f32 / 255.0, c[1] as f32 / 255.0, c[2] as f32 / 255.0]).collect();
    for i in 0..16 {
        let v = i as f32 / 15.0;
        palette.push([v; 3]);
    }
    for hue in 0..20 {
        for (s, v) in [(1.0, 1.0), (0.6, 1.0), (1.0, 0.6), (0.35, 0.8), (0.8, 0.35)] {
            let rgb = hsv_to_rgb(hue as f64 / 20.0, s, v);
            palette.push([rgb[0] as f32, rgb[1] as f32, rgb[2] as f32]);
        }
    }
    palette
}

fn fill_rect(canvas: &mut Plane, x0: usize, y0: usize, w: usize, h: usize, mut f: impl FnMut(usize, usize) -> f32) {
    for y in y0..(y0 + h).min(canvas.height) {
        for x in x0..(x0 + w).min(canvas.width) {
            let v = f(x - x0, y - y0);
            canvas.set(x, y, v);
        }
    }
}

fn random_structure_frame(width: usize, height: usize, rng: &mut ChaCha8Rng) -> Plane {
    let max_scale_log = {
        let m = width.min(height).max(1);
        let mut k = 0;
        while k < 5 && (1usize << (k + 2)) <= m {
            k += 1;
        }
        k
    };
    // primitives are layered until they cover the frame about three times over
    let target_area = 3 * width * height;
    loop {
        let background = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        let mut canvas = Plane::filled(width, height, background);
        let mut covered = 0;
        while covered < target_area {
            // fine scales are drawn more often than coarse ones
            let k = (rng.random::<f64>().powi(2) * (max_scale_log + 1) as f64) as u32;
            let scale = 1usize << k.min(max_scale_log as u32);
            let w = rng.random_range(scale..=(8 * scale).min(width).max(scale));
            let h = rng.random_range(scale..=(8 * scale).min(height).max(scale));
            let x0 = rng.random_range(0..width);
            let y0 = rng.random_range(0..height);
            covered += w.min(width - x0) * h.min(height - y0);
            let value = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
            match rng.random_range(0..4u8) {
                0 => fill_rect(&mut canvas, x0, y0, w, h, |_, _| value),
                1 => {
                    let vertical = rng.random_bool(0.5);
                    fill_rect(&mut canvas, x0, y0, w, h, |dx, dy| {
                        let t = if vertical { dx } else { dy };
                        ((t / scale) % 2) as f32
                    })
                }
                2 => fill_rect(&mut canvas, x0, y0, w, h, |dx, dy| ((dx / scale + dy / scale) % 2) as f32),
                _ => {
                    let cw = w.div_ceil(scale);
                    let cells: Vec<f32> = (0..cw * h.div_ceil(scale)).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
                    fill_rect(&mut canvas, x0, y0, w, h, |dx, dy| cells[(dy / scale) * cw + dx / scale])
                }
            }
        }
        let fraction = canvas.mean();
        if (0.2..=0.8).contains(&fraction) {
            return canvas;
        }
    }
}

/// Binary multi-scale random structures (rectangles, bars, checker and noise
/// fragments at dyadic scales). Every frame has a white fraction in [0.2, 0.8].
pub fn gen_random_structures(count: usize, width: usize, height: usize, seed: u64) -> Result<PatternSequence> {
    if count == 0 {
        return Err(Error::Argument("pattern count must be at least 1".into()));
    }
    if width == 0 || height == 0 {
        return Err(Error::Argument("pattern dimensions must be positive".into()));
    }
    let frames = (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            PatternFrame::Gray(random_structure_frame(width, height, &mut rng))
        })
        .collect();
    Ok(PatternSequence { kind: PatternKind::RandomStructures, width, height, seed: Some(seed), frames })
}

/// Grid of Siemens stars with star geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct SiemensGrid {
    pub image: LinearRgbImage,
    /// Star centers in pixel coordinates (pixel centers at integer positions).
    pub centers: Vec<[f64; 2]>,
    pub radius: f64,
    pub spokes: usize,
}

/// Binary Siemens star intensity at offset `(dx, dy)` from the center.
#[inline]
pub fn siemens_value(dx: f64, dy: f64, spokes: usize) -> f64 {
    if (spokes as f64 * dy.atan2(dx)).sin() >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Renders a `rows × cols` grid of `spokes`-spoke stars in `cell`-pixel cells.
/// Pixels are 4×4 supersampled; outside each star the field is mid-gray.
pub fn gen_siemens_grid(rows: usize, cols: usize, spokes: usize, cell: usize) -> Result<SiemensGrid> {
    if spokes < 2 || !spokes.is_multiple_of(2) {
        return Err(Error::Argument(format!("spoke count must be even and >= 2, got {spokes}")));
    }
    if rows == 0 || cols == 0 || cell < 8 {
        return Err(Error::Argument("grid needs at least one cell of 8 px or more".into()));
    }
    let radius = 0.45 * cell as f64;
    let centers: Vec<[f64; 2]> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| [(c * cell) as f64 + (cell as f64 - 1.0) / 2.0, (r * cell) as f64 + (cell as f64 - 1.0) / 2.0]))
        .collect();
    const SS: usize = 4;
    let plane = Plane::from_fn(cols * cell, rows * cell, |x, y| {
        let center = centers[(y / cell) * cols + x / cell];
        let mut acc = 0.0;
        for sy in 0..SS {
            for sx in 0..SS {
                let dx = x as f64 + (sx as f64 + 0.5) / SS as f64 - 0.5 - center[0];
                let dy = y as f64 + (sy as f64 + 0.5) / SS as f64 - 0.5 - center[1];
                acc += if dx.hypot(dy) <= radius { siemens_value(dx, dy, spokes) } else { 0.5 };
            }
        }
        (acc / (SS * SS) as f64) as f32
    });
    Ok(SiemensGrid { image: LinearRgbImage::from_gray(&plane), centers, radius, spokes })
}

/// Camera-to-display distance for scale `s = f / d`, in the units of `focal_length`.
pub fn capture_distance(focal_length: f64, scale: f64) -> Result<f64> {
    if !(focal_length > 0.0) || !(scale > 0.0) {
        return Err(Error::Argument(format!("focal length and scale must be positive (got {focal_length}, {scale})")));
    }
    Ok(focal_length / scale)
}

/// Angle of sector boundary `k` of a star, for diagnostics.
pub fn sector_boundary_angle(k: usize, spokes: usize) -> f64 {
    k as f64 * PI / spokes as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_gray(v: u32) -> u32 {
        // explicit reflect-and-prefix construction
        let mut codes = vec![0u32];
        let mut bits = 0;
        while codes.len() <= v as usize {
            let n = codes.len();
            for i in (0..n).rev() {
                codes.push(codes[i] | (1 << bits));
            }
            bits += 1;
        }
        codes[v as usize]
    }

    #[test]
    fn gray_code_matches_reflected_construction() {
        for v in 0..600 {
            assert_eq!(to_gray(v), reference_gray(v));
            assert_eq!(from_gray(to_gray(v)), v);
        }
    }

    #[test]
    fn gray_code_width_8() {
        let seq = gen_gray_code(8, 2, Axis::Columns, false).unwrap();
        assert_eq!(seq.len(), 3);
        for f in seq.gray_frames().unwrap() {
            assert_eq!(f.get(5, 1), 1.0);
            assert_eq!(f.get(0, 0), 0.0);
            assert!(f.data.iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn gray_code_bit_counts() {
        assert_eq!(gray_code_bits(4096), 12);
        assert_eq!(gray_code_bits(2160), 12);
        assert_eq!(gray_code_bits(1), 1);
        assert_eq!(gray_code_bits(1 << 30), MAX_GRAY_BITS);
        let seq = gen_gray_code(4, 3, Axis::Rows, true).unwrap();
        assert_eq!(seq.len(), 4);
        let f = seq.gray_frames().unwrap();
        assert!(f[0].data.iter().zip(&f[1].data).all(|(a, b)| a + b == 1.0));
    }

    #[test]
    fn gray_code_decodes_uniquely() {
        let (w, h) = (37, 5);
        let seq = gen_gray_code(w, h, Axis::Columns, false).unwrap();
        let frames = seq.gray_frames().unwrap();
        let mut seen = std::collections::HashSet::new();
        for x in 0..w {
            let code = frames.iter().fold(0u32, |acc, f| (acc << 1) | f.get(x, 2) as u32);
            assert_eq!(from_gray(code) as usize, x);
            assert!(seen.insert(code));
        }
    }

    #[test]
    fn gray_steps() {
        let seq = gen_gray_steps(4, 4, 255).unwrap();
        assert_eq!(seq.len(), 255);
        let f = seq.gray_frames().unwrap();
        assert!(f[0].data.iter().all(|&v| v == 0.0));
        assert!(f[254].data.iter().all(|&v| v == 1.0));
        assert!(gen_gray_steps(4, 4, 1).is_err());
    }

    #[test]
    fn color_patches() {
        let palette = default_palette();
        assert_eq!(palette.len(), 140);
        assert!(palette.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        let seq = gen_color_patches(3, 2, &palette).unwrap();
        assert_eq!(seq.len(), 140);
        let white = gen_color_patches(3, 2, &[[1.0; 3]]).unwrap();
        assert!(white.frames[0].to_rgb().data.iter().all(|&v| v == 1.0));
        for (frame, entry) in seq.frames.iter().zip(&palette) {
            let rgb = frame.to_rgb();
            for c in 0..3 {
                assert_eq!(rgb.channel(c).mean(), entry[c] as f64);
            }
        }
        assert!(gen_color_patches(3, 2, &[]).is_err());
    }

    #[test]
    fn random_structures_deterministic_and_balanced() {
        let a = gen_random_structures(20, 64, 48, 11).unwrap();
        let b = gen_random_structures(20, 64, 48, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        let c = gen_random_structures(20, 64, 48, 12).unwrap();
        assert_ne!(a, c);
        for f in a.gray_frames().unwrap() {
            assert!(f.data.iter().all(|&v| v == 0.0 || v == 1.0));
            let fraction = f.data.iter().filter(|&&v| v == 1.0).count() as f64 / f.data.len() as f64;
            assert!((0.2..=0.8).contains(&fraction), "white fraction {fraction}");
        }
    }

    #[test]
    fn siemens_grid_layout_and_periodicity() {
        let grid = gen_siemens_grid(3, 6, 20, 32).unwrap();
        assert_eq!(grid.centers.len(), 18);
        assert_eq!((grid.image.width, grid.image.height), (192, 96));
        for k in 0..50 {
            let theta = 0.013 + k as f64 * 0.11;
            let step = 2.0 * PI / 20.0;
            let (a, b) = (siemens_value(theta.cos(), theta.sin(), 20), siemens_value((theta + step).cos(), (theta + step).sin(), 20));
            assert_eq!(a, b);
        }
        assert!(gen_siemens_grid(3, 6, 7, 32).is_err());
    }

    #[test]
    fn siemens_transitions_on_circle() {
        let spokes = 20;
        let grid = gen_siemens_grid(1, 1, spokes, 160).unwrap();
        let [cx, cy] = grid.centers[0];
        let plane = grid.image.channel(0);
        for rho in [30.0, 50.0, 65.0] {
            let n = 2000;
            let bits: Vec<bool> = (0..n)
                .map(|i| {
                    let t = 2.0 * PI * (i as f64 + 0.5) / n as f64;
                    let x = (cx + rho * t.cos()).round() as usize;
                    let y = (cy + rho * t.sin()).round() as usize;
                    plane.get(x, y) > 0.5
                })
                .collect();
            let transitions = (0..n).filter(|&i| bits[i] != bits[(i + 1) % n]).count();
            assert_eq!(transitions, 2 * spokes, "rho={rho}");
        }
    }

    #[test]
    fn capture_distance_formula() {
        assert_eq!(capture_distance(100.0, 4.0).unwrap(), 25.0);
        assert_eq!(capture_distance(100.0, 1.0).unwrap(), 100.0);
        assert_eq!(capture_distance(69.0, 4.0).unwrap(), 17.25);
        assert!(capture_distance(0.0, 4.0).is_err());
        assert!(capture_distance(10.0, -1.0).is_err());
    }
}
