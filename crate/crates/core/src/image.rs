//! Image containers, CFA sampling and Bayer packing.
//!
//! Samples are stored as `f32`. Anything that accumulates over many frames
//! (burst means, variances, losses) converts to `f64` at the call site.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// One of the four sites of a 2×2 Bayer quad.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CfaChannel {
    R,
    G1,
    G2,
    B,
}

impl CfaChannel {
    pub const ALL: [CfaChannel; 4] = [CfaChannel::R, CfaChannel::G1, CfaChannel::G2, CfaChannel::B];

    /// Index of the RGB plane this site samples.
    pub fn rgb_index(self) -> usize {
        match self {
            CfaChannel::R => 0,
            CfaChannel::G1 | CfaChannel::G2 => 1,
            CfaChannel::B => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CfaChannel::R => "r",
            CfaChannel::G1 => "g1",
            CfaChannel::G2 => "g2",
            CfaChannel::B => "b",
        }
    }
}

impl fmt::Display for CfaChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// 2×2 colour filter layout, row-major. The first green encountered in
/// row-major order is `G1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CfaPattern {
    layout: [CfaChannel; 4],
}

impl CfaPattern {
    pub const RGGB: CfaPattern = CfaPattern::from_letters(*b"RGGB");
    pub const GBRG: CfaPattern = CfaPattern::from_letters(*b"GBRG");
    pub const GRBG: CfaPattern = CfaPattern::from_letters(*b"GRBG");
    pub const BGGR: CfaPattern = CfaPattern::from_letters(*b"BGGR");

    const fn from_letters(letters: [u8; 4]) -> CfaPattern {
        let mut layout = [CfaChannel::R; 4];
        let mut seen_green = false;
        let mut i = 0;
        while i < 4 {
            layout[i] = match letters[i] {
                b'R' => CfaChannel::R,
                b'B' => CfaChannel::B,
                _ => {
                    if seen_green {
                        CfaChannel::G2
                    } else {
                        seen_green = true;
                        CfaChannel::G1
                    }
                }
            };
            i += 1;
        }
        CfaPattern { layout }
    }

    pub fn new(layout: [CfaChannel; 4]) -> Result<CfaPattern> {
        let mut sorted = layout;
        sorted.sort();
        if sorted != CfaChannel::ALL {
            return Err(Error::Config(format!("CFA layout must contain r, g1, g2 and b exactly once, got {layout:?}")));
        }
        Ok(CfaPattern { layout })
    }

    pub fn layout(&self) -> [CfaChannel; 4] {
        self.layout
    }

    #[inline]
    pub fn channel_at(&self, row: usize, col: usize) -> CfaChannel {
        self.layout[(row & 1) * 2 + (col & 1)]
    }

    /// (row, col) offset of `channel` inside the quad.
    pub fn offset_of(&self, channel: CfaChannel) -> (usize, usize) {
        let k = self.layout.iter().position(|&c| c == channel).expect("validated layout holds every channel");
        (k / 2, k % 2)
    }

    pub fn name(&self) -> String {
        self.layout
            .iter()
            .map(|c| match c {
                CfaChannel::R => 'R',
                CfaChannel::B => 'B',
                _ => 'G',
            })
            .collect()
    }
}

impl Default for CfaPattern {
    fn default() -> Self {
        CfaPattern::RGGB
    }
}

impl fmt::Display for CfaPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for CfaPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        let bytes = upper.as_bytes();
        if bytes.len() != 4 || !bytes.iter().all(|b| matches!(b, b'R' | b'G' | b'B')) {
            return Err(Error::Config(format!("unrecognised CFA pattern {s:?}")));
        }
        let pattern = CfaPattern::from_letters([bytes[0], bytes[1], bytes[2], bytes[3]]);
        CfaPattern::new(pattern.layout)
    }
}

impl Serialize for CfaPattern {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for CfaPattern {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Single-channel float image.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize) -> Plane {
        Plane::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Plane {
        Plane { width, height, data: vec![value; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Plane> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!("plane {width}x{height} needs {} samples, got {}", width * height, data.len())));
        }
        Ok(Plane { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Plane {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &Plane) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Plane> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::Geometry(format!("crop {width}x{height}+{x0}+{y0} exceeds plane {}x{}", self.width, self.height)));
        }
        Ok(Plane::from_fn(width, height, |x, y| self.get(x0 + x, y0 + y)))
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}

/// Three-channel linear RGB image, interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearRgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl LinearRgbImage {
    pub fn new(width: usize, height: usize) -> LinearRgbImage {
        LinearRgbImage { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<LinearRgbImage> {
        if data.len() != width * height * 3 {
            return Err(Error::Dimension(format!("RGB image {width}x{height} needs {} samples, got {}", width * height * 3, data.len())));
        }
        Ok(LinearRgbImage { width, height, data })
    }

    pub fn uniform(width: usize, height: usize, rgb: [f32; 3]) -> LinearRgbImage {
        LinearRgbImage::from_fn(width, height, |_, _| rgb)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> LinearRgbImage {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        LinearRgbImage { width, height, data }
    }

    /// Replicates a single plane into all three channels.
    pub fn from_gray(plane: &Plane) -> LinearRgbImage {
        LinearRgbImage::from_fn(plane.width, plane.height, |x, y| [plane.get(x, y); 3])
    }

    pub fn from_planes(planes: [&Plane; 3]) -> Result<LinearRgbImage> {
        if !planes[0].same_shape(planes[1]) || !planes[0].same_shape(planes[2]) {
            return Err(Error::Dimension("RGB planes differ in size".into()));
        }
        Ok(LinearRgbImage::from_fn(planes[0].width, planes[0].height, |x, y| [planes[0].get(x, y), planes[1].get(x, y), planes[2].get(x, y)]))
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn channel(&self, c: usize) -> Plane {
        Plane::from_fn(self.width, self.height, |x, y| self.get(x, y, c))
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<LinearRgbImage> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::Geometry(format!("crop {width}x{height}+{x0}+{y0} exceeds image {}x{}", self.width, self.height)));
        }
        Ok(LinearRgbImage::from_fn(width, height, |x, y| self.pixel(x0 + x, y0 + y)))
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> LinearRgbImage {
        LinearRgbImage { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Capture metadata carried alongside RAW samples (also the sidecar schema).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawMeta {
    pub cfa: CfaPattern,
    pub black_level: f64,
    pub white_level: f64,
    #[serde(default = "default_iso")]
    pub iso: f64,
    #[serde(default = "unity_gains")]
    pub wb_gains: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exposure_time: Option<f64>,
}

fn default_iso() -> f64 {
    100.0
}

fn unity_gains() -> [f64; 3] {
    [1.0; 3]
}

impl RawMeta {
    /// Metadata for data that is already black/white corrected into [0, 1].
    pub fn normalized(cfa: CfaPattern) -> RawMeta {
        RawMeta { cfa, black_level: 0.0, white_level: 1.0, iso: default_iso(), wb_gains: unity_gains(), exposure_time: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.black_level < self.white_level) {
            return Err(Error::Config(format!("black level {} must be below white level {}", self.black_level, self.white_level)));
        }
        if self.wb_gains.iter().any(|&g| !(g > 0.0)) {
            return Err(Error::Config(format!("white-balance gains must be positive: {:?}", self.wb_gains)));
        }
        Ok(())
    }
}

/// Per-device sensor description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraProfile {
    pub name: String,
    pub cfa: CfaPattern,
    pub black_level: f64,
    pub white_level: f64,
    pub wb_gains: [f64; 3],
    /// Calibrated ISO numbers, strictly increasing.
    pub iso_set: Vec<f64>,
    /// Path of the noise model document, relative to the profile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_model: Option<std::path::PathBuf>,
    /// FOV patch grid as `[rows, cols]`.
    pub kernel_grid: [usize; 2],
}

impl CameraProfile {
    pub fn validate(&self) -> Result<()> {
        self.raw_meta(self.iso_set.first().copied().unwrap_or(100.0)).validate()?;
        if self.iso_set.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config(format!("{}: iso_set must be strictly increasing", self.name)));
        }
        if self.kernel_grid.contains(&0) {
            return Err(Error::Config(format!("{}: kernel grid must be non-empty", self.name)));
        }
        Ok(())
    }

    /// Capture metadata for this device at `iso`.
    pub fn raw_meta(&self, iso: f64) -> RawMeta {
        RawMeta { cfa: self.cfa, black_level: self.black_level, white_level: self.white_level, iso, wb_gains: self.wb_gains, exposure_time: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RawData {
    /// Sensor digital numbers.
    Integer(Vec<u16>),
    /// Black/white corrected samples.
    Normalized(Vec<f32>),
}

/// One mosaicked sensor image.
#[derive(Clone, Debug, PartialEq)]
pub struct RawFrame {
    pub width: usize,
    pub height: usize,
    pub data: RawData,
    pub meta: RawMeta,
}

fn check_even(width: usize, height: usize) -> Result<()> {
    if !width.is_multiple_of(2) || !height.is_multiple_of(2) || width == 0 || height == 0 {
        return Err(Error::Dimension(format!("{width}x{height} does not tile into whole Bayer quads")));
    }
    Ok(())
}

impl RawFrame {
    pub fn from_integer(width: usize, height: usize, data: Vec<u16>, meta: RawMeta) -> Result<RawFrame> {
        check_even(width, height)?;
        meta.validate()?;
        if data.len() != width * height {
            return Err(Error::Dimension(format!("raw {width}x{height} needs {} samples, got {}", width * height, data.len())));
        }
        Ok(RawFrame { width, height, data: RawData::Integer(data), meta })
    }

    /// Wraps an already normalized plane. Samples are not clamped here.
    pub fn from_plane(plane: Plane, meta: RawMeta) -> Result<RawFrame> {
        check_even(plane.width, plane.height)?;
        meta.validate()?;
        Ok(RawFrame { width: plane.width, height: plane.height, data: RawData::Normalized(plane.data), meta })
    }

    pub fn is_normalized(&self) -> bool {
        matches!(self.data, RawData::Normalized(_))
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Samples as `f64` in the frame's own units (DN or normalized).
    pub fn sample(&self, x: usize, y: usize) -> f64 {
        let i = y * self.width + x;
        match &self.data {
            RawData::Integer(d) => d[i] as f64,
            RawData::Normalized(d) => d[i] as f64,
        }
    }

    /// Normalized samples as a plane, without clamping. Integer data is
    /// mapped through the black/white levels; normalized data is returned as is.
    pub fn to_plane_unclipped(&self) -> Result<Plane> {
        match &self.data {
            RawData::Normalized(d) => Plane::from_vec(self.width, self.height, d.clone()),
            RawData::Integer(d) => {
                self.meta.validate()?;
                let b = self.meta.black_level;
                let range = self.meta.white_level - b;
                let data = d.iter().map(|&v| ((v as f64 - b) / range) as f32).collect();
                Plane::from_vec(self.width, self.height, data)
            }
        }
    }

    /// Sub-frame at an even origin, so the CFA phase is unchanged.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<RawFrame> {
        if !x0.is_multiple_of(2) || !y0.is_multiple_of(2) {
            return Err(Error::Geometry(format!("raw crop origin ({x0}, {y0}) must be even to keep the CFA phase")));
        }
        check_even(width, height)?;
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::Geometry(format!("crop {width}x{height} at ({x0}, {y0}) exceeds the {}x{} frame", self.width, self.height)));
        }
        let rows = (y0..y0 + height).flat_map(|y| (y * self.width + x0)..(y * self.width + x0 + width));
        let data = match &self.data {
            RawData::Integer(d) => RawData::Integer(rows.map(|i| d[i]).collect()),
            RawData::Normalized(d) => RawData::Normalized(rows.map(|i| d[i]).collect()),
        };
        Ok(RawFrame { width, height, data, meta: self.meta.clone() })
    }

    /// Normalized plane clamped to [0, 1].
    pub fn to_plane(&self) -> Result<Plane> {
        let mut plane = normalize_raw(self)?.to_plane_unclipped()?;
        for v in &mut plane.data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(plane)
    }
}

/// Samples `rgb` through the colour filter array.
pub fn mosaic(rgb: &LinearRgbImage, cfa: CfaPattern) -> Result<Plane> {
    check_even(rgb.width, rgb.height)?;
    Ok(Plane::from_fn(rgb.width, rgb.height, |x, y| rgb.get(x, y, cfa.channel_at(y, x).rgb_index())))
}

/// Fetch from the same-colour sub-lattice with replicate padding: stepping
/// two sites back keeps the CFA parity at the border.
#[inline]
fn same_color_index(v: isize, len: usize) -> usize {
    let len = len as isize;
    let v = if v < 0 {
        v + 2
    } else if v >= len {
        v - 2
    } else {
        v
    };
    v.clamp(0, len - 1) as usize
}

/// Bilinear demosaicking of a normalized mosaic. Missing samples are the
/// mean of the nearest same-colour neighbours (4-neighbourhood first, then
/// diagonals).
pub fn demosaic_bilinear(raw: &Plane, cfa: CfaPattern) -> Result<LinearRgbImage> {
    check_even(raw.width, raw.height)?;
    const CROSS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
    const DIAG: [(isize, isize); 4] = [(-1, -1), (1, -1), (-1, 1), (1, 1)];
    let (w, h) = (raw.width, raw.height);
    let mut out = LinearRgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let site = cfa.channel_at(y, x).rgb_index();
            for c in 0..3 {
                let v = if site == c {
                    raw.get(x, y)
                } else {
                    let gather = |offsets: &[(isize, isize)]| {
                        let mut sum = 0.0f32;
                        let mut n = 0;
                        for &(dx, dy) in offsets {
                            let nx = x as isize + dx;
                            let ny = y as isize + dy;
                            // parity decides colour, so test the unpadded position
                            if cfa.channel_at(ny.rem_euclid(2) as usize, nx.rem_euclid(2) as usize).rgb_index() == c {
                                sum += raw.get(same_color_index(nx, w), same_color_index(ny, h));
                                n += 1;
                            }
                        }
                        (sum, n)
                    };
                    let (sum, n) = match gather(&CROSS) {
                        (_, 0) => gather(&DIAG),
                        found => found,
                    };
                    sum / n as f32
                };
                out.set(x, y, c, v);
            }
        }
    }
    Ok(out)
}

/// Maps samples through the black/white levels into [0, 1].
pub fn normalize_raw(raw: &RawFrame) -> Result<RawFrame> {
    raw.meta.validate()?;
    let b = raw.meta.black_level;
    let range = raw.meta.white_level - b;
    let norm = |v: f64| ((v - b) / range).clamp(0.0, 1.0) as f32;
    let data: Vec<f32> = match &raw.data {
        RawData::Integer(d) => d.iter().map(|&v| norm(v as f64)).collect(),
        RawData::Normalized(d) => d.iter().map(|&v| norm(v as f64)).collect(),
    };
    Ok(RawFrame {
        width: raw.width,
        height: raw.height,
        data: RawData::Normalized(data),
        meta: RawMeta { black_level: 0.0, white_level: 1.0, ..raw.meta.clone() },
    })
}

/// Quantizes a normalized frame back to digital numbers between the given levels.
pub fn denormalize_raw(raw: &RawFrame, black_level: f64, white_level: f64) -> Result<RawFrame> {
    let meta = RawMeta { black_level, white_level, ..raw.meta.clone() };
    meta.validate()?;
    let RawData::Normalized(d) = &raw.data else {
        return Err(Error::Argument("frame already holds digital numbers".into()));
    };
    let range = white_level - black_level;
    let data = d.iter().map(|&v| (v as f64 * range + black_level).round().clamp(0.0, u16::MAX as f64) as u16).collect();
    RawFrame::from_integer(raw.width, raw.height, data, meta)
}

/// Half-resolution four-channel stack of a mosaic; channel `k` holds the
/// samples at quad offset `(k / 2, k % 2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedBayer<T> {
    pub width: usize,
    pub height: usize,
    pub channels: [Vec<T>; 4],
}

pub fn pack_bayer<T: Copy>(data: &[T], width: usize, height: usize) -> Result<PackedBayer<T>> {
    check_even(width, height)?;
    if data.len() != width * height {
        return Err(Error::Dimension(format!("mosaic {width}x{height} needs {} samples, got {}", width * height, data.len())));
    }
    let (hw, hh) = (width / 2, height / 2);
    let channels = std::array::from_fn(|k| {
        let (oy, ox) = (k / 2, k % 2);
        let mut ch = Vec::with_capacity(hw * hh);
        for y in 0..hh {
            for x in 0..hw {
                ch.push(data[(2 * y + oy) * width + 2 * x + ox]);
            }
        }
        ch
    });
    Ok(PackedBayer { width: hw, height: hh, channels })
}

pub fn unpack_bayer<T: Copy + Default>(packed: &PackedBayer<T>) -> Vec<T> {
    let (w, h) = (packed.width * 2, packed.height * 2);
    let mut out = vec![T::default(); w * h];
    for (k, ch) in packed.channels.iter().enumerate() {
        let (oy, ox) = (k / 2, k % 2);
        for y in 0..packed.height {
            for x in 0..packed.width {
                out[(2 * y + oy) * w + 2 * x + ox] = ch[y * packed.width + x];
            }
        }
    }
    out
}
