//! File formats: 16-bit PGM with JSON sidecar for RAW frames, 16-bit PNG
//! for linear RGB, planar little-endian `f32` with a JSON header for float
//! fields, plus atomic write helpers.

use std::fs;
use std::io::{BufReader, BufWriter, Cursor, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{LinearRgbImage, Plane, RawData, RawFrame, RawMeta};

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file_name = path.file_name().ok_or_else(|| Error::Argument(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

/// `foo/bar.pgm` -> `foo/bar.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Encodes 16-bit samples as a binary (P5) PGM with big-endian samples.
pub fn encode_pgm16(width: usize, height: usize, samples: &[u16]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    out.reserve(samples.len() * 2);
    for &s in samples {
        out.extend_from_slice(&s.to_be_bytes());
    }
    out
}

/// Decodes a binary PGM (8- or 16-bit). Returns width, height, maxval and samples.
pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<(usize, usize, u16, Vec<u16>), String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err("not a binary PGM (P5)".into());
    }
    let parse = |s: String| s.parse::<usize>().map_err(|_| format!("bad header field {s:?}"));
    let width = parse(token()?)?;
    let height = parse(token()?)?;
    let maxval = parse(token()?)?;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let n = width * height;
    let wide = maxval > 255;
    let need = if wide { 2 * n } else { n };
    if bytes.len() < start + need {
        return Err(format!("raster truncated: need {need} bytes"));
    }
    let raster = &bytes[start..start + need];
    let samples =
        if wide { raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect() } else { raster.iter().map(|&b| b as u16).collect() };
    Ok((width, height, maxval as u16, samples))
}

/// Writes a RAW frame as 16-bit PGM plus a JSON sidecar. Normalized frames
/// are quantized between their black and white levels, which must then span
/// a digital range (e.g. 0..65535).
pub fn write_raw(path: &Path, frame: &RawFrame) -> Result<()> {
    let samples: Vec<u16> = match &frame.data {
        RawData::Integer(d) => d.clone(),
        RawData::Normalized(d) => d.iter().map(|&v| (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16).collect(),
    };
    let meta = match &frame.data {
        RawData::Integer(_) => frame.meta.clone(),
        RawData::Normalized(_) => {
            // normalized [0, 1] stored as 0..65535 digital numbers
            RawMeta { black_level: 0.0, white_level: 65535.0, ..frame.meta.clone() }
        }
    };
    write_atomic(path, &encode_pgm16(frame.width, frame.height, &samples))?;
    write_json(&sidecar_path(path), &meta)
}

/// Reads a PGM plus its sidecar into an integer RAW frame.
pub fn read_raw(path: &Path) -> Result<RawFrame> {
    let bytes = read_bytes(path)?;
    let (width, height, _, samples) = decode_pgm(&bytes).map_err(|m| Error::format(path, m))?;
    let meta: RawMeta = read_json(&sidecar_path(path))?;
    RawFrame::from_integer(width, height, samples, meta)
}

/// Writes a linear RGB image as a 16-bit PNG (no gamma applied).
pub fn write_png16(path: &Path, img: &LinearRgbImage) -> Result<()> {
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut writer = enc.write_header().map_err(|e| Error::format(path, e.to_string()))?;
        let mut raster = Vec::with_capacity(img.data.len() * 2);
        for &v in &img.data {
            let q = (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16;
            raster.extend_from_slice(&q.to_be_bytes());
        }
        writer.write_image_data(&raster).map_err(|e| Error::format(path, e.to_string()))?;
    }
    write_atomic(path, &bytes)
}

/// Writes a single plane as a 16-bit grayscale PNG.
pub fn write_png16_gray(path: &Path, plane: &Plane) -> Result<()> {
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, plane.width as u32, plane.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut writer = enc.write_header().map_err(|e| Error::format(path, e.to_string()))?;
        let raster: Vec<u8> = plane.data.iter().flat_map(|&v| ((v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16).to_be_bytes()).collect();
        writer.write_image_data(&raster).map_err(|e| Error::format(path, e.to_string()))?;
    }
    write_atomic(path, &bytes)
}

/// Reads an 8- or 16-bit gray/RGB(A) PNG as linear RGB in [0, 1].
pub fn read_png(path: &Path) -> Result<LinearRgbImage> {
    let bytes = read_bytes(path)?;
    let mut dec = png::Decoder::new(BufReader::new(Cursor::new(bytes)));
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(|e| Error::format(path, e.to_string()))?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::format(path, e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(Error::format(path, "unexpanded palette")),
    };
    let wide = info.bit_depth == png::BitDepth::Sixteen;
    let sample = |row: &[u8], i: usize| -> f32 {
        if wide {
            u16::from_be_bytes([row[2 * i], row[2 * i + 1]]) as f32 / 65535.0
        } else {
            row[i] as f32 / 255.0
        }
    };
    let mut img = LinearRgbImage::new(w, h);
    for y in 0..h {
        let row = &buf[y * info.line_size..(y + 1) * info.line_size];
        for x in 0..w {
            for c in 0..3 {
                let src = if channels < 3 { 0 } else { c };
                img.set(x, y, c, sample(row, x * channels + src));
            }
        }
    }
    Ok(img)
}

/// Header for planar float fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FloatHeader {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Always `"f32le"`.
    pub dtype: String,
    /// Name of the sibling binary file.
    pub data: String,
}

/// Planar float field: `channels` consecutive `width × height` planes.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatField {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FloatField {
    pub fn from_rgb(img: &LinearRgbImage) -> FloatField {
        let n = img.width * img.height;
        let mut data = vec![0.0; 3 * n];
        for (i, px) in img.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * n + i] = px[c];
            }
        }
        FloatField { width: img.width, height: img.height, channels: 3, data }
    }

    pub fn to_rgb(&self) -> Result<LinearRgbImage> {
        if self.channels != 3 {
            return Err(Error::Dimension(format!("expected 3 channels, found {}", self.channels)));
        }
        let n = self.width * self.height;
        Ok(LinearRgbImage::from_fn(self.width, self.height, |x, y| {
            let i = y * self.width + x;
            [self.data[i], self.data[n + i], self.data[2 * n + i]]
        }))
    }
}

/// Writes `<path>` (JSON header) and `<path>.f32` (samples).
pub fn write_float_field(header_path: &Path, field: &FloatField) -> Result<()> {
    let data_path = header_path.with_extension("f32");
    let header = FloatHeader {
        width: field.width,
        height: field.height,
        channels: field.channels,
        dtype: "f32le".into(),
        data: data_path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
    };
    let bytes: Vec<u8> = field.data.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_atomic(&data_path, &bytes)?;
    write_json(header_path, &header)
}

pub fn read_float_field(header_path: &Path) -> Result<FloatField> {
    let header: FloatHeader = read_json(header_path)?;
    if header.dtype != "f32le" {
        return Err(Error::format(header_path, format!("unsupported dtype {}", header.dtype)));
    }
    let data_path = header_path.with_file_name(&header.data);
    let bytes = read_bytes(&data_path)?;
    let n = header.width * header.height * header.channels;
    if bytes.len() != 4 * n {
        return Err(Error::format(&data_path, format!("expected {} bytes, found {}", 4 * n, bytes.len())));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(FloatField { width: header.width, height: header.height, channels: header.channels, data })
}

/// Loads a linear RGB image from either a PNG or a float-field header (`.json`).
pub fn read_linear_rgb(path: &Path) -> Result<LinearRgbImage> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") | Some("PNG") => read_png(path),
        Some("json") => read_float_field(path)?.to_rgb(),
        _ => Err(Error::format(path, "expected a .png or float-field .json")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::CfaPattern;

    #[test]
    fn pgm_roundtrip_is_big_endian() {
        let bytes = encode_pgm16(2, 1, &[0x0102, 0xfffe]);
        assert!(bytes.ends_with(&[0x01, 0x02, 0xff, 0xfe]));
        let (w, h, max, s) = decode_pgm(&bytes).unwrap();
        assert_eq!((w, h, max), (2, 1, 65535));
        assert_eq!(s, vec![0x0102, 0xfffe]);
    }

    #[test]
    fn pgm_header_comments_and_8bit() {
        let mut bytes = b"P5 # comment\n3 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3]);
        let (w, h, max, s) = decode_pgm(&bytes).unwrap();
        assert_eq!((w, h, max, s), (3, 1, 255, vec![1, 2, 3]));
        assert!(decode_pgm(b"P6\n1 1\n255\n\0\0\0").is_err());
        assert!(decode_pgm(b"P5\n4 4\n65535\n\0\0").is_err());
    }

    #[test]
    fn raw_and_png_files_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let meta = RawMeta {
            black_level: 64.0,
            white_level: 1023.0,
            iso: 400.0,
            wb_gains: [2.0, 1.0, 1.5],
            exposure_time: Some(0.01),
            cfa: CfaPattern::GBRG,
        };
        let raw = RawFrame::from_integer(4, 2, (0..8).map(|v| v * 100).collect(), meta).unwrap();
        let p = dir.path().join("frame.pgm");
        write_raw(&p, &raw).unwrap();
        assert!(dir.path().join("frame.json").exists());
        assert_eq!(read_raw(&p).unwrap(), raw);

        let img = LinearRgbImage::from_fn(3, 2, |x, y| [x as f32 / 2.0, y as f32, 0.25]);
        let q = dir.path().join("img.png");
        write_png16(&q, &img).unwrap();
        let back = read_png(&q).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-7);
        }

        let plane = Plane::from_fn(5, 3, |x, y| (x * y) as f32 / 8.0);
        let g = dir.path().join("gray.png");
        write_png16_gray(&g, &plane).unwrap();
        let back = read_png(&g).unwrap();
        for c in 0..3 {
            for (a, b) in plane.data.iter().zip(&back.channel(c).data) {
                assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-7);
            }
        }

        let field = FloatField::from_rgb(&img);
        let f = dir.path().join("field.json");
        write_float_field(&f, &field).unwrap();
        assert_eq!(read_linear_rgb(&f).unwrap(), img);
    }
}
