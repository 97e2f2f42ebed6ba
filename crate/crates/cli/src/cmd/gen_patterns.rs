use std::path::{Path, PathBuf};

use clap::ValueEnum;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rawforge::io::{write_json, write_png16, write_png16_gray};
use rawforge::patterns::{
    default_palette, gen_color_patches, gen_gray_code, gen_gray_steps, gen_random_structures, gen_siemens_grid, Axis, PatternFrame,
};

use crate::config::Settings;
use crate::error::{required, CliError, CliResult};
use crate::Ctx;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    /// Binary-reflected Gray-code stripes
    Graycode,
    /// Uniform gray levels for display response calibration
    GraySteps,
    /// Uniform color patches for color correction
    ColorPatches,
    /// Binary multi-scale random structures for kernel estimation
    Random,
    /// A grid of Siemens stars for MTF measurement
    Siemens,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AxisSel {
    Columns,
    Rows,
    #[default]
    Both,
}

#[derive(Debug, Default, clap::Args, Serialize)]
pub struct Args {
    /// Pattern family
    #[arg(value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    kind: Option<Kind>,
    /// Display width in pixels
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    width: Option<usize>,
    /// Display height in pixels
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    height: Option<usize>,
    /// Gray-code axes to encode
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    axis: Option<AxisSel>,
    /// Follow every Gray-code frame by its complement
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    with_inverse: Option<bool>,
    /// Number of gray steps
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    levels: Option<usize>,
    /// Number of random-structure frames
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    count: Option<usize>,
    /// Siemens grid rows
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    rows: Option<usize>,
    /// Siemens grid columns
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    cols: Option<usize>,
    /// Spokes per Siemens star
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    spokes: Option<usize>,
    /// Siemens grid cell size in pixels
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    cell: Option<usize>,
    /// Output directory for frames and patterns.json
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSettings {
    pub kind: Option<Kind>,
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub axis: AxisSel,
    pub with_inverse: bool,
    pub levels: usize,
    pub count: usize,
    pub rows: Option<usize>,
    pub cols: Option<usize>,
    pub spokes: Option<usize>,
    pub cell: usize,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub workers: usize,
}

impl Default for GenSettings {
    fn default() -> Self {
        GenSettings {
            kind: None,
            width: None,
            height: None,
            axis: AxisSel::Both,
            with_inverse: false,
            levels: 16,
            count: 20,
            rows: None,
            cols: None,
            spokes: None,
            cell: 256,
            out_dir: PathBuf::from("patterns"),
            seed: 0,
            workers: 1,
        }
    }
}

impl Settings for GenSettings {
    const PATH_KEYS: &'static [&'static str] = &["out_dir"];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<Axis>,
    /// Gray-code bit, most significant first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bit: Option<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub inverse: bool,
}

/// Siemens star geometry in image pixel coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StarGrid {
    pub centers: Vec<[f64; 2]>,
    pub radius: f64,
    pub spokes: usize,
}

/// `patterns.json`, written next to the frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternManifest {
    pub kind: Kind,
    pub seed: Option<u64>,
    pub width: usize,
    pub height: usize,
    pub frames: Vec<FrameEntry>,
    #[serde(default, flatten, skip_serializing_if = "Option::is_none")]
    pub stars: Option<StarGrid>,
}

impl PatternManifest {
    pub fn read(path: &Path) -> CliResult<PatternManifest> {
        super::read_manifest(path)
    }

    /// Frames of one Gray-code axis, split into direct and inverse frames,
    /// each ordered by bit.
    pub fn gray_frames(&self, axis: Axis) -> (Vec<&FrameEntry>, Vec<&FrameEntry>) {
        let mut direct: Vec<&FrameEntry> = self.frames.iter().filter(|f| f.axis == Some(axis) && !f.inverse).collect();
        let mut inverse: Vec<&FrameEntry> = self.frames.iter().filter(|f| f.axis == Some(axis) && f.inverse).collect();
        direct.sort_by_key(|f| f.bit);
        inverse.sort_by_key(|f| f.bit);
        (direct, inverse)
    }
}

#[derive(Serialize)]
struct GenResult {
    kind: Kind,
    frames: usize,
    width: usize,
    height: usize,
    manifest: PathBuf,
}

fn frame_name(i: usize) -> String {
    format!("frame_{i:03}.png")
}

fn plain(frames: Vec<PatternFrame>) -> Vec<(PatternFrame, FrameEntry)> {
    frames.into_iter().enumerate().map(|(i, f)| (f, FrameEntry { file: frame_name(i), axis: None, bit: None, inverse: false })).collect()
}

fn gray_code(s: &GenSettings, width: usize, height: usize) -> CliResult<Vec<(PatternFrame, FrameEntry)>> {
    let axes: &[Axis] = match s.axis {
        AxisSel::Columns => &[Axis::Columns],
        AxisSel::Rows => &[Axis::Rows],
        AxisSel::Both => &[Axis::Columns, Axis::Rows],
    };
    let per_bit = if s.with_inverse { 2 } else { 1 };
    let mut out = Vec::new();
    for &axis in axes {
        let seq = gen_gray_code(width, height, axis, s.with_inverse)?;
        for (k, frame) in seq.frames.into_iter().enumerate() {
            let entry = FrameEntry { file: frame_name(out.len()), axis: Some(axis), bit: Some(k / per_bit), inverse: k % per_bit == 1 };
            out.push((frame, entry));
        }
    }
    Ok(out)
}

pub fn run(ctx: &Ctx, args: Args) -> CliResult<()> {
    let resolved = ctx.resolve::<GenSettings>(&args)?;
    let s = &resolved.settings;
    let kind = required(s.kind, "kind (graycode, gray-steps, color-patches, random, siemens)")?;
    let dims = || -> CliResult<(usize, usize)> { Ok((required(s.width, "width")?, required(s.height, "height")?)) };

    let mut stars = None;
    let (frames, width, height, seed) = match kind {
        Kind::Graycode => {
            let (w, h) = dims()?;
            (gray_code(s, w, h)?, w, h, None)
        }
        Kind::GraySteps => {
            let (w, h) = dims()?;
            (plain(gen_gray_steps(w, h, s.levels)?.frames), w, h, None)
        }
        Kind::ColorPatches => {
            let (w, h) = dims()?;
            (plain(gen_color_patches(w, h, &default_palette())?.frames), w, h, None)
        }
        Kind::Random => {
            let (w, h) = dims()?;
            (plain(gen_random_structures(s.count, w, h, s.seed)?.frames), w, h, Some(s.seed))
        }
        Kind::Siemens => {
            let grid = gen_siemens_grid(required(s.rows, "rows")?, required(s.cols, "cols")?, required(s.spokes, "spokes")?, s.cell)?;
            let (w, h) = (grid.image.width, grid.image.height);
            stars = Some(StarGrid { centers: grid.centers, radius: grid.radius, spokes: grid.spokes });
            (plain(vec![PatternFrame::Rgb(grid.image)]), w, h, None)
        }
    };

    std::fs::create_dir_all(&s.out_dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", s.out_dir.display())))?;
    ctx.in_pool(s.workers, || {
        frames.par_iter().try_for_each(|(frame, entry)| {
            let path = s.out_dir.join(&entry.file);
            match frame {
                PatternFrame::Gray(p) => write_png16_gray(&path, p),
                PatternFrame::Rgb(img) => write_png16(&path, img),
            }
        })?;
        Ok(())
    })?;
    let manifest = PatternManifest { kind, seed, width, height, frames: frames.into_iter().map(|(_, e)| e).collect(), stars };
    let manifest_path = s.out_dir.join("patterns.json");
    write_json(&manifest_path, &manifest)?;
    log::info!("wrote {} {kind:?} frames to {}", manifest.frames.len(), s.out_dir.display());
    let result = GenResult { kind, frames: manifest.frames.len(), width, height, manifest: manifest_path };
    ctx.emit(&resolved.echo, &result, Some(&s.out_dir))
}
