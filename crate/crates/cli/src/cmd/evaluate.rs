use std::path::{Path, PathBuf};

use clap::ValueEnum;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rawforge::evaluation::{
    average_summaries, compute_mtf, crossing, evaluate_pair_set, mtf_plane, star_radii, summarize_mtf, MetricSpace, MetricsReport, MtfChannel,
    MtfCurve, MtfOptions, MtfSummary, NamedPair,
};
use rawforge::{CfaPattern, LinearRgbImage};

use super::gen_patterns::StarGrid;
use super::{read_image, read_manifest};
use crate::config::Settings;
use crate::error::{CliError, CliResult};
use crate::Ctx;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Space {
    #[default]
    Rgb,
    RawPacked,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ChannelArg {
    Green,
    Luma,
}

#[derive(Debug, Default, clap::Args, Serialize)]
pub struct Args {
    /// Siemens-star image (PNG, float-field JSON or RAW .pgm) to measure
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mtf: Option<PathBuf>,
    /// Star grid manifest (centers, radius, spokes in image pixels), e.g. patterns.json
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<PathBuf>,
    /// Low-resolution image of the same stars for relative MTF
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lr: Option<PathBuf>,
    /// Resolution ratio between the measured image and --lr
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lr_scale: Option<usize>,
    /// Plane the MTF is measured on
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    channel: Option<ChannelArg>,
    /// Directory of aligned pairs `<name>_sr.png` / `<name>_hr.png`
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    paired: Option<PathBuf>,
    /// Metric space for paired evaluation
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    space: Option<Space>,
    /// CFA layout for raw-packed metrics
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    cfa: Option<String>,
    /// Signal peak for PSNR and SSIM
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    peak: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub mtf: Option<PathBuf>,
    pub grid: Option<PathBuf>,
    pub lr: Option<PathBuf>,
    pub lr_scale: usize,
    pub channel: MtfChannel,
    /// Pixels kept clear of the star rim.
    pub margin: f64,
    pub annulus_half_width: f64,
    pub plateau_radii: usize,
    pub paired: Option<PathBuf>,
    pub space: Space,
    pub cfa: CfaPattern,
    pub peak: f64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        let o = MtfOptions::default();
        EvalSettings {
            mtf: None,
            grid: None,
            lr: None,
            lr_scale: 4,
            channel: MtfChannel::default(),
            margin: 2.0,
            annulus_half_width: o.annulus_half_width,
            plateau_radii: o.plateau_radii,
            paired: None,
            space: Space::Rgb,
            cfa: CfaPattern::RGGB,
            peak: 1.0,
            seed: 0,
            workers: 1,
        }
    }
}

impl Settings for EvalSettings {
    const PATH_KEYS: &'static [&'static str] = &["mtf", "grid", "lr", "paired"];
}

#[derive(Serialize)]
struct StarReport {
    center: [f64; 2],
    mtf50: Option<f64>,
    mtf25: Option<f64>,
    curve: MtfCurve,
    #[serde(skip_serializing_if = "Option::is_none")]
    lr_curve: Option<MtfCurve>,
    #[serde(skip_serializing_if = "Option::is_none")]
    summary: Option<MtfSummary>,
}

#[derive(Serialize)]
struct MtfReport {
    channel: MtfChannel,
    spokes: usize,
    stars: Vec<StarReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    average: Option<MtfSummary>,
}

#[derive(Serialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
enum EvalResult {
    Mtf(MtfReport),
    Paired(MetricsReport),
}

fn measure_mtf(s: &EvalSettings, image: &Path, grid_path: &Path) -> CliResult<MtfReport> {
    let grid: StarGrid = read_manifest(grid_path)?;
    let opts = MtfOptions { annulus_half_width: s.annulus_half_width, plateau_radii: s.plateau_radii };
    let plane = mtf_plane(&read_image(image)?, s.channel);
    let lr = s.lr.as_deref().map(read_image).transpose()?.map(|img| mtf_plane(&img, s.channel));
    if s.lr_scale == 0 {
        return Err(CliError::Config("lr_scale must be positive".into()));
    }
    let k = s.lr_scale as f64;
    let radii = star_radii(grid.spokes, grid.radius, s.margin);
    let lr_radii = star_radii(grid.spokes, grid.radius / k, s.margin);
    let stars = grid
        .centers
        .par_iter()
        .map(|&center| {
            let curve = compute_mtf(&plane, center, grid.spokes, &radii, &opts)?;
            let lr_curve = match &lr {
                Some(lr_plane) => {
                    // same star on the coarser grid, frequencies in measured-image pixels
                    let c = [(center[0] + 0.5) / k - 0.5, (center[1] + 0.5) / k - 0.5];
                    Some(compute_mtf(lr_plane, c, grid.spokes, &lr_radii, &opts)?.rescaled(1.0 / k))
                }
                None => None,
            };
            Ok(StarReport {
                center,
                mtf50: crossing(&curve, 0.5),
                mtf25: crossing(&curve, 0.25),
                summary: lr_curve.as_ref().map(|l| summarize_mtf(&curve, l)),
                curve,
                lr_curve,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let summaries: Vec<MtfSummary> = stars.iter().filter_map(|s| s.summary).collect();
    Ok(MtfReport { channel: s.channel, spokes: grid.spokes, average: average_summaries(&summaries), stars })
}

fn image_ext(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png") || e == "json")
}

/// `(name, prediction, target)` for every `<name>_sr.*` with a matching `<name>_hr.*`.
fn list_pairs(dir: &Path) -> CliResult<Vec<(String, PathBuf, PathBuf)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Config(format!("cannot list {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| image_ext(p)).collect();
    files.sort();
    let mut pairs = Vec::new();
    for sr in &files {
        let stem = sr.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let Some(name) = stem.strip_suffix("_sr") else { continue };
        let ext = sr.extension().unwrap_or_default();
        let hr = dir.join(format!("{name}_hr")).with_extension(ext);
        if hr.exists() {
            pairs.push((name.to_string(), sr.clone(), hr));
        } else {
            log::warn!("{} has no matching {}", sr.display(), hr.display());
        }
    }
    if pairs.is_empty() {
        return Err(CliError::Config(format!("no <name>_sr / <name>_hr pairs in {}", dir.display())));
    }
    Ok(pairs)
}

fn measure_pairs(s: &EvalSettings, dir: &Path) -> CliResult<MetricsReport> {
    let listed = list_pairs(dir)?;
    let images: Vec<(String, LinearRgbImage, LinearRgbImage)> =
        listed.par_iter().map(|(name, sr, hr)| Ok((name.clone(), read_image(sr)?, read_image(hr)?))).collect::<CliResult<_>>()?;
    let named: Vec<NamedPair<'_>> = images.iter().map(|(name, p, t)| NamedPair { name: name.clone(), prediction: p, target: t }).collect();
    let space = match s.space {
        Space::Rgb => MetricSpace::Rgb,
        Space::RawPacked => MetricSpace::RawPacked { cfa: s.cfa },
    };
    Ok(evaluate_pair_set(&named, space, s.peak)?)
}

pub fn run(ctx: &Ctx, args: Args) -> CliResult<()> {
    let resolved = ctx.resolve::<EvalSettings>(&args)?;
    let s = &resolved.settings;
    let result = match (&s.mtf, &s.paired) {
        (Some(image), None) => {
            let grid = s.grid.as_deref().ok_or_else(|| CliError::Missing("--grid".into()))?;
            EvalResult::Mtf(ctx.in_pool(s.workers, || measure_mtf(s, image, grid))?)
        }
        (None, Some(dir)) => EvalResult::Paired(ctx.in_pool(s.workers, || measure_pairs(s, dir))?),
        (Some(_), Some(_)) => return Err(CliError::Config("--mtf and --paired are exclusive".into())),
        (None, None) => return Err(CliError::Missing("--mtf or --paired".into())),
    };
    ctx.emit(&resolved.echo, &result, None)
}
