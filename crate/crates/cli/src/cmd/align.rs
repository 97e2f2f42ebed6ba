use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rawforge::alignment::{align_reference, decode_gray_code, fit_homography, DecodeOptions, Homography, RansacOptions, Roi, Threshold};
use rawforge::image::Plane;
use rawforge::io::{read_json, read_raw, write_json, write_png16, write_png16_gray, write_raw};
use rawforge::patterns::Axis;
use rawforge::radiometric::DisplayResponse;
use rawforge::CameraProfile;

use super::gen_patterns::PatternManifest;
use super::read_image;
use crate::config::Settings;
use crate::error::{required, CliError, CliResult};
use crate::Ctx;

#[derive(Debug, Default, clap::Args, Serialize)]
pub struct Args {
    /// Gray-code pattern manifest written by gen-patterns
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    patterns: Option<PathBuf>,
    /// Directory of captured Gray-code frames (`<frame stem>.pgm`, plus white.pgm and black.pgm without inverse frames)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    captures: Option<PathBuf>,
    /// Precomputed display-to-sensor homography; skips decoding
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    homography: Option<PathBuf>,
    /// Display size as WIDTH,HEIGHT when no pattern manifest is given
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    display_size: Option<Vec<usize>>,
    /// RAW capture of a displayed ground-truth image (repeatable, paired with --gt)
    #[arg(long)]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    capture: Vec<PathBuf>,
    /// Ground-truth image shown full screen (repeatable, paired with --capture)
    #[arg(long)]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    gt: Vec<PathBuf>,
    /// Sensor region as X,Y,WIDTH,HEIGHT (even origin and size)
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    roi: Option<Vec<usize>>,
    /// Super-resolution factor of the aligned ground truth
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    scale: Option<usize>,
    /// Camera profile JSON
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    profile: Option<PathBuf>,
    /// Display response JSON (identity when absent)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    response: Option<PathBuf>,
    /// Minimum white-black contrast for a decoded pixel
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    min_contrast: Option<f32>,
    /// RANSAC inlier threshold in sensor pixels
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    ransac_threshold: Option<f64>,
    /// Output directory
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignSettings {
    pub patterns: Option<PathBuf>,
    pub captures: Option<PathBuf>,
    pub homography: Option<PathBuf>,
    pub display_size: Option<[usize; 2]>,
    pub capture: Vec<PathBuf>,
    pub gt: Vec<PathBuf>,
    pub roi: Option<[usize; 4]>,
    pub scale: usize,
    pub profile: Option<PathBuf>,
    pub response: Option<PathBuf>,
    pub min_contrast: f32,
    pub ransac_threshold: f64,
    pub ransac_iterations: usize,
    /// Decoded correspondences are thinned to at most this many before fitting.
    pub max_correspondences: usize,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub workers: usize,
}

impl Default for AlignSettings {
    fn default() -> Self {
        let ransac = RansacOptions::default();
        AlignSettings {
            patterns: None,
            captures: None,
            homography: None,
            display_size: None,
            capture: Vec::new(),
            gt: Vec::new(),
            roi: None,
            scale: 4,
            profile: None,
            response: None,
            min_contrast: 0.05,
            ransac_threshold: ransac.threshold,
            ransac_iterations: ransac.iterations,
            max_correspondences: 20_000,
            out_dir: PathBuf::from("aligned"),
            seed: 0,
            workers: 1,
        }
    }
}

impl Settings for AlignSettings {
    const PATH_KEYS: &'static [&'static str] = &["patterns", "captures", "homography", "capture", "gt", "profile", "response", "out_dir"];
}

#[derive(Serialize)]
struct FitReport {
    correspondences: usize,
    used: usize,
    inliers: usize,
    rms_error: f64,
}

#[derive(Serialize)]
struct PairReport {
    index: usize,
    capture: PathBuf,
    gt: PathBuf,
    lr: String,
    hr: String,
    mask: String,
    valid_fraction: f64,
}

#[derive(Serialize)]
struct AlignResult {
    homography: Homography,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<FitReport>,
    display_size: [usize; 2],
    pairs: Vec<PairReport>,
}

fn capture_plane(dir: &Path, file: &str) -> CliResult<Plane> {
    let stem = Path::new(file).file_stem().unwrap_or_default();
    let path = dir.join(stem).with_extension("pgm");
    Ok(read_raw(&path)?.to_plane()?)
}

fn decode(s: &AlignSettings, manifest: &PatternManifest, dir: &Path) -> CliResult<(Homography, FitReport)> {
    let load =
        |frames: &[&super::gen_patterns::FrameEntry]| -> CliResult<Vec<Plane>> { frames.par_iter().map(|f| capture_plane(dir, &f.file)).collect() };
    let (cols, cols_inv) = manifest.gray_frames(Axis::Columns);
    let (rows, rows_inv) = manifest.gray_frames(Axis::Rows);
    if cols.is_empty() || rows.is_empty() {
        return Err(CliError::Config("pattern manifest must hold Gray-code frames for both axes".into()));
    }
    let (columns, row_planes) = (load(&cols)?, load(&rows)?);
    let opts = DecodeOptions { min_contrast: s.min_contrast, ..DecodeOptions::new(manifest.width, manifest.height) };
    let mut set = if !cols_inv.is_empty() && !rows_inv.is_empty() {
        let (ci, ri) = (load(&cols_inv)?, load(&rows_inv)?);
        decode_gray_code(&columns, &row_planes, Threshold::Inverse { columns: &ci, rows: &ri }, &opts)?
    } else {
        let white = read_raw(&dir.join("white.pgm"))?.to_plane()?;
        let black = read_raw(&dir.join("black.pgm"))?.to_plane()?;
        decode_gray_code(&columns, &row_planes, Threshold::Fields { white: &white, black: &black }, &opts)?
    };
    let total = set.len();
    if s.max_correspondences > 0 && total > s.max_correspondences {
        let stride = total.div_ceil(s.max_correspondences);
        set.pairs = set.pairs.into_iter().step_by(stride).collect();
    }
    let ransac = RansacOptions { threshold: s.ransac_threshold, iterations: s.ransac_iterations, seed: s.seed };
    let fit = fit_homography(&set, Some(&ransac))?;
    log::info!("decoded {total} correspondences, {} inliers, rms {:.3} px", fit.inliers.len(), fit.rms_error);
    Ok((fit.homography, FitReport { correspondences: total, used: set.len(), inliers: fit.inliers.len(), rms_error: fit.rms_error }))
}

/// Map from the `scale × ROI` ground-truth grid onto the HR grid of the ROI,
/// with pixel centers at integer coordinates on every grid.
pub fn gt_to_hr(h: &Homography, display: [usize; 2], roi: Roi, scale: usize) -> CliResult<Homography> {
    let (ow, oh) = ((scale * roi.width) as f64, (scale * roi.height) as f64);
    let (a, b) = (display[0] as f64 / ow, display[1] as f64 / oh);
    let to_display = Homography::from_rows([[a, 0.0, 0.5 * a - 0.5], [0.0, b, 0.5 * b - 0.5], [0.0, 0.0, 1.0]])?;
    let s = scale as f64;
    let half = (s - 1.0) / 2.0;
    let to_hr = Homography::from_rows([[s, 0.0, half - s * roi.x as f64], [0.0, s, half - s * roi.y as f64], [0.0, 0.0, 1.0]])?;
    Ok(to_hr.compose(&h.compose(&to_display)?)?)
}

pub fn run(ctx: &Ctx, args: Args) -> CliResult<()> {
    let resolved = ctx.resolve::<AlignSettings>(&args)?;
    let s = &resolved.settings;
    if s.capture.len() != s.gt.len() {
        return Err(CliError::Config(format!("{} captures but {} ground-truth images", s.capture.len(), s.gt.len())));
    }
    let manifest = s.patterns.as_deref().map(PatternManifest::read).transpose()?;
    let display = match (&manifest, s.display_size) {
        (_, Some(d)) => d,
        (Some(m), None) => [m.width, m.height],
        (None, None) => return Err(CliError::Missing("--display-size (or --patterns)".into())),
    };

    std::fs::create_dir_all(&s.out_dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", s.out_dir.display())))?;
    let (homography, fit) = match (&s.homography, &manifest, &s.captures) {
        (Some(path), _, _) => (read_json::<Homography>(path).map_err(|e| CliError::Config(e.to_string()))?, None),
        (None, Some(m), Some(dir)) => {
            let (h, fit) = ctx.in_pool(s.workers, || decode(s, m, dir))?;
            (h, Some(fit))
        }
        _ => return Err(CliError::Missing("--homography, or --patterns with --captures".into())),
    };
    write_json(&s.out_dir.join("homography.json"), &homography)?;

    let mut pairs = Vec::new();
    if !s.capture.is_empty() {
        let profile: CameraProfile = super::read_manifest(&required(s.profile.clone(), "profile")?)?;
        let response = match &s.response {
            Some(p) => super::read_manifest(p)?,
            None => DisplayResponse::identity(),
        };
        let pairs_dir = s.out_dir.join("pairs");
        std::fs::create_dir_all(&pairs_dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", pairs_dir.display())))?;
        pairs = ctx.in_pool(s.workers, || {
            s.capture
                .par_iter()
                .zip(&s.gt)
                .enumerate()
                .map(|(index, (capture_path, gt_path))| {
                    let capture = read_raw(capture_path)?;
                    let roi = match s.roi {
                        Some([x, y, width, height]) => Roi { x, y, width, height },
                        None => Roi { x: 0, y: 0, width: capture.width, height: capture.height },
                    };
                    if roi.x % 2 != 0 || roi.y % 2 != 0 {
                        return Err(CliError::Config(format!("ROI origin ({}, {}) must be even", roi.x, roi.y)));
                    }
                    let gt = read_image(gt_path)?;
                    let h = gt_to_hr(&homography, display, roi, s.scale)?;
                    let aligned = align_reference(&gt, &capture, &profile, &response, &h, roi, s.scale)?;
                    let (lr, hr, mask) = (format!("{index:06}_lr.pgm"), format!("{index:06}_hr.png"), format!("{index:06}_mask.png"));
                    write_raw(&pairs_dir.join(&lr), &capture.crop(roi.x, roi.y, roi.width, roi.height)?)?;
                    write_png16(&pairs_dir.join(&hr), &aligned.gt)?;
                    let mask_plane =
                        Plane::from_vec(aligned.gt.width, aligned.gt.height, aligned.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect())?;
                    write_png16_gray(&pairs_dir.join(&mask), &mask_plane)?;
                    let valid = aligned.mask.iter().filter(|&&m| m).count() as f64 / aligned.mask.len().max(1) as f64;
                    Ok(PairReport {
                        index,
                        capture: capture_path.clone(),
                        gt: gt_path.clone(),
                        lr: format!("pairs/{lr}"),
                        hr: format!("pairs/{hr}"),
                        mask: format!("pairs/{mask}"),
                        valid_fraction: valid,
                    })
                })
                .collect::<CliResult<Vec<_>>>()
        })?;
    }
    let result = AlignResult { homography, fit, display_size: display, pairs };
    ctx.emit(&resolved.echo, &result, Some(&s.out_dir))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gt_grid_maps_through_display_onto_hr_centers() {
        // display at twice the sensor resolution, ROI at (4, 2), scale 2
        let h = Homography::from_rows([[0.5, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let roi = Roi { x: 4, y: 2, width: 8, height: 6 };
        let m = gt_to_hr(&h, [64, 48], roi, 2).unwrap();
        // GT (3, 5) -> display (13.5, 21.5) -> sensor (6.75, 10.75) -> HR (6, 18)
        let p = m.apply([3.0, 5.0]);
        assert!((p[0] - 6.0).abs() < 1e-9 && (p[1] - 18.0).abs() < 1e-9, "{p:?}");
    }
}
