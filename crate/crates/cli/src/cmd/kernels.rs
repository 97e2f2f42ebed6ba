use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rawforge::alignment::Homography;
use rawforge::image::Plane;
use rawforge::io::{read_raw, write_json};
use rawforge::kernel::{average_burst, estimate_fov_grid, write_kernel_set, KernelEstimationConfig, PatchTask};
use rawforge::radiometric::TwoPointFields;
use rawforge::{CameraProfile, CfaPattern};

use super::{base_dir, read_burst, read_image, read_manifest};
use crate::config::{relative_to, Settings};
use crate::error::{required, CliError, CliResult};
use crate::Ctx;

#[derive(Debug, Default, clap::Args, Serialize)]
pub struct Args {
    /// Calibration manifest: profile, homography, white/black captures and (pattern, burst) pairs
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    manifest: Option<PathBuf>,
    /// Output directory for kernel sets and summary.json
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out_dir: Option<PathBuf>,
    /// LR patch side N
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    patch_size: Option<usize>,
    /// Super-resolution factor s
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    scale: Option<usize>,
    /// Minimum number of pattern/burst pairs per patch
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    batch: Option<usize>,
    /// Kernel support K (odd)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    support: Option<usize>,
    /// Optimizer iterations
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
    /// Kernel step size
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lr_kernel: Option<f64>,
    /// Homography step size
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lr_homography: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSettings {
    pub manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub patch_size: usize,
    pub scale: usize,
    pub batch: usize,
    pub support: usize,
    pub iterations: usize,
    pub lr_kernel: f64,
    pub lr_homography: f64,
    pub lr_final_ratio: f64,
    pub huber_delta: f64,
    pub plateau_window: usize,
    pub plateau_tolerance: f64,
    pub centroid_weight: f64,
    pub refine_homography: bool,
    pub precondition: bool,
    pub precondition_ridge: f64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for KernelSettings {
    fn default() -> Self {
        let c = KernelEstimationConfig::default();
        KernelSettings {
            manifest: None,
            out_dir: PathBuf::from("kernels"),
            patch_size: c.patch_size,
            scale: c.scale,
            batch: c.batch_size,
            support: c.support,
            iterations: c.iterations,
            lr_kernel: c.lr_kernel,
            lr_homography: c.lr_homography,
            lr_final_ratio: c.lr_final_ratio,
            huber_delta: c.huber_delta,
            plateau_window: c.plateau_window,
            plateau_tolerance: c.plateau_tolerance,
            centroid_weight: c.centroid_weight,
            refine_homography: c.refine_homography,
            precondition: c.precondition,
            precondition_ridge: c.precondition_ridge,
            seed: c.seed,
            workers: 1,
        }
    }
}

impl Settings for KernelSettings {
    const PATH_KEYS: &'static [&'static str] = &["manifest", "out_dir"];
}

impl KernelSettings {
    fn estimation_config(&self) -> KernelEstimationConfig {
        KernelEstimationConfig {
            batch_size: self.batch,
            iterations: self.iterations,
            lr_kernel: self.lr_kernel,
            lr_homography: self.lr_homography,
            lr_final_ratio: self.lr_final_ratio,
            patch_size: self.patch_size,
            scale: self.scale,
            support: self.support,
            huber_delta: self.huber_delta,
            plateau_window: self.plateau_window,
            plateau_tolerance: self.plateau_tolerance,
            centroid_weight: self.centroid_weight,
            refine_homography: self.refine_homography,
            precondition: self.precondition,
            precondition_ridge: self.precondition_ridge,
            seed: self.seed,
            ..KernelEstimationConfig::default()
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairSpec {
    /// Displayed pattern image.
    pub pattern: PathBuf,
    /// Directory of RAW captures of that pattern.
    pub burst: PathBuf,
}

/// Inputs of a kernel calibration run; paths are relative to the manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelManifest {
    pub profile: PathBuf,
    /// Display → sensor homography.
    pub homography: PathBuf,
    pub white: PathBuf,
    pub black: PathBuf,
    /// FOV grid as `[rows, cols]`; the profile's grid when absent.
    #[serde(default)]
    pub grid: Option<[usize; 2]>,
    #[serde(default)]
    pub pairs: Vec<PairSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PatchSummary {
    pub index: [usize; 2],
    /// Sensor pixel of the patch's top-left LR sample.
    pub origin: [usize; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// `summary.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelSummary {
    pub camera: String,
    pub grid: [usize; 2],
    pub patch_size: usize,
    pub scale: usize,
    pub support: usize,
    pub converged: usize,
    pub failed: usize,
    pub max_residual: Option<f64>,
    pub mean_residual: Option<f64>,
    pub patches: Vec<PatchSummary>,
}

/// Top-left sensor pixel of patch `(r, c)`: centered in its grid cell and
/// snapped down to an even position so every patch keeps the CFA phase.
pub fn patch_origin(sensor: [usize; 2], grid: [usize; 2], n: usize, r: usize, c: usize) -> CliResult<[usize; 2]> {
    let (cw, ch) = (sensor[0] / grid[1], sensor[1] / grid[0]);
    if n > cw || n > ch {
        return Err(CliError::Config(format!("patch size {n} exceeds the {cw}x{ch} FOV cells of a {}x{} grid", grid[0], grid[1])));
    }
    let even = |v: usize| v & !1;
    Ok([even(c * cw + (cw - n) / 2), even(r * ch + (ch - n) / 2)])
}

/// Sensor → patch HR grid: LR sample `(x0 + j)` sits at HR `m + s·j`.
pub fn sensor_to_patch(origin: [usize; 2], scale: usize, margin: usize) -> CliResult<Homography> {
    let s = scale as f64;
    let m = margin as f64;
    Ok(Homography::from_rows([[s, 0.0, m - s * origin[0] as f64], [0.0, s, m - s * origin[1] as f64], [0.0, 0.0, 1.0]])?)
}

pub fn run(ctx: &Ctx, args: Args) -> CliResult<()> {
    let resolved = ctx.resolve::<KernelSettings>(&args)?;
    let s = &resolved.settings;
    let manifest_path = required(s.manifest.clone(), "manifest")?;
    let manifest: KernelManifest = read_manifest(&manifest_path)?;
    let base = base_dir(&manifest_path);
    if manifest.pairs.is_empty() {
        return Err(CliError::Config(format!("manifest {} lists no pattern/burst pairs", manifest_path.display())));
    }
    let cfg = s.estimation_config();
    cfg.validate()?;
    if manifest.pairs.len() < cfg.batch_size {
        return Err(CliError::Config(format!("manifest lists {} pairs, fewer than the batch of {}", manifest.pairs.len(), cfg.batch_size)));
    }
    let profile: CameraProfile = read_manifest(&relative_to(&base, &manifest.profile))?;
    profile.validate()?;
    let h: Homography = read_manifest(&relative_to(&base, &manifest.homography))?;
    let grid = manifest.grid.unwrap_or(profile.kernel_grid);
    let white = read_raw(&relative_to(&base, &manifest.white))?;
    let black = read_raw(&relative_to(&base, &manifest.black))?;

    let summary = ctx.in_pool(s.workers, || {
        let loaded: Vec<(Plane, Plane, CfaPattern)> = manifest
            .pairs
            .par_iter()
            .map(|p| {
                let pattern = read_image(&relative_to(&base, &p.pattern))?.channel(1);
                let mean = average_burst(&read_burst(&relative_to(&base, &p.burst))?)?;
                let cfa = mean.meta.cfa;
                Ok((pattern, mean.to_plane()?, cfa))
            })
            .collect::<CliResult<_>>()?;
        let (sw, sh) = (loaded[0].1.width, loaded[0].1.height);
        if loaded.iter().any(|(_, m, c)| m.width != sw || m.height != sh || *c != loaded[0].2) {
            return Err(CliError::Config("bursts differ in size or CFA".into()));
        }
        if (white.width, white.height) != (sw, sh) || (black.width, black.height) != (sw, sh) {
            return Err(CliError::Config("white/black captures do not match the burst size".into()));
        }
        let cfa = loaded[0].2;
        if cfa != profile.cfa {
            log::warn!("burst CFA {cfa} differs from profile {}; using the captures' layout", profile.cfa);
        }
        let (n, margin, extent) = (cfg.patch_size, cfg.support / 2, cfg.hr_extent());
        let mut tasks = Vec::new();
        let mut origins = Vec::new();
        for r in 0..grid[0] {
            for c in 0..grid[1] {
                let origin = patch_origin([sw, sh], grid, n, r, c)?;
                let shift = margin as f64 / cfg.scale as f64;
                let window = [origin[0] as f64 - shift, origin[1] as f64 - shift];
                let fields = TwoPointFields::from_raw_captures(&white, &black, window, extent, extent, cfg.scale as f64)?;
                let measured = loaded.iter().map(|(_, m, _)| m.crop(origin[0], origin[1], n, n)).collect::<rawforge::Result<Vec<_>>>()?;
                tasks.push(PatchTask {
                    index: [r, c],
                    measured,
                    displayed: loaded.iter().map(|(p, _, _)| p.clone()).collect(),
                    init_h: sensor_to_patch(origin, cfg.scale, margin)?.compose(&h)?,
                    fields,
                    cfa,
                });
                origins.push(origin);
            }
        }
        std::fs::create_dir_all(&s.out_dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", s.out_dir.display())))?;
        let results = estimate_fov_grid(&tasks, &cfg, s.workers)?;
        let mut patches = Vec::new();
        for (result, origin) in results.into_iter().zip(origins) {
            patches.push(match result {
                Ok(set) => {
                    let [r, c] = set.patch_index;
                    let file = format!("kernel_r{r:02}_c{c:02}.json");
                    write_kernel_set(&s.out_dir.join(&file), &set)?;
                    PatchSummary {
                        index: set.patch_index,
                        origin,
                        file: Some(file),
                        residual: Some(set.residual),
                        iterations: Some(set.iterations),
                        error: None,
                    }
                }
                Err(failure) => {
                    log::warn!("patch {:?} failed: {}", failure.index, failure.message);
                    PatchSummary { index: failure.index, origin, file: None, residual: None, iterations: None, error: Some(failure.message) }
                }
            });
        }
        let residuals: Vec<f64> = patches.iter().filter_map(|p| p.residual).collect();
        Ok(KernelSummary {
            camera: profile.name.clone(),
            grid,
            patch_size: n,
            scale: cfg.scale,
            support: cfg.support,
            converged: residuals.len(),
            failed: patches.len() - residuals.len(),
            max_residual: residuals.iter().copied().reduce(f64::max),
            mean_residual: (!residuals.is_empty()).then(|| residuals.iter().sum::<f64>() / residuals.len() as f64),
            patches,
        })
    })?;
    write_json(&s.out_dir.join("summary.json"), &summary)?;
    ctx.emit(&resolved.echo, &summary, Some(&s.out_dir))?;
    if summary.converged == 0 {
        return Err(CliError::Runtime("no FOV patch converged".into()));
    }
    Ok(())
}
