use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rawforge::alignment::Roi;
use rawforge::noise::{estimate_hg_params, fit_iso_curves, HgEstimateOptions, HgParams, NoiseModel};
use rawforge::CameraProfile;

use super::{base_dir, read_burst, read_manifest};
use crate::config::{relative_to, Settings};
use crate::error::{required, CliError, CliResult};
use crate::Ctx;

#[derive(Debug, Default, clap::Args, Serialize)]
pub struct Args {
    /// Noise manifest: profile, homogeneous regions and one burst directory per ISO
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    manifest: Option<PathBuf>,
    /// ISO levels to calibrate, comma separated (all manifest bursts when absent)
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    isos: Option<Vec<f64>>,
    /// Output noise model JSON
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    /// Reweighting passes of the variance-line fit
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    reweight_iterations: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSettings {
    pub manifest: Option<PathBuf>,
    pub isos: Option<Vec<f64>>,
    pub model: PathBuf,
    pub reweight_iterations: usize,
    pub min_level_separation: f64,
    pub homogeneity_ratio: f64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for NoiseSettings {
    fn default() -> Self {
        let o = HgEstimateOptions::default();
        NoiseSettings {
            manifest: None,
            isos: None,
            model: PathBuf::from("noise_model.json"),
            reweight_iterations: o.reweight_iterations,
            min_level_separation: o.min_level_separation,
            homogeneity_ratio: o.homogeneity_ratio,
            seed: 0,
            workers: 1,
        }
    }
}

impl Settings for NoiseSettings {
    const PATH_KEYS: &'static [&'static str] = &["manifest", "model"];
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BurstSpec {
    pub iso: f64,
    pub dir: PathBuf,
}

/// Inputs of a noise calibration run; paths are relative to the manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseManifest {
    #[serde(default)]
    pub profile: Option<PathBuf>,
    /// Homogeneous sensor regions (e.g. gray patches), shared by all bursts.
    pub regions: Vec<Roi>,
    pub bursts: Vec<BurstSpec>,
}

#[derive(Serialize)]
struct NoiseResult {
    model: PathBuf,
    iso_set: Vec<f64>,
    /// Per ISO: R, G1, G2, B parameters.
    calibrated: Vec<[HgParams; 4]>,
    /// Largest ISO-curve residual at a calibrated node, relative to the parameter's peak.
    max_curve_residual: f64,
}

pub fn run(ctx: &Ctx, args: Args) -> CliResult<()> {
    let resolved = ctx.resolve::<NoiseSettings>(&args)?;
    let s = &resolved.settings;
    let manifest_path = required(s.manifest.clone(), "manifest")?;
    let manifest: NoiseManifest = read_manifest(&manifest_path)?;
    let base = base_dir(&manifest_path);
    if manifest.bursts.is_empty() || manifest.regions.is_empty() {
        return Err(CliError::Config(format!("manifest {} needs bursts and regions", manifest_path.display())));
    }
    let profile: Option<CameraProfile> = manifest.profile.as_ref().map(|p| read_manifest(&relative_to(&base, p))).transpose()?;
    let isos = match (&s.isos, &profile) {
        (Some(isos), _) => isos.clone(),
        (None, Some(p)) => p.iso_set.clone(),
        (None, None) => {
            let mut all: Vec<f64> = manifest.bursts.iter().map(|b| b.iso).collect();
            all.sort_by(f64::total_cmp);
            all
        }
    };
    if isos.windows(2).any(|w| !(w[0] < w[1])) || isos.len() < 3 {
        return Err(CliError::Config(format!("need at least 3 strictly increasing ISO levels, got {isos:?}")));
    }
    let selected: Vec<&BurstSpec> = isos
        .iter()
        .map(|&iso| {
            manifest
                .bursts
                .iter()
                .find(|b| b.iso == iso)
                .ok_or_else(|| CliError::Config(format!("no burst at ISO {iso} in {}", manifest_path.display())))
        })
        .collect::<CliResult<_>>()?;
    let opts = HgEstimateOptions {
        reweight_iterations: s.reweight_iterations,
        min_level_separation: s.min_level_separation,
        homogeneity_ratio: s.homogeneity_ratio,
    };

    let calibrated: Vec<[HgParams; 4]> = ctx.in_pool(s.workers, || {
        selected
            .par_iter()
            .map(|b| {
                let burst = read_burst(&relative_to(&base, &b.dir))?;
                if let Some(f) = burst.iter().find(|f| f.meta.iso != b.iso) {
                    log::warn!("burst {} is labelled ISO {} but its frames say {}", b.dir.display(), b.iso, f.meta.iso);
                }
                let mut params = estimate_hg_params(&burst, &manifest.regions, &opts)?;
                for p in &mut params {
                    p.iso = b.iso;
                }
                Ok(params)
            })
            .collect::<CliResult<_>>()
    })?;
    let flat: Vec<HgParams> = calibrated.iter().flatten().copied().collect();
    let model: NoiseModel = fit_iso_curves(&flat)?;
    model.write(&s.model)?;

    let mut worst: f64 = 0.0;
    for fit in &model.fits {
        let nodes: Vec<&HgParams> = flat.iter().filter(|p| p.channel == fit.channel).collect();
        let peak1 = nodes.iter().map(|p| p.beta1.abs()).fold(f64::MIN_POSITIVE, f64::max);
        let peak2 = nodes.iter().map(|p| p.beta2.abs()).fold(f64::MIN_POSITIVE, f64::max);
        for p in nodes {
            worst = worst.max((fit.beta1.eval(p.iso) - p.beta1).abs() / peak1).max((fit.beta2.eval(p.iso) - p.beta2).abs() / peak2);
        }
    }
    let result = NoiseResult { model: s.model.clone(), iso_set: model.iso_set.clone(), calibrated, max_curve_residual: worst };
    ctx.emit(&resolved.echo, &result, None)
}
