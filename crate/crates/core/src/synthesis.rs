//! Unprocessing of linear RGB images into low-resolution RAW training pairs:
//! range adjustment, per-channel blur with strided subsampling, mosaicking,
//! white-balance inversion and calibrated sensor noise.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{denormalize_raw, CameraProfile, LinearRgbImage, RawFrame, RawMeta};
use crate::io::{read_json, read_linear_rgb, write_json, write_png16, write_raw};
use crate::kernel::{forward_model, gen_gaussian_kernel, read_kernel_set, GaussianKernelSpec, SrKernelSet};
use crate::noise::{interpolate_all, sample_hg_noise_mosaic, HgParams, NoiseModel};

/// One kernel set of the pool with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolKernel {
    pub id: String,
    pub camera: String,
    pub set: SrKernelSet,
}

/// A calibrated noise model together with the profile it was measured on.
/// The profile's white-balance gains are the ones inverted before noise.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolNoise {
    pub camera: String,
    pub profile: CameraProfile,
    pub model: NoiseModel,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IsoSampler {
    /// Uniform in log ISO over the calibrated range.
    #[default]
    LogUniform,
    Uniform,
    Fixed {
        iso: f64,
    },
}

impl IsoSampler {
    pub fn sample(&self, model: &NoiseModel, rng: &mut impl Rng) -> f64 {
        let (min, max) = model.iso_range();
        match *self {
            IsoSampler::Fixed { iso } => iso,
            _ if min == max => min,
            IsoSampler::Uniform => rng.random_range(min..=max),
            IsoSampler::LogUniform => rng.random_range(min.ln()..=max.ln()).exp().clamp(min, max),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DegradationPool {
    pub kernels: Vec<PoolKernel>,
    pub noise: Vec<PoolNoise>,
    pub iso_sampler: IsoSampler,
}

impl DegradationPool {
    pub fn validate(&self) -> Result<usize> {
        if self.kernels.is_empty() || self.noise.is_empty() {
            return Err(Error::Config(format!(
                "degradation pool needs kernels and noise models, has {} and {}",
                self.kernels.len(),
                self.noise.len()
            )));
        }
        let scale = self.kernels[0].set.scale;
        if let Some(k) = self.kernels.iter().find(|k| k.set.scale != scale) {
            return Err(Error::Config(format!("kernel {} has scale {}, pool scale is {scale}", k.id, k.set.scale)));
        }
        Ok(scale)
    }

    /// Camera names referenced by either list.
    pub fn cameras(&self) -> BTreeSet<String> {
        self.kernels.iter().map(|k| k.camera.clone()).chain(self.noise.iter().map(|n| n.camera.clone())).collect()
    }
}

/// Range of the random Gaussian kernels of a parametric baseline pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaussianPoolSpec {
    pub count: usize,
    pub scale: usize,
    pub support: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Probability of drawing an isotropic kernel.
    pub isotropic_fraction: f64,
}

impl Default for GaussianPoolSpec {
    fn default() -> Self {
        GaussianPoolSpec { count: 100, scale: 4, support: 21, sigma_min: 0.2, sigma_max: 3.0, isotropic_fraction: 0.5 }
    }
}

/// Random isotropic and anisotropic Gaussian kernel sets, the same kernel on
/// all three channels.
pub fn gaussian_kernel_pool(spec: &GaussianPoolSpec, rng: &mut impl Rng) -> Result<Vec<PoolKernel>> {
    if !(spec.sigma_min > 0.0 && spec.sigma_min <= spec.sigma_max) || spec.scale == 0 {
        return Err(Error::Config(format!(
            "Gaussian pool needs 0 < sigma_min <= sigma_max and a positive scale, got {}..{}",
            spec.sigma_min, spec.sigma_max
        )));
    }
    (0..spec.count)
        .map(|i| {
            let sx = rng.random_range(spec.sigma_min..=spec.sigma_max);
            let kernel_spec = if rng.random_bool(spec.isotropic_fraction.clamp(0.0, 1.0)) {
                GaussianKernelSpec::isotropic(sx, spec.support)
            } else {
                let sy = rng.random_range(spec.sigma_min..=spec.sigma_max);
                let theta = rng.random_range(0.0..std::f64::consts::PI);
                GaussianKernelSpec::anisotropic(sx, sy, theta, spec.support)
            };
            Ok(PoolKernel {
                id: format!("gaussian/{i:05}"),
                camera: "gaussian".into(),
                set: SrKernelSet::uniform(gen_gaussian_kernel(&kernel_spec)?, spec.scale),
            })
        })
        .collect()
}

/// Everything needed to re-run one pair given the pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub kernel_id: String,
    pub noise_camera: String,
    pub iso: f64,
    pub wb_gains: [f64; 3],
    pub noise: [HgParams; 4],
    pub scale: usize,
    pub phase: [usize; 2],
    /// HR pixel of the input that LR pixel (0, 0) samples; also the top-left
    /// corner of the HR target inside the input.
    pub hr_offset: [usize; 2],
    pub lr_size: [usize; 2],
    pub black_level: f64,
    pub white_level: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthPair {
    /// Normalized samples; `record` holds the sensor levels applied on write.
    pub lr_raw: RawFrame,
    pub hr_target: LinearRgbImage,
    pub record: PairRecord,
}

/// Even LR extent whose sampling points and HR target both fit inside `hr`.
fn lr_extent(hr: usize, radius: usize, scale: usize) -> usize {
    if hr <= 2 * radius {
        return 0;
    }
    let valid = (hr - 2 * radius - 1) / scale + 1;
    let target = (hr - radius) / scale;
    valid.min(target) & !1
}

/// Degrades one HR image into an LR mosaic. The LR pixel `(i, j)` samples
/// the blurred input at `(s·j + m, s·i + m)` with `m` the kernel radius, and
/// the HR target is the input cropped at `(m, m)` to `s` times the LR size.
pub fn synthesize_pair(hr: &LinearRgbImage, profile: &CameraProfile, pool: &DegradationPool, scale: usize, rng: &mut impl Rng) -> Result<SynthPair> {
    let pool_scale = pool.validate()?;
    if pool_scale != scale {
        return Err(Error::Config(format!("pool kernels are for scale {pool_scale}, requested {scale}")));
    }
    let kernel = &pool.kernels[rng.random_range(0..pool.kernels.len())];
    let noise = &pool.noise[rng.random_range(0..pool.noise.len())];
    let iso = pool.iso_sampler.sample(&noise.model, rng);
    let params = interpolate_all(&noise.model, iso, false)?;
    let wb = noise.profile.wb_gains;

    let m = kernel.set.support() / 2;
    let (lw, lh) = (lr_extent(hr.width, m, scale), lr_extent(hr.height, m, scale));
    if lw < 2 || lh < 2 {
        return Err(Error::Dimension(format!(
            "{}x{} HR input leaves no LR quad after a {m}-pixel kernel margin at scale {scale}",
            hr.width, hr.height
        )));
    }

    // range adjustment is the identity in normalized units; levels go to the record
    let blurred = forward_model(hr, &kernel.set.kernels, scale, [0, 0], profile.cfa)?;
    let mut lr = blurred.crop(0, 0, lw, lh)?;
    for y in 0..lh {
        for x in 0..lw {
            let g = wb[profile.cfa.channel_at(y, x).rgb_index()];
            let i = y * lw + x;
            lr.data[i] = (lr.data[i] as f64 / g) as f32;
        }
    }
    let mut lr = sample_hg_noise_mosaic(&lr, profile.cfa, &params, rng, false)?;
    for v in &mut lr.data {
        *v = v.clamp(0.0, 1.0);
    }

    let meta = RawMeta { iso, wb_gains: wb, ..RawMeta::normalized(profile.cfa) };
    Ok(SynthPair {
        lr_raw: RawFrame::from_plane(lr, meta)?,
        hr_target: hr.crop(m, m, scale * lw, scale * lh)?,
        record: PairRecord {
            kernel_id: kernel.id.clone(),
            noise_camera: noise.camera.clone(),
            iso,
            wb_gains: wb,
            noise: params,
            scale,
            phase: [0, 0],
            hr_offset: [m, m],
            lr_size: [lw, lh],
            black_level: profile.black_level,
            white_level: profile.white_level,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub count: usize,
    /// Side of the square HR crop taken from each input.
    pub patch_size: usize,
    pub scale: usize,
    pub seed: u64,
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub index: usize,
    pub source: String,
    /// Top-left corner of the HR crop inside the source image.
    pub crop: [usize; 2],
    pub lr: String,
    pub hr: String,
    #[serde(flatten)]
    pub record: PairRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub camera: String,
    pub seed: u64,
    pub scale: usize,
    pub patch_size: usize,
    pub sources: Vec<String>,
    pub skipped: Vec<String>,
    pub pairs: Vec<PairEntry>,
}

/// Random stream of pair `index`; independent of scheduling.
pub fn pair_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn list_inputs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png") || e == "json"))
        .collect();
    paths.sort();
    Ok(paths)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Synthesizes `cfg.count` pairs from the images in `input_dir` into
/// `out_dir/pairs` and writes `out_dir/manifest.json`. Sources are drawn with
/// replacement; pair `i` depends only on `(cfg.seed, i)`.
pub fn batch_synthesize(
    input_dir: &Path,
    out_dir: &Path,
    profile: &CameraProfile,
    pool: &DegradationPool,
    cfg: &BatchConfig,
) -> Result<DatasetManifest> {
    profile.validate()?;
    pool.validate()?;
    if cfg.workers == 0 || cfg.scale == 0 || cfg.patch_size == 0 {
        return Err(Error::Config("workers, scale and patch size must be positive".into()));
    }
    let mut sources = Vec::new();
    let mut skipped = Vec::new();
    for path in list_inputs(input_dir)? {
        match read_linear_rgb(&path) {
            Ok(img) if img.width >= cfg.patch_size && img.height >= cfg.patch_size => sources.push(path),
            Ok(img) => {
                warn!("skipping {}: {}x{} is smaller than the {} patch", path.display(), img.width, img.height, cfg.patch_size);
                skipped.push(file_name(&path));
            }
            Err(e) => {
                warn!("skipping unreadable input {}: {e}", path.display());
                skipped.push(file_name(&path));
            }
        }
    }
    if sources.is_empty() && cfg.count > 0 {
        return Err(Error::Config(format!("no usable inputs in {}", input_dir.display())));
    }
    let pairs_dir = out_dir.join("pairs");
    std::fs::create_dir_all(&pairs_dir).map_err(|e| Error::io(&pairs_dir, e))?;

    let threads = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build().map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let pairs: Vec<PairEntry> = threads.install(|| {
        (0..cfg.count)
            .into_par_iter()
            .map(|index| {
                let mut rng = pair_rng(cfg.seed, index);
                let src = &sources[rng.random_range(0..sources.len())];
                let img = read_linear_rgb(src)?;
                let p = cfg.patch_size;
                let crop = [rng.random_range(0..=img.width - p), rng.random_range(0..=img.height - p)];
                let hr = img.crop(crop[0], crop[1], p, p)?;
                let pair = synthesize_pair(&hr, profile, pool, cfg.scale, &mut rng)?;
                let lr_name = format!("{index:06}_lr.pgm");
                let hr_name = format!("{index:06}_hr.png");
                let digital = denormalize_raw(&pair.lr_raw, profile.black_level, profile.white_level)?;
                write_raw(&pairs_dir.join(&lr_name), &digital)?;
                write_png16(&pairs_dir.join(&hr_name), &pair.hr_target)?;
                Ok(PairEntry {
                    index,
                    source: file_name(src),
                    crop,
                    lr: format!("pairs/{lr_name}"),
                    hr: format!("pairs/{hr_name}"),
                    record: pair.record,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let manifest = DatasetManifest {
        camera: profile.name.clone(),
        seed: cfg.seed,
        scale: cfg.scale,
        patch_size: cfg.patch_size,
        sources: sources.iter().map(|p| file_name(p)).collect(),
        skipped,
        pairs,
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    info!("wrote {} pairs to {}", manifest.pairs.len(), out_dir.display());
    Ok(manifest)
}

/// Loads kernel directories (one per camera, named after it) and camera
/// profiles with their noise models, dropping every camera in `exclude`.
pub fn pool_from_calibration(kernel_dirs: &[PathBuf], profiles: &[PathBuf], exclude: &[String]) -> Result<DegradationPool> {
    let excluded = |name: &str| exclude.iter().any(|e| e == name);
    let mut kernels = Vec::new();
    for dir in kernel_dirs {
        let camera = file_name(dir);
        if excluded(&camera) {
            continue;
        }
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json") && p.with_extension("f32").exists())
            .collect();
        paths.sort();
        for p in paths {
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            kernels.push(PoolKernel { id: format!("{camera}/{stem}"), camera: camera.clone(), set: read_kernel_set(&p)? });
        }
    }
    let mut noise = Vec::new();
    for path in profiles {
        let profile: CameraProfile = read_json(path)?;
        profile.validate()?;
        if excluded(&profile.name) {
            continue;
        }
        let rel = profile.noise_model.clone().ok_or_else(|| Error::Config(format!("profile {} names no noise model", path.display())))?;
        let model_path = path.parent().unwrap_or(Path::new(".")).join(rel);
        let model = NoiseModel::read(&model_path)?;
        if model.iso_set != profile.iso_set {
            return Err(Error::Config(format!(
                "noise model {} is calibrated at {:?}, profile {} lists {:?}",
                model_path.display(),
                model.iso_set,
                profile.name,
                profile.iso_set
            )));
        }
        noise.push(PoolNoise { camera: profile.name.clone(), profile, model });
    }
    let pool = DegradationPool { kernels, noise, iso_sampler: IsoSampler::default() };
    pool.validate().map_err(|e| match e {
        Error::Config(msg) if !exclude.is_empty() => Error::Config(format!("{msg} after excluding {exclude:?}")),
        other => other,
    })?;
    Ok(pool)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{CfaChannel, CfaPattern};
    use crate::kernel::Kernel;
    use crate::noise::fit_iso_curves;

    pub(crate) fn profile(wb: [f64; 3]) -> CameraProfile {
        CameraProfile {
            name: "cam".into(),
            cfa: CfaPattern::RGGB,
            black_level: 64.0,
            white_level: 1023.0,
            wb_gains: wb,
            iso_set: vec![100.0, 400.0, 1600.0],
            noise_model: None,
            kernel_grid: [1, 1],
        }
    }

    pub(crate) fn flat_model(beta1: f64, beta2: f64) -> NoiseModel {
        let params: Vec<HgParams> =
            CfaChannel::ALL.into_iter().flat_map(|channel| [100.0, 400.0, 1600.0].map(|iso| HgParams { beta1, beta2, channel, iso })).collect();
        fit_iso_curves(&params).unwrap()
    }

    fn pool(kernel: Kernel, scale: usize, wb: [f64; 3], beta: (f64, f64)) -> DegradationPool {
        DegradationPool {
            kernels: vec![PoolKernel { id: "k".into(), camera: "cam".into(), set: SrKernelSet::uniform(kernel, scale) }],
            noise: vec![PoolNoise { camera: "cam".into(), profile: profile(wb), model: flat_model(beta.0, beta.1) }],
            iso_sampler: IsoSampler::default(),
        }
    }

    #[test]
    fn paper_patch_size_gives_even_lr_and_registered_target() {
        let hr = LinearRgbImage::from_fn(256, 256, |x, y| std::array::from_fn(|c| ((x + 2 * y + c) % 17) as f32 / 16.0));
        let kernel = gen_gaussian_kernel(&GaussianKernelSpec::isotropic(1.0, 21)).unwrap();
        let pool = pool(kernel, 4, [1.0; 3], (0.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pair = synthesize_pair(&hr, &profile([1.0; 3]), &pool, 4, &mut rng).unwrap();
        assert_eq!((pair.lr_raw.width, pair.lr_raw.height), (58, 58));
        assert_eq!((pair.hr_target.width, pair.hr_target.height), (232, 232));
        assert_eq!(pair.record.hr_offset, [10, 10]);
        assert_eq!(pair.hr_target.pixel(0, 0), hr.pixel(10, 10));
    }

    #[test]
    fn tiny_input_is_a_dimension_error() {
        let hr = LinearRgbImage::uniform(22, 22, [0.5; 3]);
        let pool = pool(Kernel::delta(21).unwrap(), 4, [1.0; 3], (0.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = synthesize_pair(&hr, &profile([1.0; 3]), &pool, 4, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn empty_pool_and_scale_mismatch_are_config_errors() {
        let hr = LinearRgbImage::uniform(64, 64, [0.5; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = pool(Kernel::delta(5).unwrap(), 2, [1.0; 3], (0.0, 0.0));
        assert!(matches!(synthesize_pair(&hr, &profile([1.0; 3]), &p, 4, &mut rng), Err(Error::Config(_))));
        p.kernels.clear();
        assert!(matches!(synthesize_pair(&hr, &profile([1.0; 3]), &p, 2, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn log_uniform_iso_stays_in_range() {
        let model = flat_model(1e-4, 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let isos: Vec<f64> = (0..1000).map(|_| IsoSampler::LogUniform.sample(&model, &mut rng)).collect();
        assert!(isos.iter().all(|&i| (100.0..=1600.0).contains(&i)));
        let below_400 = isos.iter().filter(|&&i| i < 400.0).count();
        assert!((400..600).contains(&below_400), "{below_400}");
    }

    #[test]
    fn wb_division_happens_before_noise() {
        let hr = LinearRgbImage::uniform(68, 68, [0.4, 0.4, 0.4]);
        let wb = [2.0, 1.0, 1.6];
        let p = pool(Kernel::delta(5).unwrap(), 2, wb, (0.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pair = synthesize_pair(&hr, &profile([1.0; 3]), &p, 2, &mut rng).unwrap();
        let plane = pair.lr_raw.to_plane_unclipped().unwrap();
        assert_eq!(plane.get(0, 0), (0.4f32 as f64 / 2.0) as f32);
        assert_eq!(plane.get(1, 1), (0.4f32 as f64 / 1.6) as f32);
        assert_eq!(pair.lr_raw.meta.wb_gains, wb);
    }

    #[test]
    fn gaussian_pool_kernels_are_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = GaussianPoolSpec { count: 10, ..Default::default() };
        let pool = gaussian_kernel_pool(&spec, &mut rng).unwrap();
        assert_eq!(pool.len(), 10);
        assert!(pool.iter().all(|k| (k.set.kernels[0].sum() - 1.0).abs() < 1e-9 && k.set.scale == 4));
        let bad = GaussianPoolSpec { sigma_min: 0.0, ..spec };
        assert!(gaussian_kernel_pool(&bad, &mut rng).is_err());
    }
}
