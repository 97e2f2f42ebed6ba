use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use rawforge::synthesis::{batch_synthesize, pool_from_calibration, BatchConfig, IsoSampler};
use rawforge::CameraProfile;

use super::read_manifest;
use crate::config::Settings;
use crate::error::{required, CliError, CliResult};
use crate::Ctx;

#[derive(Debug, Default, clap::Args, Serialize)]
pub struct Args {
    /// Directory of clean HR images (PNG or float-field JSON)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    input_dir: Option<PathBuf>,
    /// Dataset output directory
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out_dir: Option<PathBuf>,
    /// Target camera profile (CFA and sensor levels of the LR RAW)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    profile: Option<PathBuf>,
    /// Kernel directory of one camera, named after it (repeatable)
    #[arg(long = "kernels")]
    #[serde(skip_serializing_if = "Option::is_none")]
    kernel_dirs: Option<Vec<PathBuf>>,
    /// Camera profile whose noise model joins the pool (repeatable)
    #[arg(long = "noise-profile")]
    #[serde(skip_serializing_if = "Option::is_none")]
    noise_profiles: Option<Vec<PathBuf>>,
    /// Camera names left out of the pool (repeatable or comma separated)
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    exclude: Option<Vec<String>>,
    /// Number of pairs
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    count: Option<usize>,
    /// Side of the square HR crop
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    patch_size: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub input_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub profile: Option<PathBuf>,
    pub kernel_dirs: Vec<PathBuf>,
    pub noise_profiles: Vec<PathBuf>,
    pub exclude: Vec<String>,
    pub count: usize,
    pub patch_size: usize,
    pub iso_sampler: IsoSampler,
    pub seed: u64,
    pub workers: usize,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            input_dir: None,
            out_dir: None,
            profile: None,
            kernel_dirs: Vec::new(),
            noise_profiles: Vec::new(),
            exclude: Vec::new(),
            count: 100,
            patch_size: 256,
            iso_sampler: IsoSampler::default(),
            seed: 0,
            workers: 1,
        }
    }
}

impl Settings for SynthSettings {
    const PATH_KEYS: &'static [&'static str] = &["input_dir", "out_dir", "profile", "kernel_dirs", "noise_profiles"];
}

#[derive(Serialize)]
struct SynthResult {
    pairs: usize,
    scale: usize,
    kernels: usize,
    kernel_cameras: BTreeSet<String>,
    noise_cameras: Vec<String>,
    excluded: Vec<String>,
    sources: usize,
    skipped: Vec<String>,
    manifest: PathBuf,
}

pub fn run(ctx: &Ctx, args: Args) -> CliResult<()> {
    let resolved = ctx.resolve::<SynthSettings>(&args)?;
    let s = &resolved.settings;
    let input = required(s.input_dir.clone(), "input-dir")?;
    let out = required(s.out_dir.clone(), "out-dir")?;
    let profile: CameraProfile = read_manifest(&required(s.profile.clone(), "profile")?)?;
    if s.kernel_dirs.is_empty() {
        return Err(CliError::Missing("--kernels".into()));
    }
    if s.noise_profiles.is_empty() {
        return Err(CliError::Missing("--noise-profile".into()));
    }
    let mut pool = pool_from_calibration(&s.kernel_dirs, &s.noise_profiles, &s.exclude)?;
    pool.iso_sampler = s.iso_sampler;
    let scale = pool.validate()?;
    let cfg = BatchConfig { count: s.count, patch_size: s.patch_size, scale, seed: s.seed, workers: s.workers };
    let manifest = ctx.in_pool(s.workers, || Ok(batch_synthesize(&input, &out, &profile, &pool, &cfg)?))?;
    let result = SynthResult {
        pairs: manifest.pairs.len(),
        scale,
        kernels: pool.kernels.len(),
        kernel_cameras: pool.kernels.iter().map(|k| k.camera.clone()).collect(),
        noise_cameras: pool.noise.iter().map(|n| n.camera.clone()).collect(),
        excluded: s.exclude.clone(),
        sources: manifest.sources.len(),
        skipped: manifest.skipped,
        manifest: out.join("manifest.json"),
    };
    ctx.emit(&resolved.echo, &result, Some(&out))
}
