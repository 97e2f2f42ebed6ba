pub mod align;
pub mod evaluate;
pub mod gen_patterns;
pub mod kernels;
pub mod noise;
pub mod synthesize;

use std::path::{Path, PathBuf};

use rawforge::image::{demosaic_bilinear, LinearRgbImage};
use rawforge::io::{read_linear_rgb, read_raw};
use rawforge::RawFrame;

use crate::error::{CliError, CliResult};

/// Sorted `*.pgm` files of a burst directory.
pub fn burst_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Config(format!("cannot list burst directory {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> =
        entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"))).collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Config(format!("burst directory {} holds no .pgm frames", dir.display())));
    }
    Ok(files)
}

pub fn read_burst(dir: &Path) -> CliResult<Vec<RawFrame>> {
    burst_files(dir)?.iter().map(|p| read_raw(p).map_err(CliError::from)).collect()
}

/// Loads a PNG/float-field image, or demosaics a RAW `.pgm` into normalized RGB.
pub fn read_image(path: &Path) -> CliResult<LinearRgbImage> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
        let raw = read_raw(path)?;
        Ok(demosaic_bilinear(&raw.to_plane()?, raw.meta.cfa)?)
    } else {
        Ok(read_linear_rgb(path)?)
    }
}

/// Reads a JSON document that names the inputs of a run; failures are
/// configuration errors.
pub fn read_manifest<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    rawforge::io::read_json(path).map_err(|e| CliError::Config(format!("cannot load {}: {e}", path.display())))
}

/// Directory of `path`, for resolving paths stated relative to it.
pub fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}
