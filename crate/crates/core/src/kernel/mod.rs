//! Super-resolution blur kernels: representation, Gaussian generation, the
//! differentiable monitor-to-sensor forward model and the joint
//! kernel/homography estimator.

mod estimate;
mod forward;

pub use estimate::{average_burst, estimate_fov_grid, estimate_kernels, KernelEstimationConfig, PatchFailure, PatchTask};
pub use forward::{forward_model, kernel_gram, loss_and_gradient, EstimationData, LossGradient};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alignment::Homography;
use crate::error::{Error, Result};
use crate::io::{read_bytes, read_json, write_atomic, write_json};

/// Square 2-D kernel with odd support, row-major, offset `(0, 0)` at the centre.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    pub size: usize,
    pub taps: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, taps: Vec<f64>) -> Result<Kernel> {
        if size.is_multiple_of(2) {
            return Err(Error::Argument(format!("kernel support must be odd, got {size}")));
        }
        if taps.len() != size * size {
            return Err(Error::Dimension(format!("{size}x{size} kernel needs {} taps, got {}", size * size, taps.len())));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::Argument("kernel taps must be finite".into()));
        }
        Ok(Kernel { size, taps })
    }

    pub fn delta(size: usize) -> Result<Kernel> {
        let mut taps = vec![0.0; size * size];
        taps[size * size / 2] = 1.0;
        Kernel::new(size, taps)
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    /// Tap at offset `(dx, dy)` from the centre.
    pub fn at(&self, dx: isize, dy: isize) -> f64 {
        let m = self.radius() as isize;
        self.taps[((dy + m) * self.size as isize + dx + m) as usize]
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }

    pub fn mass(&self) -> f64 {
        self.taps.iter().map(|t| t.abs()).sum()
    }

    pub fn center_tap(&self) -> f64 {
        self.taps[self.size * self.size / 2]
    }

    /// `Σ |a − b| / Σ |b|`.
    pub fn relative_l1(&self, reference: &Kernel) -> f64 {
        let d: f64 = self.taps.iter().zip(&reference.taps).map(|(a, b)| (a - b).abs()).sum();
        d / reference.mass()
    }

    /// Mass-weighted centroid `(x, y)` relative to the centre.
    pub fn centroid(&self) -> [f64; 2] {
        let m = self.radius() as isize;
        let (mut cx, mut cy) = (0.0, 0.0);
        for (i, &t) in self.taps.iter().enumerate() {
            cx += t * ((i % self.size) as isize - m) as f64;
            cy += t * ((i / self.size) as isize - m) as f64;
        }
        let s = self.sum();
        [cx / s, cy / s]
    }

    /// Second central moments `[[xx, xy], [xy, yy]]`.
    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let [cx, cy] = self.centroid();
        let m = self.radius() as isize;
        let s = self.sum();
        let mut c = [[0.0; 2]; 2];
        for (i, &t) in self.taps.iter().enumerate() {
            let dx = ((i % self.size) as isize - m) as f64 - cx;
            let dy = ((i / self.size) as isize - m) as f64 - cy;
            c[0][0] += t * dx * dx;
            c[0][1] += t * dx * dy;
            c[1][1] += t * dy * dy;
        }
        c[1][0] = c[0][1];
        c.map(|r| r.map(|v| v / s))
    }

    /// Geometric-mean standard deviation `det(Σ)^(1/4)`.
    pub fn equivalent_sigma(&self) -> f64 {
        let c = self.covariance();
        (c[0][0] * c[1][1] - c[0][1] * c[1][0]).max(0.0).sqrt().sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GaussianKind {
    Isotropic,
    Anisotropic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianKernelSpec {
    pub kind: GaussianKind,
    pub sigma_x: f64,
    pub sigma_y: f64,
    /// Rotation of the `sigma_x` axis, radians.
    pub theta: f64,
    pub support: usize,
}

impl GaussianKernelSpec {
    pub fn isotropic(sigma: f64, support: usize) -> GaussianKernelSpec {
        GaussianKernelSpec { kind: GaussianKind::Isotropic, sigma_x: sigma, sigma_y: sigma, theta: 0.0, support }
    }

    pub fn anisotropic(sigma_x: f64, sigma_y: f64, theta: f64, support: usize) -> GaussianKernelSpec {
        GaussianKernelSpec { kind: GaussianKind::Anisotropic, sigma_x, sigma_y, theta, support }
    }
}

/// Rotated 2-D Gaussian sampled at integer offsets, normalized to unit sum.
pub fn gen_gaussian_kernel(spec: &GaussianKernelSpec) -> Result<Kernel> {
    if spec.support.is_multiple_of(2) || spec.support == 0 {
        return Err(Error::Argument(format!("kernel support must be odd, got {}", spec.support)));
    }
    if !(spec.sigma_x > 0.0 && spec.sigma_y > 0.0) {
        return Err(Error::Argument("Gaussian sigmas must be positive".into()));
    }
    let (sx, sy, theta) = match spec.kind {
        GaussianKind::Isotropic => (spec.sigma_x, spec.sigma_x, 0.0),
        GaussianKind::Anisotropic => (spec.sigma_x, spec.sigma_y, spec.theta),
    };
    let (s, c) = theta.sin_cos();
    // Σ⁻¹ = R diag(1/sx², 1/sy²) Rᵀ
    let (a, b) = (1.0 / (sx * sx), 1.0 / (sy * sy));
    let ixx = c * c * a + s * s * b;
    let iyy = s * s * a + c * c * b;
    let ixy = c * s * (a - b);
    let m = (spec.support / 2) as isize;
    let mut taps: Vec<f64> = (0..spec.support * spec.support)
        .map(|i| {
            let dx = (i % spec.support) as isize - m;
            let dy = (i / spec.support) as isize - m;
            let (dx, dy) = (dx as f64, dy as f64);
            (-0.5 * (ixx * dx * dx + 2.0 * ixy * dx * dy + iyy * dy * dy)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    Kernel::new(spec.support, taps)
}

/// Per-channel kernels for one FOV patch.
#[derive(Clone, Debug, PartialEq)]
pub struct SrKernelSet {
    /// Red, green, blue.
    pub kernels: [Kernel; 3],
    pub scale: usize,
    /// Subsampling phase `(x, y)` on the HR grid.
    pub phase: [usize; 2],
    /// `(row, col)` in the FOV grid.
    pub patch_index: [usize; 2],
    pub refined_h: Homography,
    pub residual: f64,
    pub iterations: usize,
}

impl SrKernelSet {
    pub fn support(&self) -> usize {
        self.kernels[0].size
    }

    pub fn uniform(kernel: Kernel, scale: usize) -> SrKernelSet {
        SrKernelSet {
            kernels: [kernel.clone(), kernel.clone(), kernel],
            scale,
            phase: [0, 0],
            patch_index: [0, 0],
            refined_h: Homography::identity(),
            residual: 0.0,
            iterations: 0,
        }
    }
}

/// JSON index of a stored kernel set; the taps live in a sibling
/// little-endian `f32` file holding the red, green and blue planes in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSetIndex {
    pub scale: usize,
    pub support: usize,
    pub phase: [usize; 2],
    pub patch_index: [usize; 2],
    pub refined_h: Homography,
    pub residual: f64,
    pub iterations: usize,
    pub channels: Vec<String>,
    pub data: PathBuf,
}

/// Writes `<path>` (JSON index) and `<path stem>.f32`.
pub fn write_kernel_set(path: &Path, set: &SrKernelSet) -> Result<()> {
    let data = path.with_extension("f32");
    let mut bytes = Vec::with_capacity(3 * set.support().pow(2) * 4);
    for k in &set.kernels {
        for &t in &k.taps {
            bytes.extend_from_slice(&(t as f32).to_le_bytes());
        }
    }
    write_atomic(&data, &bytes)?;
    let index = KernelSetIndex {
        scale: set.scale,
        support: set.support(),
        phase: set.phase,
        patch_index: set.patch_index,
        refined_h: set.refined_h,
        residual: set.residual,
        iterations: set.iterations,
        channels: vec!["r".into(), "g".into(), "b".into()],
        data: PathBuf::from(data.file_name().unwrap_or_default()),
    };
    write_json(path, &index)
}

pub fn read_kernel_set(path: &Path) -> Result<SrKernelSet> {
    let index: KernelSetIndex = read_json(path)?;
    let data_path = path.parent().unwrap_or(Path::new(".")).join(&index.data);
    let bytes = read_bytes(&data_path)?;
    let n = index.support * index.support;
    if bytes.len() != 3 * n * 4 {
        return Err(Error::format(&data_path, format!("expected {} bytes of kernel taps, found {}", 3 * n * 4, bytes.len())));
    }
    let values: Vec<f64> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
    let kernel = |c: usize| Kernel::new(index.support, values[c * n..(c + 1) * n].to_vec());
    Ok(SrKernelSet {
        kernels: [kernel(0)?, kernel(1)?, kernel(2)?],
        scale: index.scale,
        phase: index.phase,
        patch_index: index.patch_index,
        refined_h: index.refined_h,
        residual: index.residual,
        iterations: index.iterations,
    })
}

/// Loads every kernel set index (`*.json` with a matching `.f32`) in `dir`, sorted by file name.
pub fn read_kernel_dir(dir: &Path) -> Result<Vec<SrKernelSet>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json") && p.with_extension("f32").exists())
        .collect();
    paths.sort();
    paths.iter().map(|p| read_kernel_set(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_sigma_is_delta() {
        let k = gen_gaussian_kernel(&GaussianKernelSpec::isotropic(0.01, 21)).unwrap();
        assert!((k.center_tap() - 1.0).abs() < 1e-12);
        assert!((k.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn isotropic_ignores_theta() {
        let a = gen_gaussian_kernel(&GaussianKernelSpec::anisotropic(1.3, 1.3, 0.0, 15)).unwrap();
        let b = gen_gaussian_kernel(&GaussianKernelSpec::anisotropic(1.3, 1.3, 0.7, 15)).unwrap();
        for (x, y) in a.taps.iter().zip(&b.taps) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn anisotropic_matches_rotated_grid() {
        let theta = std::f64::consts::FRAC_PI_4;
        let k = gen_gaussian_kernel(&GaussianKernelSpec::anisotropic(2.0, 0.5, theta, 21)).unwrap();
        let mut expected = Vec::new();
        for dy in -10..=10 {
            for dx in -10..=10 {
                let (x, y) = (dx as f64, dy as f64);
                let u = theta.cos() * x + theta.sin() * y;
                let v = -theta.sin() * x + theta.cos() * y;
                expected.push((-(u * u) / 8.0 - (v * v) / 0.5).exp());
            }
        }
        let s: f64 = expected.iter().sum();
        for (a, e) in k.taps.iter().zip(&expected) {
            assert!((a - e / s).abs() < 1e-10);
        }
    }

    #[test]
    fn moments_of_gaussian() {
        let k = gen_gaussian_kernel(&GaussianKernelSpec::isotropic(1.5, 21)).unwrap();
        assert!(k.centroid()[0].abs() < 1e-12 && k.centroid()[1].abs() < 1e-12);
        assert!((k.equivalent_sigma() - 1.5).abs() < 1e-3);
    }

    #[test]
    fn even_support_rejected() {
        assert!(gen_gaussian_kernel(&GaussianKernelSpec::isotropic(1.0, 4)).is_err());
        assert!(Kernel::delta(6).is_err());
    }

    #[test]
    fn kernel_set_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut set = SrKernelSet::uniform(gen_gaussian_kernel(&GaussianKernelSpec::isotropic(1.0, 7)).unwrap(), 2);
        set.patch_index = [1, 2];
        set.refined_h = Homography::translation(0.5, -1.0);
        let path = dir.path().join("patch_r1_c2.json");
        write_kernel_set(&path, &set).unwrap();
        let back = read_kernel_set(&path).unwrap();
        assert_eq!(back.patch_index, [1, 2]);
        assert_eq!(back.refined_h, set.refined_h);
        for (a, b) in back.kernels[1].taps.iter().zip(&set.kernels[1].taps) {
            assert!((a - b).abs() < 1e-7);
        }
        assert_eq!(read_kernel_dir(dir.path()).unwrap().len(), 1);
    }
}
