//! Synthetic closed-loop fixtures shared by the integration tests.
#![allow(dead_code)]

use rawforge::alignment::Homography;
use rawforge::image::{CfaPattern, LinearRgbImage, Plane};
use rawforge::kernel::{forward_model, gen_gaussian_kernel, EstimationData, GaussianKernelSpec, Kernel, KernelEstimationConfig};
use rawforge::patterns::gen_random_structures;
use rawforge::radiometric::TwoPointFields;

pub struct PlantedProblem {
    pub cfg: KernelEstimationConfig,
    pub measured: Vec<Plane>,
    pub displayed: Vec<Plane>,
    pub fields: TwoPointFields,
    pub true_h: Homography,
    pub kernels: [Kernel; 3],
    pub cfa: CfaPattern,
    pub display_size: usize,
}

pub fn anisotropic(sx: f64, sy: f64, theta_deg: f64, support: usize) -> Kernel {
    gen_gaussian_kernel(&GaussianKernelSpec::anisotropic(sx, sy, theta_deg.to_radians(), support)).unwrap()
}

/// Smooth vignette field with a slight per-channel tint.
pub fn vignette_fields(extent: usize) -> TwoPointFields {
    let c = extent as f64 / 2.0;
    let white = LinearRgbImage::from_fn(extent, extent, |x, y| {
        let r2 = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)) / (c * c);
        let v = 1.0 - 0.25 * r2;
        [(0.05 + 0.85 * v) as f32, (0.05 + 0.9 * v) as f32, (0.05 + 0.8 * v) as f32]
    });
    let black = LinearRgbImage::uniform(extent, extent, [0.05; 3]);
    TwoPointFields::new(&white, &black, 0.0, 1.0).unwrap()
}

/// Display → HR-grid homography with a mild perspective component that
/// keeps the HR grid `margin` display pixels inside the pattern.
pub fn planted_homography(margin: f64) -> Homography {
    Homography::from_rows([[1.0, 0.01, -margin], [-0.008, 1.0, -margin + 0.4], [2e-5, -1e-5, 1.0]]).unwrap()
}

pub fn planted_problem(cfg: KernelEstimationConfig, kernels: [Kernel; 3], seed: u64) -> PlantedProblem {
    let extent = cfg.hr_extent();
    let display_size = extent + 16;
    let seq = gen_random_structures(cfg.batch_size, display_size, display_size, seed).unwrap();
    let displayed: Vec<Plane> = seq.gray_frames().unwrap().into_iter().cloned().collect();
    let fields = vignette_fields(extent);
    let true_h = planted_homography(6.0);
    let cfa = CfaPattern::GBRG;
    let data = EstimationData::new(&displayed, &displayed, &fields, cfa, cfg.scale, cfg.phase).unwrap();
    let measured =
        (0..displayed.len()).map(|b| forward_model(&data.render_target(b, &true_h).unwrap(), &kernels, cfg.scale, cfg.phase, cfa).unwrap()).collect();
    PlantedProblem { cfg, measured, displayed, fields, true_h, kernels, cfa, display_size }
}

/// Display points whose images cover the HR grid.
pub fn patch_points(problem: &PlantedProblem) -> Vec<[f64; 2]> {
    let inv = problem.true_h.inverse().unwrap();
    let e = problem.cfg.hr_extent() as f64 - 1.0;
    let mut pts = Vec::new();
    for i in 0..=4 {
        for j in 0..=4 {
            pts.push(inv.apply([e * j as f64 / 4.0, e * i as f64 / 4.0]));
        }
    }
    pts
}

/// Worst relative disagreement between analytic gradients and central
/// differences of the batch loss. The homography is stepped in pixel-scaled
/// units; components below `1e-8 · max|g|` use that floor as denominator.
pub fn gradient_check(problem: &PlantedProblem, kernels: &[Kernel; 3], h: &Homography) -> (f64, f64) {
    use rawforge::kernel::loss_and_gradient;
    let cfg = &problem.cfg;
    let data = EstimationData::new(&problem.measured, &problem.displayed, &problem.fields, problem.cfa, cfg.scale, cfg.phase).unwrap();
    let delta = cfg.huber_delta;
    let g = loss_and_gradient(&data, kernels, h, delta).unwrap();
    let loss = |k: &[Kernel; 3], h: &Homography| loss_and_gradient(&data, k, h, delta).unwrap().loss;
    let floor = 1e-8 * g.kernels.iter().flatten().chain(g.homography.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(floor);
    let mut worst_k: f64 = 0.0;
    for c in 0..3 {
        for t in 0..kernels[c].taps.len() {
            let eps = 1e-6;
            let mut kp = kernels.clone();
            kp[c].taps[t] += eps;
            let mut km = kernels.clone();
            km[c].taps[t] -= eps;
            let n = (loss(&kp, h) - loss(&km, h)) / (2.0 * eps);
            worst_k = worst_k.max(rel(g.kernels[c][t], n));
        }
    }
    let r = cfg.hr_extent() as f64;
    let scales = [1.0 / r, 1.0 / r, 1.0, 1.0 / r, 1.0 / r, 1.0, 1.0 / (r * r), 1.0 / (r * r)];
    let params = h.params();
    let mut worst_h: f64 = 0.0;
    for q in 0..8 {
        let eps = 1e-6 * scales[q];
        let mut pp = params;
        pp[q] += eps;
        let mut pm = params;
        pm[q] -= eps;
        let n = (loss(kernels, &Homography::from_params(&pp).unwrap()) - loss(kernels, &Homography::from_params(&pm).unwrap())) / (2.0 * eps);
        worst_h = worst_h.max(rel(g.homography[q], n));
    }
    (worst_k, worst_h)
}

pub mod synth {
    use std::path::Path;

    use rawforge::image::{CameraProfile, CfaChannel, CfaPattern, LinearRgbImage};
    use rawforge::io::write_png16;
    use rawforge::kernel::{Kernel, SrKernelSet};
    use rawforge::noise::{fit_iso_curves, HgParams, NoiseModel};
    use rawforge::synthesis::{DegradationPool, IsoSampler, PoolKernel, PoolNoise};

    pub const ISOS: [f64; 7] = [50.0, 100.0, 200.0, 400.0, 800.0, 1600.0, 3200.0];

    pub fn profile(name: &str, wb: [f64; 3]) -> CameraProfile {
        CameraProfile {
            name: name.into(),
            cfa: CfaPattern::RGGB,
            black_level: 64.0,
            white_level: 1023.0,
            wb_gains: wb,
            iso_set: ISOS.to_vec(),
            noise_model: None,
            kernel_grid: [1, 1],
        }
    }

    /// Every channel and ISO carries the same parameters.
    pub fn flat_model(beta1: f64, beta2: f64) -> NoiseModel {
        let params: Vec<HgParams> = CfaChannel::ALL.into_iter().flat_map(|channel| ISOS.map(|iso| HgParams { beta1, beta2, channel, iso })).collect();
        fit_iso_curves(&params).unwrap()
    }

    pub fn pool(kernel: Kernel, scale: usize, wb: [f64; 3], model: NoiseModel, iso: IsoSampler) -> DegradationPool {
        DegradationPool {
            kernels: vec![PoolKernel { id: "cam/k0".into(), camera: "cam".into(), set: SrKernelSet::uniform(kernel, scale) }],
            noise: vec![PoolNoise { camera: "cam".into(), profile: profile("cam", wb), model }],
            iso_sampler: iso,
        }
    }

    /// Smooth random-looking linear RGB image.
    pub fn scene(width: usize, height: usize, seed: u64) -> LinearRgbImage {
        let f = seed as f64 * 0.37 + 1.0;
        LinearRgbImage::from_fn(width, height, |x, y| {
            std::array::from_fn(|c| {
                let (x, y) = (x as f64, y as f64);
                let v = 0.5 + 0.25 * ((x * 0.11 * f + c as f64).sin() * (y * 0.07 + f).cos()) + 0.2 * ((x + y) * 0.31 / f).sin();
                v.clamp(0.0, 1.0) as f32
            })
        })
    }

    pub fn write_inputs(dir: &Path, n: usize, size: usize) {
        for i in 0..n {
            write_png16(&dir.join(format!("img{i:02}.png")), &scene(size, size, i as u64)).unwrap();
        }
    }
}

pub mod star {
    use rawforge::image::Plane;
    use rawforge::patterns::siemens_value;

    /// Binary star of `radius` on a mid-gray field, blurred by a continuous
    /// Gaussian of `sigma` pixels and point-sampled at pixel centers. The
    /// blur is applied on an 8× finer grid so rasterization stays negligible.
    pub fn blurred_star(size: usize, spokes: usize, radius: f64, sigma: f64) -> (Plane, [f64; 2]) {
        const Q: usize = 8;
        let c = (size as f64 - 1.0) / 2.0;
        let kr = if sigma > 0.0 { (4.0 * sigma * Q as f64).ceil() as usize } else { 0 };
        let taps: Vec<f64> = {
            let t: Vec<f64> = (0..=2 * kr)
                .map(|i| {
                    let d = i as f64 - kr as f64;
                    if sigma > 0.0 {
                        (-d * d / (2.0 * (sigma * Q as f64).powi(2))).exp()
                    } else {
                        1.0
                    }
                })
                .collect();
            let s: f64 = t.iter().sum();
            t.into_iter().map(|v| v / s).collect()
        };
        // fine index i sits at pixel coordinate (i - kr) / Q
        let n = (size - 1) * Q + 1 + 2 * kr;
        let pos = |i: usize| (i as f64 - kr as f64) / Q as f64;
        let value = |x: f64, y: f64| {
            let (dx, dy) = (x - c, y - c);
            if dx.hypot(dy) <= radius {
                siemens_value(dx, dy, spokes)
            } else {
                0.5
            }
        };
        // horizontal pass at output columns only, for every fine row
        let mut rows = vec![0.0f64; n * size];
        for fy in 0..n {
            let y = pos(fy);
            let line: Vec<f64> = (0..n).map(|fx| value(pos(fx), y)).collect();
            for x in 0..size {
                let centre = x * Q + kr;
                rows[fy * size + x] = taps.iter().enumerate().map(|(k, t)| t * line[centre + k - kr]).sum();
            }
        }
        let plane = Plane::from_fn(size, size, |x, y| {
            let centre = y * Q + kr;
            taps.iter().enumerate().map(|(k, t)| t * rows[(centre + k - kr) * size + x]).sum::<f64>() as f32
        });
        (plane, [c, c])
    }
}
