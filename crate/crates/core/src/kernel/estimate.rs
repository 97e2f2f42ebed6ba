//! Joint estimation of per-channel SR kernels and a per-patch homography
//! with adaptive-moment gradient descent.

use log::{debug, info};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forward::{kernel_gram, loss_and_gradient, EstimationData};
use super::{gen_gaussian_kernel, GaussianKernelSpec, Kernel, SrKernelSet};
use crate::alignment::Homography;
use crate::error::{Error, Result};
use crate::image::{CfaPattern, Plane, RawFrame, RawMeta};
use crate::radiometric::TwoPointFields;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelEstimationConfig {
    /// Minimum number of pattern/capture pairs per patch.
    pub batch_size: usize,
    pub iterations: usize,
    pub lr_kernel: f64,
    /// Step size for homography entries expressed in pixels of displacement
    /// across the HR patch.
    pub lr_homography: f64,
    /// Both step sizes decay geometrically to this fraction of their initial value.
    pub lr_final_ratio: f64,
    /// LR patch side `N`.
    pub patch_size: usize,
    pub scale: usize,
    /// Kernel support `K` (odd).
    pub support: usize,
    /// Subsampling phase `(x, y)`.
    pub phase: [usize; 2],
    pub huber_delta: f64,
    pub plateau_window: usize,
    pub plateau_tolerance: f64,
    /// Weight of the penalty holding the mean kernel centroid at the centre;
    /// it separates a common kernel shift from a homography translation.
    pub centroid_weight: f64,
    pub refine_homography: bool,
    /// Run the optimizer in kernel coordinates whitened by the data Gram
    /// matrix at the initial homography.
    pub precondition: bool,
    /// Eigenvalue floor of the whitening, relative to the largest eigenvalue.
    pub precondition_ridge: f64,
    /// Initial Gaussian width; `scale / 2` when absent.
    pub init_sigma: Option<f64>,
    /// Recorded with the results; the full-batch optimizer is deterministic.
    pub seed: u64,
}

impl Default for KernelEstimationConfig {
    fn default() -> Self {
        KernelEstimationConfig {
            batch_size: 20,
            iterations: 2000,
            lr_kernel: 4e-4,
            lr_homography: 1e-1,
            lr_final_ratio: 1e-2,
            patch_size: 128,
            scale: 4,
            support: 21,
            phase: [0, 0],
            huber_delta: 1e-6,
            plateau_window: 100,
            plateau_tolerance: 1e-6,
            centroid_weight: 1e-1,
            refine_homography: true,
            precondition: true,
            precondition_ridge: 1e-4,
            init_sigma: None,
            seed: 0,
        }
    }
}

impl KernelEstimationConfig {
    /// `s · N`.
    pub fn hr_size(&self) -> usize {
        self.scale * self.patch_size
    }

    /// HR grid side including the convolution margin on both sides.
    pub fn hr_extent(&self) -> usize {
        self.hr_size() + 2 * (self.support / 2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.scale == 0 || self.patch_size == 0 {
            return bad("scale and patch_size must be positive");
        }
        if self.support.is_multiple_of(2) {
            return bad("kernel support must be odd");
        }
        if self.phase.iter().any(|&p| p >= self.scale) {
            return bad("phase must be below the scale");
        }
        if !(self.lr_kernel > 0.0 && self.lr_homography >= 0.0 && self.lr_final_ratio > 0.0 && self.huber_delta > 0.0) {
            return bad("step sizes and huber_delta must be positive");
        }
        Ok(())
    }
}

/// Per-pixel 64-bit mean of a burst, returned as a normalized frame.
pub fn average_burst(frames: &[RawFrame]) -> Result<RawFrame> {
    let first = frames.first().ok_or_else(|| Error::Argument("empty burst".into()))?;
    for f in &frames[1..] {
        if f.width != first.width || f.height != first.height {
            return Err(Error::Dimension("burst frames differ in size".into()));
        }
        let (a, b) = (&f.meta, &first.meta);
        if a.cfa != b.cfa || a.black_level != b.black_level || a.white_level != b.white_level || a.iso != b.iso || a.wb_gains != b.wb_gains {
            return Err(Error::Argument("burst frames carry different capture metadata".into()));
        }
    }
    let mut acc = vec![0.0f64; first.len()];
    for f in frames {
        for (a, v) in acc.iter_mut().zip(f.to_plane_unclipped()?.data) {
            *a += v as f64;
        }
    }
    let n = frames.len() as f64;
    let plane = Plane::from_vec(first.width, first.height, acc.iter().map(|a| (a / n) as f32).collect())?;
    let meta = RawMeta {
        iso: first.meta.iso,
        wb_gains: first.meta.wb_gains,
        exposure_time: first.meta.exposure_time,
        ..RawMeta::normalized(first.meta.cfa)
    };
    RawFrame::from_plane(plane, meta)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Adam {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= lr[i] * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Scale of each homography entry so that a unit step moves points by
/// roughly one pixel across an extent of `r` pixels.
fn homography_scales(r: f64) -> [f64; 8] {
    [1.0 / r, 1.0 / r, 1.0, 1.0 / r, 1.0 / r, 1.0, 1.0 / (r * r), 1.0 / (r * r)]
}

/// Symmetric `(G/λmax + ρ)^(-1/2)` and its inverse.
fn whitening(gram: DMatrix<f64>, ridge: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.max().max(f64::MIN_POSITIVE);
    let mu = eig.eigenvalues.map(|l| l.max(0.0) / top + ridge);
    let v = &eig.eigenvectors;
    let p = v * DMatrix::from_diagonal(&mu.map(|m| 1.0 / m.sqrt())) * v.transpose();
    let p_inv = v * DMatrix::from_diagonal(&mu.map(f64::sqrt)) * v.transpose();
    (p, p_inv)
}

/// Penalty `λ‖c‖²` on the centroid of the summed kernels, with its gradient.
fn centroid_penalty(kernels: &[Kernel; 3], weight: f64, grad: &mut [Vec<f64>; 3]) -> f64 {
    if weight == 0.0 {
        return 0.0;
    }
    let k = kernels[0].size;
    let m = (k / 2) as f64;
    let mut sum = 0.0;
    let (mut sx, mut sy) = (0.0, 0.0);
    for kern in kernels {
        for (i, &t) in kern.taps.iter().enumerate() {
            sum += t;
            sx += t * ((i % k) as f64 - m);
            sy += t * ((i / k) as f64 - m);
        }
    }
    if sum.abs() < 1e-12 {
        return 0.0;
    }
    let (cx, cy) = (sx / sum, sy / sum);
    for g in grad.iter_mut() {
        for (i, gi) in g.iter_mut().enumerate() {
            let (dx, dy) = ((i % k) as f64 - m, (i / k) as f64 - m);
            *gi += 2.0 * weight * (cx * (dx - cx) + cy * (dy - cy)) / sum;
        }
    }
    weight * (cx * cx + cy * cy)
}

/// Minimizes the smoothed-L1 distance between measured patches and the
/// forward model over the three kernels and the homography. `fields` must
/// live on the HR grid of the patch (`s·N + 2⌊K/2⌋` square) and `init_h`
/// maps display pixels onto that grid.
pub fn estimate_kernels(
    measured: &[Plane],
    displayed: &[Plane],
    init_h: &Homography,
    fields: &TwoPointFields,
    cfa: CfaPattern,
    cfg: &KernelEstimationConfig,
) -> Result<SrKernelSet> {
    cfg.validate()?;
    if measured.len() < cfg.batch_size {
        return Err(Error::Config(format!("batch of {} patterns is below the configured minimum {}", measured.len(), cfg.batch_size)));
    }
    let extent = cfg.hr_extent();
    if fields.width != extent || fields.height != extent {
        return Err(Error::Dimension(format!("calibration fields are {}x{}, expected {extent}x{extent}", fields.width, fields.height)));
    }
    if measured.iter().any(|p| p.width != cfg.patch_size || p.height != cfg.patch_size) {
        return Err(Error::Dimension(format!("measured patches must be {0}x{0}", cfg.patch_size)));
    }
    let data = EstimationData::new(measured, displayed, fields, cfa, cfg.scale, cfg.phase)?;

    let sigma = cfg.init_sigma.unwrap_or(cfg.scale as f64 / 2.0);
    let init = gen_gaussian_kernel(&GaussianKernelSpec::isotropic(sigma, cfg.support))?;
    let kk = cfg.support * cfg.support;
    let whiten: Option<Vec<(DMatrix<f64>, DMatrix<f64>)>> = if cfg.precondition {
        let gram = kernel_gram(&data, init_h, cfg.support)?;
        Some(gram.into_iter().map(|g| whitening(g, cfg.precondition_ridge)).collect())
    } else {
        None
    };
    let mut params: Vec<f64> = Vec::with_capacity(3 * kk + 8);
    for c in 0..3 {
        match &whiten {
            Some(w) => params.extend((&w[c].1 * DVector::from_column_slice(&init.taps)).iter()),
            None => params.extend(&init.taps),
        }
    }
    params.extend([0.0; 8]);
    let h0 = init_h.params();
    let hs = homography_scales(extent as f64);
    let unpack = |p: &[f64]| -> Result<([Kernel; 3], Homography)> {
        let taps = |c: usize| -> Vec<f64> {
            let u = &p[c * kk..(c + 1) * kk];
            match &whiten {
                Some(w) => (&w[c].0 * DVector::from_column_slice(u)).as_slice().to_vec(),
                None => u.to_vec(),
            }
        };
        let kernels = [Kernel::new(cfg.support, taps(0))?, Kernel::new(cfg.support, taps(1))?, Kernel::new(cfg.support, taps(2))?];
        let hp: [f64; 8] = std::array::from_fn(|q| h0[q] + hs[q] * p[3 * kk + q]);
        Ok((kernels, Homography::from_params(&hp)?))
    };
    let penalty_weight = if cfg.refine_homography { cfg.centroid_weight } else { 0.0 };

    let mut adam = Adam::new(params.len());
    let mut grad = vec![0.0; params.len()];
    let mut lr = vec![0.0; params.len()];
    let mut history: Vec<f64> = Vec::with_capacity(cfg.iterations);
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    let mut iterations = 0;
    let initial_loss;
    {
        let (kernels, h) = unpack(&params)?;
        initial_loss = loss_and_gradient(&data, &kernels, &h, cfg.huber_delta)?.loss;
    }
    for it in 0..cfg.iterations {
        let (kernels, h) = match unpack(&params) {
            Ok(v) => v,
            Err(e) => return Err(Error::Optimization(format!("iterate became invalid at iteration {it}: {e}; last loss {:?}", history.last()))),
        };
        let lg = loss_and_gradient(&data, &kernels, &h, cfg.huber_delta)?;
        let mut kgrad = lg.kernels;
        let objective = lg.loss + centroid_penalty(&kernels, penalty_weight, &mut kgrad);
        if !objective.is_finite() {
            return Err(Error::Optimization(format!(
                "loss diverged at iteration {it} (initial {initial_loss:.3e}, last finite {:?})",
                history.last()
            )));
        }
        if best.as_ref().is_none_or(|b| objective < b.0) {
            best = Some((objective, lg.loss, params.clone()));
        }
        // best-so-far data loss, so oscillation alone does not end the run
        history.push(history.last().map_or(lg.loss, |&h: &f64| h.min(lg.loss)));
        iterations = it + 1;
        if it % 100 == 0 {
            debug!("iteration {it}: loss {:.6e}", lg.loss);
        }
        // the early, large-step phase is too noisy for plateau detection
        if it >= cfg.plateau_window && 2 * it >= cfg.iterations {
            let past = history[it - cfg.plateau_window];
            if past - history[it] <= cfg.plateau_tolerance * past.abs() {
                debug!("plateau reached at iteration {it}");
                break;
            }
        }

        for c in 0..3 {
            match &whiten {
                Some(w) => grad[c * kk..(c + 1) * kk].copy_from_slice((&w[c].0 * DVector::from_column_slice(&kgrad[c])).as_slice()),
                None => grad[c * kk..(c + 1) * kk].copy_from_slice(&kgrad[c]),
            }
        }
        for q in 0..8 {
            grad[3 * kk + q] = if cfg.refine_homography { lg.homography[q] * hs[q] } else { 0.0 };
        }
        let decay = cfg.lr_final_ratio.powf(it as f64 / cfg.iterations.saturating_sub(1).max(1) as f64);
        lr[..3 * kk].fill(cfg.lr_kernel * decay);
        lr[3 * kk..].fill(if cfg.refine_homography { cfg.lr_homography * decay } else { 0.0 });
        adam.step(&mut params, &grad, &lr);
    }

    let (_, residual, best_params) = best.ok_or_else(|| Error::Config("iterations must be positive".into()))?;
    let (kernels, refined_h) = unpack(&best_params)?;
    info!("kernel estimation finished after {iterations} iterations: loss {initial_loss:.4e} -> {residual:.4e}");
    Ok(SrKernelSet { kernels, scale: cfg.scale, phase: cfg.phase, patch_index: [0, 0], refined_h, residual, iterations })
}

/// Inputs for one FOV patch.
#[derive(Clone, Debug)]
pub struct PatchTask {
    /// `(row, col)` in the FOV grid.
    pub index: [usize; 2],
    pub measured: Vec<Plane>,
    pub displayed: Vec<Plane>,
    pub init_h: Homography,
    pub fields: TwoPointFields,
    pub cfa: CfaPattern,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchFailure {
    pub index: [usize; 2],
    pub message: String,
}

/// Runs every patch independently on a pool of `workers` threads. Results
/// keep the task order; a failing patch does not affect the others.
pub fn estimate_fov_grid(
    tasks: &[PatchTask],
    cfg: &KernelEstimationConfig,
    workers: usize,
) -> Result<Vec<std::result::Result<SrKernelSet, PatchFailure>>> {
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(|| {
        tasks
            .par_iter()
            .map(|t| {
                estimate_kernels(&t.measured, &t.displayed, &t.init_h, &t.fields, t.cfa, cfg)
                    .map(|mut set| {
                        set.patch_index = t.index;
                        set
                    })
                    .map_err(|e| PatchFailure { index: t.index, message: e.to_string() })
            })
            .collect()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::RawData;

    #[test]
    fn burst_of_identical_frames() {
        let meta = RawMeta::normalized(CfaPattern::RGGB);
        let f = RawFrame::from_plane(Plane::from_fn(4, 4, |x, y| (x + y) as f32 / 8.0), meta).unwrap();
        assert_eq!(average_burst(std::slice::from_ref(&f)).unwrap(), f);
        assert_eq!(average_burst(&vec![f.clone(); 5]).unwrap(), f);
    }

    #[test]
    fn burst_renormalizes_integer_frames() {
        let mut meta = RawMeta::normalized(CfaPattern::RGGB);
        meta.black_level = 64.0;
        meta.white_level = 1023.0;
        let a = RawFrame::from_integer(2, 2, vec![64, 1023, 543, 543], meta.clone()).unwrap();
        let b = RawFrame::from_integer(2, 2, vec![64, 1023, 544, 544], meta.clone()).unwrap();
        let avg = average_burst(&[a, b]).unwrap();
        let RawData::Normalized(d) = &avg.data else { panic!("expected normalized data") };
        assert!((d[2] - 0.5).abs() < 1e-6 && (d[3] - 0.5).abs() < 1e-6);
        let mut other = meta;
        other.iso = 400.0;
        let c = RawFrame::from_integer(2, 2, vec![0; 4], other).unwrap();
        assert!(average_burst(&[avg.clone(), c]).is_err());
    }

    #[test]
    fn config_defaults_match_documented_constants() {
        let cfg = KernelEstimationConfig::default();
        assert_eq!((cfg.batch_size, cfg.support, cfg.scale, cfg.iterations), (20, 21, 4, 2000));
        assert_eq!(cfg.hr_size(), 512);
        assert_eq!(cfg.hr_extent(), 532);
        assert!(cfg.validate().is_ok());
        let bad = KernelEstimationConfig { support: 20, ..cfg };
        assert!(bad.validate().is_err());
    }
}
