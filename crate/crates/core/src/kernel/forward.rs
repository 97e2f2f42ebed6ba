//! Forward model `ỹ = mosaic((K x)↓s)` and the smoothed-L1 batch loss with
//! exact gradients for kernel taps and homography parameters.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::Kernel;
use crate::alignment::{bilinear_with_grad, Homography, InverseMap};
use crate::error::{Error, Result};
use crate::image::{CfaPattern, LinearRgbImage, Plane};
use crate::radiometric::TwoPointFields;

/// LR extent produced from an HR extent, or `None` when the margin is too small.
fn lr_extent(hr: usize, radius: usize, scale: usize, phase: usize) -> Option<usize> {
    let need = 2 * radius + phase + 1;
    (hr >= need).then(|| (hr - need) / scale + 1)
}

fn check_kernels(kernels: &[Kernel; 3]) -> Result<usize> {
    let size = kernels[0].size;
    if kernels.iter().any(|k| k.size != size) {
        return Err(Error::Argument("per-channel kernels must share one support".into()));
    }
    Ok(size)
}

fn check_geometry(width: usize, height: usize, radius: usize, scale: usize, phase: [usize; 2]) -> Result<(usize, usize)> {
    if scale == 0 {
        return Err(Error::Argument("scale must be positive".into()));
    }
    if phase[0] >= scale || phase[1] >= scale {
        return Err(Error::Argument(format!("phase {phase:?} must be below the scale {scale}")));
    }
    match (lr_extent(width, radius, scale, phase[0]), lr_extent(height, radius, scale, phase[1])) {
        (Some(w), Some(h)) => Ok((w, h)),
        _ => Err(Error::Dimension(format!("HR target {width}x{height} lacks the {radius}-pixel margin for the kernel support"))),
    }
}

/// `out(i, j) = Σ_t k_c(t) · x_c(P₀ − t)` with `P₀ = (s·j + m + φx, s·i + m + φy)`
/// and `c` the CFA channel of LR pixel `(i, j)`.
#[allow(clippy::too_many_arguments)]
fn predict(
    x: &[Vec<f64>; 3],
    hr_width: usize,
    kernels: &[Kernel; 3],
    scale: usize,
    phase: [usize; 2],
    cfa: CfaPattern,
    lr_width: usize,
    lr_height: usize,
) -> Vec<f64> {
    let k = kernels[0].size;
    let m = k / 2;
    let mut out = vec![0.0; lr_width * lr_height];
    for i in 0..lr_height {
        for j in 0..lr_width {
            let c = cfa.channel_at(i, j).rgb_index();
            let (taps, xc) = (&kernels[c].taps, &x[c]);
            let (py, px) = (scale * i + m + phase[1], scale * j + m + phase[0]);
            let mut acc = 0.0;
            for ty in 0..k {
                let row = (py + m - ty) * hr_width + px + m;
                let trow = &taps[ty * k..(ty + 1) * k];
                for (tx, &t) in trow.iter().enumerate() {
                    acc += t * xc[row - tx];
                }
            }
            out[i * lr_width + j] = acc;
        }
    }
    out
}

/// Predicted mosaicked LR patch for an HR target that already includes
/// vignetting and linearization. The LR size is `⌊(W − 2m − φ − 1)/s⌋ + 1`,
/// i.e. `N` for a target of `s·N + 2m`.
pub fn forward_model(x_hr: &LinearRgbImage, kernels: &[Kernel; 3], scale: usize, phase: [usize; 2], cfa: CfaPattern) -> Result<Plane> {
    let radius = check_kernels(kernels)? / 2;
    let (lw, lh) = check_geometry(x_hr.width, x_hr.height, radius, scale, phase)?;
    let x: [Vec<f64>; 3] = std::array::from_fn(|c| x_hr.data.iter().skip(c).step_by(3).map(|&v| v as f64).collect());
    let y = predict(&x, x_hr.width, kernels, scale, phase, cfa, lw, lh);
    Plane::from_vec(lw, lh, y.into_iter().map(|v| v as f32).collect())
}

/// Per-channel HR target planes and the per-pixel homography derivative.
type Rendered = ([Vec<f64>; 3], Vec<[f64; 8]>);

/// Measured LR patches, displayed patterns and the HR-grid calibration
/// fields for one FOV patch. The homography maps display pixels onto the
/// HR grid of the fields (margin included).
pub struct EstimationData<'a> {
    pub measured: &'a [Plane],
    pub displayed: &'a [Plane],
    pub cfa: CfaPattern,
    pub scale: usize,
    pub phase: [usize; 2],
    hr_width: usize,
    hr_height: usize,
    gain: [Vec<f64>; 3],
    offset: [Vec<f64>; 3],
}

impl<'a> EstimationData<'a> {
    pub fn new(
        measured: &'a [Plane],
        displayed: &'a [Plane],
        fields: &TwoPointFields,
        cfa: CfaPattern,
        scale: usize,
        phase: [usize; 2],
    ) -> Result<EstimationData<'a>> {
        if measured.is_empty() || measured.len() != displayed.len() {
            return Err(Error::Argument(format!("need one displayed pattern per measured patch ({} vs {})", displayed.len(), measured.len())));
        }
        let (lw, lh) = (measured[0].width, measured[0].height);
        if measured.iter().any(|p| p.width != lw || p.height != lh) {
            return Err(Error::Dimension("measured patches differ in size".into()));
        }
        let (g, o) = fields.gain_offset();
        let split = |v: &[f32]| -> [Vec<f64>; 3] { std::array::from_fn(|c| v.iter().skip(c).step_by(3).map(|&s| s as f64).collect()) };
        Ok(EstimationData {
            measured,
            displayed,
            cfa,
            scale,
            phase,
            hr_width: fields.width,
            hr_height: fields.height,
            gain: split(&g),
            offset: split(&o),
        })
    }

    pub fn hr_size(&self) -> (usize, usize) {
        (self.hr_width, self.hr_height)
    }

    pub fn lr_size(&self) -> (usize, usize) {
        (self.measured[0].width, self.measured[0].height)
    }

    pub fn batch_size(&self) -> usize {
        self.measured.len()
    }

    /// HR target `v ⊙ L(Warp(x́, H))` for pattern `b`.
    pub fn render_target(&self, b: usize, h: &Homography) -> Result<LinearRgbImage> {
        let (x, _) = self.render(b, h, false)?;
        let n = self.hr_width * self.hr_height;
        let data = (0..3 * n).map(|i| x[i % 3][i / 3] as f32).collect();
        LinearRgbImage::from_vec(self.hr_width, self.hr_height, data)
    }

    /// Per-channel HR target and, when requested, `∂X/∂h` of the warped pattern.
    fn render(&self, b: usize, h: &Homography, with_jacobian: bool) -> Result<Rendered> {
        let inv = InverseMap::new(h)?;
        let pattern = &self.displayed[b];
        let n = self.hr_width * self.hr_height;
        let mut warped = vec![0.0; n];
        let mut jac = if with_jacobian { vec![[0.0; 8]; n] } else { Vec::new() };
        for py in 0..self.hr_height {
            for px in 0..self.hr_width {
                let i = py * self.hr_width + px;
                let (q, dq) = inv.map_with_grad([px as f64, py as f64]);
                if let Some((v, gx, gy)) = bilinear_with_grad(pattern, q[0], q[1]) {
                    warped[i] = v;
                    if with_jacobian {
                        for k in 0..8 {
                            jac[i][k] = gx * dq[0][k] + gy * dq[1][k];
                        }
                    }
                }
            }
        }
        let x = std::array::from_fn(|c| (0..n).map(|i| self.gain[c][i] * warped[i] + self.offset[c][i]).collect());
        Ok((x, jac))
    }
}

/// Per-channel Gram matrices `Σ rowᵀ·row` of the linear map from kernel
/// taps to predicted samples, for the targets rendered through `h`. Each is
/// normalized by its sample count.
pub fn kernel_gram(data: &EstimationData<'_>, h: &Homography, support: usize) -> Result<[DMatrix<f64>; 3]> {
    let m = support / 2;
    let (lw, lh) = check_geometry(data.hr_width, data.hr_height, m, data.scale, data.phase)?;
    let kk = support * support;
    let (s, phase, w) = (data.scale, data.phase, data.hr_width);
    const CHUNK: usize = 512;
    let mut gram: [DMatrix<f64>; 3] = std::array::from_fn(|_| DMatrix::zeros(kk, kk));
    let mut counts = [0usize; 3];
    let mut rows: [Vec<f64>; 3] = std::array::from_fn(|_| Vec::with_capacity(CHUNK * kk));
    let flush = |gram: &mut DMatrix<f64>, rows: &mut Vec<f64>| {
        let n = rows.len() / kk;
        if n > 0 {
            // column-major kk × n, so gram += X Xᵀ
            let x = DMatrix::from_column_slice(kk, n, rows);
            gram.gemm(1.0, &x, &x.transpose(), 1.0);
            rows.clear();
        }
    };
    for b in 0..data.batch_size() {
        let (x, _) = data.render(b, h, false)?;
        for i in 0..lh {
            for j in 0..lw {
                let c = data.cfa.channel_at(i, j).rgb_index();
                let (py, px) = (s * i + m + phase[1], s * j + m + phase[0]);
                for ty in 0..support {
                    let row = (py + m - ty) * w + px + m;
                    for tx in 0..support {
                        rows[c].push(x[c][row - tx]);
                    }
                }
                counts[c] += 1;
                if rows[c].len() >= CHUNK * kk {
                    flush(&mut gram[c], &mut rows[c]);
                }
            }
        }
    }
    for c in 0..3 {
        flush(&mut gram[c], &mut rows[c]);
        gram[c] /= counts[c].max(1) as f64;
    }
    Ok(gram)
}

/// Mean smoothed-L1 loss over the batch and its gradients. Kernel gradients
/// follow the tap layout; homography gradients follow the raw 8-parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    pub kernels: [Vec<f64>; 3],
    pub homography: [f64; 8],
}

#[inline]
fn huber(r: f64, delta: f64) -> (f64, f64) {
    let a = r.abs();
    if a <= delta {
        (0.5 * r * r / delta, r / delta)
    } else {
        (a - 0.5 * delta, r.signum())
    }
}

pub fn loss_and_gradient(data: &EstimationData<'_>, kernels: &[Kernel; 3], h: &Homography, delta: f64) -> Result<LossGradient> {
    let k = check_kernels(kernels)?;
    let m = k / 2;
    let (lw, lh) = check_geometry(data.hr_width, data.hr_height, m, data.scale, data.phase)?;
    if (lw, lh) != data.lr_size() {
        return Err(Error::Dimension(format!(
            "HR grid yields {lw}x{lh} LR samples but measured patches are {}x{}",
            data.lr_size().0,
            data.lr_size().1
        )));
    }
    let (s, phase, w) = (data.scale, data.phase, data.hr_width);
    let per_pattern: Vec<Result<LossGradient>> = (0..data.batch_size())
        .into_par_iter()
        .map(|b| {
            let (x, jac) = data.render(b, h, true)?;
            let y = &data.measured[b];
            let pred = predict(&x, w, kernels, s, phase, data.cfa, lw, lh);
            let mut loss = 0.0;
            let mut gk: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; k * k]);
            let mut gx: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; x[0].len()]);
            for i in 0..lh {
                for j in 0..lw {
                    let (l, psi) = huber(pred[i * lw + j] - y.get(j, i) as f64, delta);
                    loss += l;
                    if psi == 0.0 {
                        continue;
                    }
                    let c = data.cfa.channel_at(i, j).rgb_index();
                    let taps = &kernels[c].taps;
                    let (py, px) = (s * i + m + phase[1], s * j + m + phase[0]);
                    for ty in 0..k {
                        let row = (py + m - ty) * w + px + m;
                        for tx in 0..k {
                            gk[c][ty * k + tx] += psi * x[c][row - tx];
                            gx[c][row - tx] += psi * taps[ty * k + tx];
                        }
                    }
                }
            }
            let mut gh = [0.0; 8];
            for (p, jp) in jac.iter().enumerate() {
                let g: f64 = (0..3).map(|c| gx[c][p] * data.gain[c][p]).sum();
                if g != 0.0 {
                    for q in 0..8 {
                        gh[q] += g * jp[q];
                    }
                }
            }
            Ok(LossGradient { loss, kernels: gk, homography: gh })
        })
        .collect();

    // fixed summation order over the batch
    let norm = 1.0 / (data.batch_size() * lw * lh) as f64;
    let mut total = LossGradient { loss: 0.0, kernels: std::array::from_fn(|_| vec![0.0; k * k]), homography: [0.0; 8] };
    for part in per_pattern {
        let part = part?;
        total.loss += part.loss * norm;
        for c in 0..3 {
            for (a, b) in total.kernels[c].iter_mut().zip(&part.kernels[c]) {
                *a += b * norm;
            }
        }
        for q in 0..8 {
            total.homography[q] += part.homography[q] * norm;
        }
    }
    Ok(total)
}
