//! Bilinear perspective warping with exact derivatives with respect to the
//! eight homography parameters.

use nalgebra::{Matrix3, Vector3};

use super::homography::{Homography, PARAM_INDEX};
use crate::error::{Error, Result};
use crate::image::{LinearRgbImage, Plane};

/// Bilinear sample and its spatial gradient. `None` outside `[0, w-1] × [0, h-1]`.
#[inline]
pub fn bilinear_with_grad(plane: &Plane, qx: f64, qy: f64) -> Option<(f64, f64, f64)> {
    let (w, h) = (plane.width, plane.height);
    if !(qx >= 0.0 && qy >= 0.0 && qx <= (w - 1) as f64 && qy <= (h - 1) as f64) {
        return None;
    }
    let x0 = (qx.floor() as usize).min(w.saturating_sub(2));
    let y0 = (qy.floor() as usize).min(h.saturating_sub(2));
    let (fx, fy) = (qx - x0 as f64, qy - y0 as f64);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let v00 = plane.get(x0, y0) as f64;
    let v10 = plane.get(x1, y0) as f64;
    let v01 = plane.get(x0, y1) as f64;
    let v11 = plane.get(x1, y1) as f64;
    let top = v00 + fx * (v10 - v00);
    let bottom = v01 + fx * (v11 - v01);
    let value = top + fy * (bottom - top);
    let dx = (1.0 - fy) * (v10 - v00) + fy * (v11 - v01);
    let dy = bottom - top;
    Some((value, dx, dy))
}

/// Maps output pixels back into the source image: `q = H⁻¹ p`.
#[derive(Clone, Copy, Debug)]
pub struct InverseMap {
    g: Matrix3<f64>,
}

impl InverseMap {
    pub fn new(h: &Homography) -> Result<InverseMap> {
        let g = h.matrix().try_inverse().ok_or_else(|| Error::Geometry("singular homography".into()))?;
        Ok(InverseMap { g })
    }

    #[inline]
    pub fn map(&self, p: [f64; 2]) -> [f64; 2] {
        let v = self.g * Vector3::new(p[0], p[1], 1.0);
        [v[0] / v[2], v[1] / v[2]]
    }

    /// Source position and `∂q/∂h_k` for the 8 parameters of `H`
    /// (`dG = -G dH G`).
    #[inline]
    pub fn map_with_grad(&self, p: [f64; 2]) -> ([f64; 2], [[f64; 8]; 2]) {
        let g = &self.g;
        let qh = g * Vector3::new(p[0], p[1], 1.0);
        let q = [qh[0] / qh[2], qh[1] / qh[2]];
        let mut dq = [[0.0; 8]; 2];
        for (k, &(i, j)) in PARAM_INDEX.iter().enumerate() {
            let s = -qh[j];
            let d0 = s * g[(0, i)];
            let d1 = s * g[(1, i)];
            let d2 = s * g[(2, i)];
            dq[0][k] = (d0 - q[0] * d2) / qh[2];
            dq[1][k] = (d1 - q[1] * d2) / qh[2];
        }
        (q, dq)
    }
}

/// Warped image plus validity mask (true where the source sample was in bounds).
#[derive(Clone, Debug, PartialEq)]
pub struct WarpOutput<T> {
    pub image: T,
    pub mask: Vec<bool>,
}

/// `out(p) = plane(H⁻¹ p)`; zero where the sample falls outside the source.
pub fn warp_plane(plane: &Plane, h: &Homography, out_width: usize, out_height: usize) -> Result<WarpOutput<Plane>> {
    let inv = InverseMap::new(h)?;
    let mut out = Plane::new(out_width, out_height);
    let mut mask = vec![false; out_width * out_height];
    for y in 0..out_height {
        for x in 0..out_width {
            let q = inv.map([x as f64, y as f64]);
            if let Some((v, _, _)) = bilinear_with_grad(plane, q[0], q[1]) {
                out.set(x, y, v as f32);
                mask[y * out_width + x] = true;
            }
        }
    }
    Ok(WarpOutput { image: out, mask })
}

pub fn warp(img: &LinearRgbImage, h: &Homography, out_width: usize, out_height: usize) -> Result<WarpOutput<LinearRgbImage>> {
    let mut mask = Vec::new();
    let mut planes = Vec::with_capacity(3);
    for c in 0..3 {
        let w = warp_plane(&img.channel(c), h, out_width, out_height)?;
        mask = w.mask;
        planes.push(w.image);
    }
    Ok(WarpOutput { image: LinearRgbImage::from_planes([&planes[0], &planes[1], &planes[2]])?, mask })
}

/// Warped plane together with `∂out(p)/∂h_k` for every output pixel.
/// Out-of-bounds pixels have zero value and zero derivative.
pub fn warp_plane_jacobian(plane: &Plane, h: &Homography, out_width: usize, out_height: usize) -> Result<(WarpOutput<Plane>, Vec<[f64; 8]>)> {
    let inv = InverseMap::new(h)?;
    let mut out = Plane::new(out_width, out_height);
    let mut mask = vec![false; out_width * out_height];
    let mut jac = vec![[0.0; 8]; out_width * out_height];
    for y in 0..out_height {
        for x in 0..out_width {
            let (q, dq) = inv.map_with_grad([x as f64, y as f64]);
            if let Some((v, gx, gy)) = bilinear_with_grad(plane, q[0], q[1]) {
                let i = y * out_width + x;
                out.set(x, y, v as f32);
                mask[i] = true;
                for k in 0..8 {
                    jac[i][k] = gx * dq[0][k] + gy * dq[1][k];
                }
            }
        }
    }
    Ok((WarpOutput { image: out, mask }, jac))
}
