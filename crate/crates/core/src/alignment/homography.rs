use nalgebra::{Matrix3, SMatrix, SymmetricEigen, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Planar projective transform, normalized so that `h[2][2] == 1`.
///
/// Throughout the crate a homography maps display coordinates to sensor (or
/// HR target) coordinates, with pixel centers at integer positions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

/// Order of the 8 free parameters: row-major entries of `H` except `h33`.
pub const PARAM_INDEX: [(usize, usize); 8] = [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2), (2, 0), (2, 1)];

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Homography> {
        let s = m[(2, 2)];
        if !s.is_finite() || s.abs() < 1e-12 {
            return Err(Error::Geometry(format!("homography has h33 = {s}")));
        }
        let m = m / s;
        if !m.iter().all(|v| v.is_finite()) || m.determinant().abs() <= 1e-12 {
            return Err(Error::Geometry("homography is singular".into()));
        }
        Ok(Homography { m })
    }

    pub fn identity() -> Homography {
        Homography { m: Matrix3::identity() }
    }

    pub fn translation(tx: f64, ty: f64) -> Homography {
        Homography { m: Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0) }
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Homography> {
        Homography::new(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn from_params(p: &[f64; 8]) -> Result<Homography> {
        let mut m = Matrix3::identity();
        for (k, &(r, c)) in PARAM_INDEX.iter().enumerate() {
            m[(r, c)] = p[k];
        }
        Homography::new(m)
    }

    pub fn params(&self) -> [f64; 8] {
        std::array::from_fn(|k| {
            let (r, c) = PARAM_INDEX[k];
            self.m[(r, c)]
        })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        std::array::from_fn(|r| std::array::from_fn(|c| self.m[(r, c)]))
    }

    pub fn inverse(&self) -> Result<Homography> {
        let inv = self.m.try_inverse().ok_or_else(|| Error::Geometry("homography is not invertible".into()))?;
        Homography::new(inv)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Homography) -> Result<Homography> {
        Homography::new(self.m * other.m)
    }

    #[inline]
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        apply_matrix(&self.m, p)
    }

    /// Relative Frobenius distance after normalizing both to `h33 = 1`.
    pub fn relative_error(&self, reference: &Homography) -> f64 {
        (self.m - reference.m).norm() / reference.m.norm()
    }

    /// Mean distance between the images of `points` under the two maps.
    pub fn mean_reprojection_distance(&self, other: &Homography, points: &[[f64; 2]]) -> f64 {
        let total: f64 = points
            .iter()
            .map(|&p| {
                let (a, b) = (self.apply(p), other.apply(p));
                (a[0] - b[0]).hypot(a[1] - b[1])
            })
            .sum();
        total / points.len().max(1) as f64
    }
}

#[inline]
pub(crate) fn apply_matrix(m: &Matrix3<f64>, p: [f64; 2]) -> [f64; 2] {
    let v = m * Vector3::new(p[0], p[1], 1.0);
    [v[0] / v[2], v[1] / v[2]]
}

impl Default for Homography {
    fn default() -> Self {
        Homography::identity()
    }
}

#[derive(Serialize, Deserialize)]
struct HomographyRepr {
    h: [[f64; 3]; 3],
}

impl Serialize for Homography {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        HomographyRepr { h: self.rows() }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Homography {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = HomographyRepr::deserialize(deserializer)?;
        Homography::from_rows(repr.h).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub sensor: [f64; 2],
    pub display: [f64; 2],
    #[serde(default = "one")]
    pub confidence: f64,
}

fn one() -> f64 {
    1.0
}

impl Correspondence {
    pub fn new(display: [f64; 2], sensor: [f64; 2]) -> Correspondence {
        Correspondence { sensor, display, confidence: 1.0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RansacOptions {
    /// Inlier threshold on sensor-side reprojection error, pixels.
    pub threshold: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for RansacOptions {
    fn default() -> Self {
        RansacOptions { threshold: 1.0, iterations: 1000, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HomographyFit {
    pub homography: Homography,
    /// Indices of the pairs used in the final fit.
    pub inliers: Vec<usize>,
    /// RMS sensor-side reprojection error over the inliers.
    pub rms_error: f64,
}

/// Similarity transform moving the centroid to the origin with mean distance √2.
fn normalizing_transform(points: &[[f64; 2]], weights: &[f64]) -> Matrix3<f64> {
    let wsum: f64 = weights.iter().sum();
    let (mut cx, mut cy) = (0.0, 0.0);
    for (p, &w) in points.iter().zip(weights) {
        cx += w * p[0];
        cy += w * p[1];
    }
    cx /= wsum;
    cy /= wsum;
    let mean_dist = points.iter().zip(weights).map(|(p, &w)| w * (p[0] - cx).hypot(p[1] - cy)).sum::<f64>() / wsum;
    let s = if mean_dist > 0.0 { std::f64::consts::SQRT_2 / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

fn is_collinear(points: &[[f64; 2]]) -> bool {
    let n = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p[0] / n, b + p[1] / n));
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let (lmin, lmax) = (tr / 2.0 - disc, tr / 2.0 + disc);
    lmax <= 0.0 || lmin <= 1e-10 * lmax
}

/// Weighted normalized DLT over the given pair indices.
fn dlt(pairs: &[Correspondence], idx: &[usize]) -> Result<Homography> {
    if idx.len() < 4 {
        return Err(Error::Fit(format!("need at least 4 correspondences, got {}", idx.len())));
    }
    let src: Vec<[f64; 2]> = idx.iter().map(|&i| pairs[i].display).collect();
    let dst: Vec<[f64; 2]> = idx.iter().map(|&i| pairs[i].sensor).collect();
    let w: Vec<f64> = idx.iter().map(|&i| pairs[i].confidence.max(0.0)).collect();
    if w.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Fit("all correspondence weights are zero".into()));
    }
    if is_collinear(&src) || is_collinear(&dst) {
        return Err(Error::Fit("degenerate configuration: points are collinear".into()));
    }
    let ts = normalizing_transform(&src, &w);
    let td = normalizing_transform(&dst, &w);
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for k in 0..src.len() {
        let [x, y] = apply_matrix(&ts, src[k]);
        let [u, v] = apply_matrix(&td, dst[k]);
        let rows = [[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u], [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]];
        for r in rows {
            for i in 0..9 {
                for j in 0..9 {
                    ata[(i, j)] += w[k] * r[i] * r[j];
                }
            }
        }
    }
    let eig = SymmetricEigen::new(ata);
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (lmin2, lmax) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[8]]);
    if lmin2 <= 1e-13 * lmax {
        return Err(Error::Fit("degenerate configuration: rank-deficient DLT system".into()));
    }
    let h = eig.eigenvectors.column(order[0]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td.try_inverse().ok_or_else(|| Error::Fit("normalization failed".into()))?;
    Homography::new(td_inv * hn * ts).map_err(|e| Error::Fit(e.to_string()))
}

fn reprojection_error(h: &Homography, c: &Correspondence) -> f64 {
    let p = h.apply(c.display);
    (p[0] - c.sensor[0]).hypot(p[1] - c.sensor[1])
}

/// Fits the display → sensor homography by normalized DLT, optionally inside
/// a RANSAC loop that is followed by a refit on the consensus set.
pub fn fit_homography(set: &CorrespondenceSet, ransac: Option<&RansacOptions>) -> Result<HomographyFit> {
    let pairs = &set.pairs;
    if pairs.len() < 4 {
        return Err(Error::Fit(format!("need at least 4 correspondences, got {}", pairs.len())));
    }
    let all: Vec<usize> = (0..pairs.len()).collect();
    let Some(opts) = ransac else {
        let h = dlt(pairs, &all)?;
        return Ok(finish(h, pairs, all));
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(usize, f64, Homography)> = None;
    for _ in 0..opts.iterations {
        let pick: Vec<usize> = sample(&mut rng, pairs.len(), 4).into_vec();
        let Ok(h) = dlt(pairs, &pick) else { continue };
        let (mut count, mut err) = (0, 0.0);
        for c in pairs {
            let e = reprojection_error(&h, c);
            if e < opts.threshold {
                count += 1;
                err += e;
            }
        }
        let better = match &best {
            None => true,
            Some((bc, be, _)) => count > *bc || (count == *bc && err < *be),
        };
        if better {
            best = Some((count, err, h));
        }
    }
    let (_, _, mut h) = best.ok_or_else(|| Error::Fit("RANSAC found no non-degenerate sample".into()))?;
    let mut inliers = Vec::new();
    for _ in 0..2 {
        inliers = all.iter().copied().filter(|&i| reprojection_error(&h, &pairs[i]) < opts.threshold).collect();
        h = dlt(pairs, &inliers)?;
    }
    Ok(finish(h, pairs, inliers))
}

fn finish(h: Homography, pairs: &[Correspondence], inliers: Vec<usize>) -> HomographyFit {
    let sq: f64 = inliers.iter().map(|&i| reprojection_error(&h, &pairs[i]).powi(2)).sum();
    HomographyFit { homography: h, rms_error: (sq / inliers.len().max(1) as f64).sqrt(), inliers }
}
