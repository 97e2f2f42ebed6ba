//! Heteroscedastic Gaussian sensor noise: calibration from bursts, quadratic
//! ISO interpolation and sampling.
//!
//! Parameters live in un-white-balanced normalized sensor units: a pixel with
//! clean value `y` receives noise of variance `beta1 * y + beta2`.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::alignment::Roi;
use crate::error::{Error, Result};
use crate::image::{CfaChannel, CfaPattern, Plane, RawFrame};

/// Noise parameters of one CFA site at one ISO.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HgParams {
    pub beta1: f64,
    pub beta2: f64,
    pub channel: CfaChannel,
    pub iso: f64,
}

impl HgParams {
    pub fn zero(channel: CfaChannel, iso: f64) -> HgParams {
        HgParams { beta1: 0.0, beta2: 0.0, channel, iso }
    }

    pub fn variance(&self, y: f64) -> f64 {
        self.beta1 * y + self.beta2
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta1.is_finite() && self.beta2.is_finite()) || self.beta1 < 0.0 || self.beta2 < 0.0 {
            return Err(Error::Argument(format!(
                "noise parameters for {} must be finite and non-negative, got beta1 {} beta2 {}",
                self.channel, self.beta1, self.beta2
            )));
        }
        Ok(())
    }
}

/// Mean and temporal variance of one channel inside one region.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionStat {
    pub mean: f64,
    pub variance: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HgEstimateOptions {
    /// Reweighting passes after the count-weighted fit.
    pub reweight_iterations: usize,
    /// Mean levels closer than this are treated as one level.
    pub min_level_separation: f64,
    /// Warn when the spatial spread of the temporal mean inside a region
    /// exceeds this many temporal standard deviations.
    pub homogeneity_ratio: f64,
}

impl Default for HgEstimateOptions {
    fn default() -> Self {
        HgEstimateOptions { reweight_iterations: 5, min_level_separation: 1e-3, homogeneity_ratio: 3.0 }
    }
}

/// Per-channel temporal statistics of every region, indexed like
/// `CfaChannel::ALL`.
pub fn region_statistics(burst: &[RawFrame], regions: &[Roi], opts: &HgEstimateOptions) -> Result<[Vec<RegionStat>; 4]> {
    if burst.len() < 2 {
        return Err(Error::Argument(format!("noise calibration needs at least 2 frames, got {}", burst.len())));
    }
    let first = &burst[0];
    let (w, h, cfa) = (first.width, first.height, first.meta.cfa);
    for f in burst {
        if f.width != w || f.height != h {
            return Err(Error::Dimension(format!("burst frame {}x{} differs from {w}x{h}", f.width, f.height)));
        }
        if f.meta.cfa != cfa || f.meta.iso != first.meta.iso {
            return Err(Error::Argument("burst frames disagree on CFA or ISO".into()));
        }
    }
    let planes = burst.iter().map(|f| f.to_plane_unclipped()).collect::<Result<Vec<_>>>()?;
    let n = planes.len() as f64;
    let mut out: [Vec<RegionStat>; 4] = Default::default();
    for (ri, roi) in regions.iter().enumerate() {
        if roi.width == 0 || roi.height == 0 || roi.x + roi.width > w || roi.y + roi.height > h {
            return Err(Error::Geometry(format!("region {ri} {roi:?} outside {w}x{h} frame")));
        }
        // per channel: sum of pixel means, sum of squared pixel means, sum of variances
        let mut acc = [(0.0f64, 0.0f64, 0.0f64, 0usize); 4];
        for y in roi.y..roi.y + roi.height {
            for x in roi.x..roi.x + roi.width {
                let i = y * w + x;
                let mean = planes.iter().map(|p| p.data[i] as f64).sum::<f64>() / n;
                let var = planes.iter().map(|p| (p.data[i] as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
                let k = channel_slot(cfa.channel_at(y, x));
                acc[k].0 += mean;
                acc[k].1 += mean * mean;
                acc[k].2 += var;
                acc[k].3 += 1;
            }
        }
        for (k, &(sm, smm, sv, count)) in acc.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let c = count as f64;
            let mean = sm / c;
            let variance = sv / c;
            let spread = (smm / c - mean * mean).max(0.0).sqrt();
            if count > 1 && spread > opts.homogeneity_ratio * variance.sqrt().max(1e-12) {
                warn!(
                    "region {ri} channel {} is not homogeneous: spatial spread {spread:.3e} vs temporal sigma {:.3e}",
                    CfaChannel::ALL[k],
                    variance.sqrt()
                );
            }
            out[k].push(RegionStat { mean, variance, count });
        }
    }
    Ok(out)
}

fn channel_slot(c: CfaChannel) -> usize {
    match c {
        CfaChannel::R => 0,
        CfaChannel::G1 => 1,
        CfaChannel::G2 => 2,
        CfaChannel::B => 3,
    }
}

/// Fits `variance = beta1 * mean + beta2` over region statistics.
///
/// The first pass weights by sample count; later passes divide by the squared
/// predicted variance, the variance of a sample variance up to a constant.
pub fn fit_hg_line(stats: &[RegionStat], channel: CfaChannel, iso: f64, opts: &HgEstimateOptions) -> Result<HgParams> {
    let mut levels: Vec<f64> = stats.iter().map(|s| s.mean).collect();
    levels.sort_by(f64::total_cmp);
    let distinct = 1 + levels.windows(2).filter(|w| w[1] - w[0] > opts.min_level_separation).count();
    if stats.is_empty() || distinct < 2 {
        return Err(Error::Fit(format!(
            "channel {channel}: {distinct} distinct mean level(s), at least 2 are needed to separate shot and read noise"
        )));
    }
    if stats.iter().all(|s| s.variance == 0.0) {
        return Ok(HgParams::zero(channel, iso));
    }
    let floor = 1e-12 * stats.iter().map(|s| s.variance).fold(0.0, f64::max);
    let mut weights: Vec<f64> = stats.iter().map(|s| s.count as f64).collect();
    let mut beta = [0.0; 2];
    for pass in 0..=opts.reweight_iterations {
        beta = weighted_line(stats, &weights)?;
        if pass < opts.reweight_iterations {
            for (wt, s) in weights.iter_mut().zip(stats) {
                let pred = (beta[0] * s.mean + beta[1]).max(s.variance.max(floor) * 1e-3).max(floor);
                *wt = s.count as f64 / (pred * pred);
            }
        }
    }
    let mut p = HgParams { beta1: beta[0], beta2: beta[1], channel, iso };
    if p.beta1 < 0.0 {
        warn!("channel {channel} ISO {iso}: negative shot-noise slope {:.3e} projected to 0", p.beta1);
        p.beta1 = 0.0;
        let wsum: f64 = weights.iter().sum();
        p.beta2 = stats.iter().zip(&weights).map(|(s, w)| w * s.variance).sum::<f64>() / wsum;
    }
    if p.beta2 < 0.0 {
        warn!("channel {channel} ISO {iso}: negative read-noise floor {:.3e} projected to 0", p.beta2);
        p.beta2 = 0.0;
        let num: f64 = stats.iter().zip(&weights).map(|(s, w)| w * s.mean * s.variance).sum();
        let den: f64 = stats.iter().zip(&weights).map(|(s, w)| w * s.mean * s.mean).sum();
        p.beta1 = (num / den).max(0.0);
    }
    Ok(p)
}

fn weighted_line(stats: &[RegionStat], weights: &[f64]) -> Result<[f64; 2]> {
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (s, &w) in stats.iter().zip(weights) {
        sw += w;
        sx += w * s.mean;
        sy += w * s.variance;
    }
    let (mx, my) = (sx / sw, sy / sw);
    for (s, &w) in stats.iter().zip(weights) {
        let dx = s.mean - mx;
        sxx += w * dx * dx;
        sxy += w * dx * (s.variance - my);
    }
    if !(sxx > 0.0) {
        return Err(Error::Fit("mean levels carry no weight spread".into()));
    }
    let slope = sxy / sxx;
    Ok([slope, my - slope * mx])
}

/// Calibrates all four CFA sites from a burst of one ISO.
pub fn estimate_hg_params(burst: &[RawFrame], regions: &[Roi], opts: &HgEstimateOptions) -> Result<[HgParams; 4]> {
    let stats = region_statistics(burst, regions, opts)?;
    let iso = burst[0].meta.iso;
    let mut out = [HgParams::zero(CfaChannel::R, iso); 4];
    for (k, c) in CfaChannel::ALL.into_iter().enumerate() {
        out[k] = fit_hg_line(&stats[k], c, iso, opts)?;
    }
    Ok(out)
}

/// `a * iso² + b * iso + c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsoQuadratic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Largest absolute deviation from the fitted nodes.
    pub max_residual: f64,
}

impl IsoQuadratic {
    pub fn eval(&self, iso: f64) -> f64 {
        (self.a * iso + self.b) * iso + self.c
    }

    /// Quadratic through `(iso, value)` nodes, least squares in relative
    /// error so small low-ISO values weigh as much as large high-ISO ones.
    pub fn fit(isos: &[f64], values: &[f64]) -> Result<IsoQuadratic> {
        if isos.len() != values.len() {
            return Err(Error::Dimension("ISO and value counts differ".into()));
        }
        if isos.len() < 3 {
            return Err(Error::Fit(format!("quadratic ISO fit needs at least 3 points, got {}", isos.len())));
        }
        // solve in t = iso / scale so the normal scale of the columns is one
        let scale = isos.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(scale > 0.0) {
            return Err(Error::Fit("ISO values must not all be zero".into()));
        }
        let vmax = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let wt: Vec<f64> = values
            .iter()
            .map(|v| match vmax {
                0.0 => 1.0,
                _ if v.abs() > 1e-9 * vmax => 1.0 / v.abs(),
                _ => 1.0 / vmax,
            })
            .collect();
        let a = DMatrix::from_fn(isos.len(), 3, |r, c| wt[r] * (isos[r] / scale).powi(2 - c as i32));
        let b = DVector::from_iterator(values.len(), values.iter().zip(&wt).map(|(v, w)| v * w));
        let svd = a.svd(true, true);
        if svd.singular_values.min() <= 1e-12 * svd.singular_values.max() {
            return Err(Error::Fit("ISO nodes do not determine a quadratic".into()));
        }
        let x = svd.solve(&b, 0.0).map_err(|e| Error::Fit(e.to_string()))?;
        let mut q = IsoQuadratic { a: x[0] / (scale * scale), b: x[1] / scale, c: x[2], max_residual: 0.0 };
        q.max_residual = isos.iter().zip(values).map(|(&i, &v)| (q.eval(i) - v).abs()).fold(0.0, f64::max);
        Ok(q)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelFit {
    pub channel: CfaChannel,
    pub beta1: IsoQuadratic,
    pub beta2: IsoQuadratic,
}

/// Calibrated parameters plus their ISO interpolation curves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub iso_set: Vec<f64>,
    pub calibrated: Vec<HgParams>,
    pub fits: Vec<ChannelFit>,
}

/// Fits one quadratic per channel and parameter.
pub fn fit_iso_curves(params: &[HgParams]) -> Result<NoiseModel> {
    let mut by_channel: BTreeMap<CfaChannel, Vec<HgParams>> = BTreeMap::new();
    for p in params {
        p.validate()?;
        by_channel.entry(p.channel).or_default().push(*p);
    }
    let mut iso_set: Option<Vec<f64>> = None;
    let mut fits = Vec::new();
    for c in CfaChannel::ALL {
        let mut ps = by_channel.remove(&c).unwrap_or_default();
        ps.sort_by(|a, b| a.iso.total_cmp(&b.iso));
        if ps.windows(2).any(|w| w[0].iso == w[1].iso) {
            return Err(Error::Fit(format!("channel {c} has duplicate ISO entries")));
        }
        let isos: Vec<f64> = ps.iter().map(|p| p.iso).collect();
        match &iso_set {
            None => iso_set = Some(isos.clone()),
            Some(s) if *s != isos => {
                return Err(Error::Fit(format!("channel {c} is calibrated at a different ISO set")));
            }
            _ => {}
        }
        let b1: Vec<f64> = ps.iter().map(|p| p.beta1).collect();
        let b2: Vec<f64> = ps.iter().map(|p| p.beta2).collect();
        fits.push(ChannelFit {
            channel: c,
            beta1: IsoQuadratic::fit(&isos, &b1).map_err(|e| Error::Fit(format!("channel {c} beta1: {e}")))?,
            beta2: IsoQuadratic::fit(&isos, &b2).map_err(|e| Error::Fit(format!("channel {c} beta2: {e}")))?,
        });
    }
    let mut calibrated = params.to_vec();
    calibrated.sort_by(|a, b| a.channel.cmp(&b.channel).then(a.iso.total_cmp(&b.iso)));
    Ok(NoiseModel { iso_set: iso_set.unwrap_or_default(), calibrated, fits })
}

impl NoiseModel {
    pub fn iso_range(&self) -> (f64, f64) {
        let min = self.iso_set.first().copied().unwrap_or(f64::NAN);
        let max = self.iso_set.last().copied().unwrap_or(f64::NAN);
        (min, max)
    }

    pub fn fit_for(&self, channel: CfaChannel) -> Result<&ChannelFit> {
        self.fits.iter().find(|f| f.channel == channel).ok_or_else(|| Error::Config(format!("noise model has no fit for channel {channel}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.iso_set.len() < 3 || self.iso_set.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("noise model ISO set must hold at least 3 increasing values".into()));
        }
        for c in CfaChannel::ALL {
            self.fit_for(c)?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<NoiseModel> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let model: NoiseModel = serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }
}

/// Evaluates the ISO curves of `channel`, clamped to non-negative values.
pub fn interpolate_params(model: &NoiseModel, channel: CfaChannel, iso: f64, allow_extrapolate: bool) -> Result<HgParams> {
    let (min, max) = model.iso_range();
    if !iso.is_finite() || (!allow_extrapolate && !(iso >= min && iso <= max)) {
        return Err(Error::IsoRange { iso, min, max });
    }
    let fit = model.fit_for(channel)?;
    Ok(HgParams { beta1: fit.beta1.eval(iso).max(0.0), beta2: fit.beta2.eval(iso).max(0.0), channel, iso })
}

/// All four channels at one ISO, indexed like `CfaChannel::ALL`.
pub fn interpolate_all(model: &NoiseModel, iso: f64, allow_extrapolate: bool) -> Result<[HgParams; 4]> {
    let mut out = [HgParams::zero(CfaChannel::R, iso); 4];
    for (k, c) in CfaChannel::ALL.into_iter().enumerate() {
        out[k] = interpolate_params(model, c, iso, allow_extrapolate)?;
    }
    Ok(out)
}

fn add_hg(v: f32, p: &HgParams, rng: &mut impl Rng) -> Result<f32> {
    let var = p.variance(v as f64);
    if var < 0.0 || !var.is_finite() {
        return Err(Error::Argument(format!("negative noise variance {var:e} at value {v}")));
    }
    if var == 0.0 {
        return Ok(v);
    }
    let z: f64 = StandardNormal.sample(rng);
    Ok((v as f64 + var.sqrt() * z) as f32)
}

/// Adds `N(0, beta1 * y + beta2)` independently per pixel.
pub fn sample_hg_noise(clean: &Plane, params: &HgParams, rng: &mut impl Rng, clip: bool) -> Result<Plane> {
    params.validate()?;
    let mut out = clean.clone();
    for v in &mut out.data {
        *v = add_hg(*v, params, rng)?;
        if clip {
            *v = v.clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Mosaic variant: each pixel uses the parameters of its CFA site.
/// `params` is indexed like `CfaChannel::ALL`.
pub fn sample_hg_noise_mosaic(clean: &Plane, cfa: CfaPattern, params: &[HgParams; 4], rng: &mut impl Rng, clip: bool) -> Result<Plane> {
    for p in params {
        p.validate()?;
    }
    let mut out = clean.clone();
    for y in 0..out.height {
        for x in 0..out.width {
            let i = y * out.width + x;
            let p = &params[channel_slot(cfa.channel_at(y, x))];
            let mut v = add_hg(out.data[i], p, rng)?;
            if clip {
                v = v.clamp(0.0, 1.0);
            }
            out.data[i] = v;
        }
    }
    Ok(out)
}

/// Poisson-Gaussian noise: `Poisson(y / gain) * gain + N(0, read_sigma²)`.
pub fn sample_pg_noise(clean: &Plane, gain: f64, read_sigma: f64, rng: &mut impl Rng) -> Result<Plane> {
    if !(gain > 0.0) || !(read_sigma >= 0.0) {
        return Err(Error::Argument(format!("gain must be positive and read sigma non-negative, got {gain} and {read_sigma}")));
    }
    let mut out = clean.clone();
    for v in &mut out.data {
        let lambda = (*v as f64).max(0.0) / gain;
        let shot = if lambda > 0.0 {
            let d = Poisson::new(lambda).map_err(|e| Error::Argument(e.to_string()))?;
            d.sample(rng) * gain
        } else {
            0.0
        };
        let read = if read_sigma > 0.0 { read_sigma * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
        *v = (shot + read) as f32;
    }
    Ok(out)
}
