//! Image quality measurement: Siemens-star MTF with MTF50/MTF25 summaries
//! relative to a low-resolution baseline, and PSNR/SSIM on aligned pairs in
//! RGB or packed-Bayer space.

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::image::{mosaic, pack_bayer, CfaPattern, LinearRgbImage, Plane};
use crate::radiometric::isotonic;

/// Contrast of a star against spatial frequency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MtfCurve {
    /// Cycles per pixel, strictly increasing.
    pub frequencies: Vec<f64>,
    /// Modulation relative to the low-frequency plateau.
    pub contrast: Vec<f64>,
    pub star_center: [f64; 2],
}

impl MtfCurve {
    /// Same curve with frequencies expressed in pixels `factor` times larger.
    pub fn rescaled(&self, factor: f64) -> MtfCurve {
        MtfCurve { frequencies: self.frequencies.iter().map(|f| f * factor).collect(), ..self.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MtfOptions {
    /// Pixels whose center lies within this distance of a sampling radius
    /// belong to its annulus.
    pub annulus_half_width: f64,
    /// Number of largest radii averaged into the normalizing plateau.
    pub plateau_radii: usize,
}

impl Default for MtfOptions {
    fn default() -> Self {
        MtfOptions { annulus_half_width: 0.5, plateau_radii: 3 }
    }
}

/// Integer-step radii from the Nyquist radius to `margin` pixels inside the star.
pub fn star_radii(spokes: usize, star_radius: f64, margin: f64) -> Vec<f64> {
    let start = (spokes as f64 / std::f64::consts::PI).ceil();
    let mut out = Vec::new();
    let mut r = start;
    while r <= star_radius - margin {
        out.push(r);
        r += 1.0;
    }
    out
}

/// Least-squares `m + a·sin(nθ) + b·cos(nθ)` over the pixels of one annulus;
/// returns `(sqrt(a² + b²), m)`. Odd harmonics of a binary star that are
/// still below Nyquist at this radius are fitted alongside so they do not
/// leak into the fundamental.
fn fit_annulus(img: &Plane, center: [f64; 2], spokes: usize, radius: f64, half_width: f64) -> Option<(f64, f64)> {
    let (cx, cy) = (center[0], center[1]);
    let outer = radius + half_width;
    if cx - outer < 0.0 || cy - outer < 0.0 || cx + outer > (img.width - 1) as f64 || cy + outer > (img.height - 1) as f64 {
        return None;
    }
    let n = spokes as f64;
    let f = n / (2.0 * std::f64::consts::PI * radius);
    let orders: Vec<f64> = [1.0, 3.0, 5.0, 7.0].into_iter().filter(|&k| k == 1.0 || k * f <= 0.5).collect();
    let p = 1 + 2 * orders.len();
    let mut ata = nalgebra::DMatrix::<f64>::zeros(p, p);
    let mut atb = nalgebra::DVector::<f64>::zeros(p);
    let mut row = nalgebra::DVector::<f64>::zeros(p);
    let mut count = 0;
    for y in (cy - outer).floor() as usize..=(cy + outer).ceil() as usize {
        for x in (cx - outer).floor() as usize..=(cx + outer).ceil() as usize {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            if (dx.hypot(dy) - radius).abs() > half_width {
                continue;
            }
            let t = n * dy.atan2(dx);
            row[0] = 1.0;
            for (j, k) in orders.iter().enumerate() {
                row[1 + 2 * j] = (k * t).sin();
                row[2 + 2 * j] = (k * t).cos();
            }
            ata.ger(1.0, &row, &row, 1.0);
            atb.axpy(img.get(x, y) as f64, &row, 1.0);
            count += 1;
        }
    }
    if count < 2 * p {
        return None;
    }
    let sol = ata.lu().solve(&atb)?;
    Some((sol[1].hypot(sol[2]), sol[0]))
}

/// Measures the MTF of one star. Each radius `ρ` maps to `spokes / (2πρ)`
/// cycles per pixel; radii whose annulus leaves the image are skipped.
pub fn compute_mtf(img: &Plane, center: [f64; 2], spokes: usize, radii: &[f64], opts: &MtfOptions) -> Result<MtfCurve> {
    if spokes < 2 {
        return Err(Error::Argument(format!("a star needs at least 2 spokes, got {spokes}")));
    }
    let mut samples: Vec<(f64, f64)> = radii
        .iter()
        .filter(|&&r| r > 0.0)
        .filter_map(|&r| {
            let (amp, mean) = fit_annulus(img, center, spokes, r, opts.annulus_half_width)?;
            Some((spokes as f64 / (2.0 * std::f64::consts::PI * r), amp / mean))
        })
        .collect();
    if samples.len() < 3 {
        return Err(Error::Measurement(format!("only {} sampling radii fit inside the image", samples.len())));
    }
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    samples.dedup_by(|a, b| a.0 == b.0);
    let k = opts.plateau_radii.clamp(1, samples.len());
    let plateau = samples[..k].iter().map(|s| s.1).sum::<f64>() / k as f64;
    if !(plateau.is_finite() && plateau > 1e-6) {
        return Err(Error::Measurement(format!("no star modulation at {center:?} (plateau contrast {plateau:e})")));
    }
    Ok(MtfCurve {
        frequencies: samples.iter().map(|s| s.0).collect(),
        contrast: samples.iter().map(|s| s.1 / plateau).collect(),
        star_center: center,
    })
}

/// Frequency where the non-increasing projection of the curve first falls to
/// `level`; `None` when it never does.
pub fn crossing(curve: &MtfCurve, level: f64) -> Option<f64> {
    let neg: Vec<f64> = curve.contrast.iter().map(|c| -c).collect();
    let mono: Vec<f64> = isotonic(&neg, &vec![1.0; neg.len()]).iter().map(|c| -c).collect();
    if mono[0] <= level {
        return Some(curve.frequencies[0]);
    }
    (1..mono.len()).find(|&i| mono[i] <= level).map(|i| {
        let (f0, f1) = (curve.frequencies[i - 1], curve.frequencies[i]);
        let (c0, c1) = (mono[i - 1], mono[i]);
        if c0 == c1 {
            f0
        } else {
            f0 + (c0 - level) / (c0 - c1) * (f1 - f0)
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MtfSummary {
    pub mtf50: f64,
    pub mtf25: f64,
    pub relative_mtf50: f64,
    pub relative_mtf25: f64,
    /// Set when a curve never reached a threshold and the highest measured
    /// frequency stands in for the crossing.
    pub saturated: bool,
}

fn crossing_or_max(curve: &MtfCurve, level: f64, saturated: &mut bool) -> f64 {
    crossing(curve, level).unwrap_or_else(|| {
        *saturated = true;
        *curve.frequencies.last().expect("measured curves hold samples")
    })
}

/// MTF50/MTF25 of `sr` and their ratio to the same figures of `lr`. Both
/// curves must use the same frequency units.
pub fn summarize_mtf(sr: &MtfCurve, lr: &MtfCurve) -> MtfSummary {
    let mut saturated = false;
    let mtf50 = crossing_or_max(sr, 0.5, &mut saturated);
    let mtf25 = crossing_or_max(sr, 0.25, &mut saturated);
    let lr50 = crossing_or_max(lr, 0.5, &mut saturated);
    let lr25 = crossing_or_max(lr, 0.25, &mut saturated);
    MtfSummary { mtf50, mtf25, relative_mtf50: mtf50 / lr50, relative_mtf25: mtf25 / lr25, saturated }
}

/// Mean of per-star summaries.
pub fn average_summaries(summaries: &[MtfSummary]) -> Option<MtfSummary> {
    if summaries.is_empty() {
        return None;
    }
    let n = summaries.len() as f64;
    let mean = |f: fn(&MtfSummary) -> f64| summaries.iter().map(f).sum::<f64>() / n;
    Some(MtfSummary {
        mtf50: mean(|s| s.mtf50),
        mtf25: mean(|s| s.mtf25),
        relative_mtf50: mean(|s| s.relative_mtf50),
        relative_mtf25: mean(|s| s.relative_mtf25),
        saturated: summaries.iter().any(|s| s.saturated),
    })
}

/// Which plane of an RGB capture the MTF is measured on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MtfChannel {
    Green,
    #[default]
    Luma,
}

pub fn mtf_plane(img: &LinearRgbImage, channel: MtfChannel) -> Plane {
    match channel {
        MtfChannel::Green => img.channel(1),
        MtfChannel::Luma => Plane::from_fn(img.width, img.height, |x, y| {
            let [r, g, b] = img.pixel(x, y);
            0.2126 * r + 0.7152 * g + 0.0722 * b
        }),
    }
}

/// PSNR in dB, `+inf` for identical inputs. Serialized with [`db_serde`].
pub fn psnr(a: &[f32], b: &[f32], peak: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Dimension(format!("PSNR inputs hold {} and {} samples", a.len(), b.len())));
    }
    let mse = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (peak * peak / mse).log10() })
}

/// Serializes non-finite dB values as the strings `"inf"`, `"-inf"` and `"nan"`.
pub mod db_serde {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("expected a number or inf, got {other:?}"))),
            },
        }
    }
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w: [f64; SSIM_WINDOW] = std::array::from_fn(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable valid-mode filtering with the SSIM window.
fn filter_valid(data: &[f64], width: usize, height: usize, w: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (width + 1 - SSIM_WINDOW, height + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * height];
    for y in 0..height {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|k| w[k] * data[y * width + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|k| w[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of one channel: Gaussian 11×11 window with σ = 1.5 over the
/// positions where the window fits, `C1 = (0.01·peak)²`, `C2 = (0.03·peak)²`.
pub fn ssim(a: &[f32], b: &[f32], width: usize, height: usize, peak: f64) -> Result<f64> {
    if a.len() != width * height || b.len() != width * height {
        return Err(Error::Dimension(format!("SSIM inputs do not hold {width}x{height} samples")));
    }
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(Error::Dimension(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {width}x{height}")));
    }
    let w = gaussian_window();
    let x: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|d| filter_valid(d, width, height, &w));
    let (c1, c2) = ((0.01 * peak).powi(2), (0.03 * peak).powi(2));
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Colour space in which paired metrics are computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "space", rename_all = "snake_case")]
pub enum MetricSpace {
    Rgb,
    /// Both images are mosaicked through `cfa` and packed into four
    /// half-resolution Bayer channels.
    RawPacked {
        cfa: CfaPattern,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub name: String,
    #[serde(with = "db_serde")]
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub space: MetricSpace,
    pub peak: f64,
    pub pairs: Vec<PairMetrics>,
    #[serde(with = "db_serde")]
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

pub struct NamedPair<'a> {
    pub name: String,
    pub prediction: &'a LinearRgbImage,
    pub target: &'a LinearRgbImage,
}

/// Channel planes of one image in the chosen metric space.
fn metric_channels(img: &LinearRgbImage, space: MetricSpace) -> Result<(usize, usize, Vec<Vec<f32>>)> {
    match space {
        MetricSpace::Rgb => Ok((img.width, img.height, (0..3).map(|c| img.channel(c).data).collect())),
        MetricSpace::RawPacked { cfa } => {
            let raw = mosaic(img, cfa)?;
            let packed = pack_bayer(&raw.data, raw.width, raw.height)?;
            Ok((packed.width, packed.height, packed.channels.to_vec()))
        }
    }
}

/// PSNR over all channels jointly and SSIM averaged over channels.
pub fn pair_metrics(prediction: &LinearRgbImage, target: &LinearRgbImage, space: MetricSpace, peak: f64) -> Result<(f64, f64)> {
    if prediction.width != target.width || prediction.height != target.height {
        return Err(Error::Dimension(format!(
            "prediction {}x{} and target {}x{} are not aligned",
            prediction.width, prediction.height, target.width, target.height
        )));
    }
    let (w, h, pc) = metric_channels(prediction, space)?;
    let (_, _, tc) = metric_channels(target, space)?;
    let flat_p: Vec<f32> = pc.concat();
    let flat_t: Vec<f32> = tc.concat();
    let p = psnr(&flat_p, &flat_t, peak)?;
    let mut s = 0.0;
    for (a, b) in pc.iter().zip(&tc) {
        s += ssim(a, b, w, h, peak)?;
    }
    Ok((p, s / pc.len() as f64))
}

pub fn evaluate_pair_set(pairs: &[NamedPair<'_>], space: MetricSpace, peak: f64) -> Result<MetricsReport> {
    let results = pairs
        .par_iter()
        .map(|p| {
            let (psnr, ssim) = pair_metrics(p.prediction, p.target, space, peak)?;
            Ok(PairMetrics { name: p.name.clone(), psnr, ssim })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = results.len().max(1) as f64;
    let (mean_psnr, mean_ssim) = if results.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (results.iter().map(|r| r.psnr).sum::<f64>() / n, results.iter().map(|r| r.ssim).sum::<f64>() / n)
    };
    Ok(MetricsReport { space, peak, pairs: results, mean_psnr, mean_ssim })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sinusoidal_star(size: usize, spokes: usize) -> (Plane, [f64; 2]) {
        let c = (size as f64 - 1.0) / 2.0;
        let p = Plane::from_fn(size, size, |x, y| {
            let t = (y as f64 - c).atan2(x as f64 - c);
            (0.5 + 0.4 * (spokes as f64 * t).sin()) as f32
        });
        (p, [c, c])
    }

    #[test]
    fn ideal_star_keeps_full_contrast() {
        let (img, c) = sinusoidal_star(201, 20);
        let curve = compute_mtf(&img, c, 20, &star_radii(20, 99.0, 1.0), &MtfOptions::default()).unwrap();
        for (f, v) in curve.frequencies.iter().zip(&curve.contrast) {
            if *f < 0.35 {
                assert!(*v >= 0.95, "contrast {v} at {f}");
            }
        }
        assert!(curve.frequencies.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn affine_intensity_change_leaves_mtf_unchanged() {
        let (img, c) = sinusoidal_star(121, 20);
        let blurred = Plane::from_fn(121, 121, |x, y| {
            let v: f32 = (0..3)
                .flat_map(|dy| (0..3).map(move |dx| (dx, dy)))
                .map(|(dx, dy)| img.get((x + dx).clamp(1, 121) - 1, (y + dy).clamp(1, 121) - 1))
                .sum();
            v / 9.0
        });
        let radii = star_radii(20, 58.0, 1.0);
        let a = compute_mtf(&blurred, c, 20, &radii, &MtfOptions::default()).unwrap();
        let shifted = Plane::from_fn(121, 121, |x, y| 0.5 * blurred.get(x, y) + 0.1);
        let b = compute_mtf(&shifted, c, 20, &radii, &MtfOptions::default()).unwrap();
        for (x, y) in a.contrast.iter().zip(&b.contrast) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn flat_image_and_tiny_image_fail() {
        let flat = Plane::filled(101, 101, 0.5);
        let radii = star_radii(20, 49.0, 1.0);
        assert!(matches!(compute_mtf(&flat, [50.0, 50.0], 20, &radii, &MtfOptions::default()), Err(Error::Measurement(_))));
        let small = Plane::filled(12, 12, 0.5);
        assert!(matches!(compute_mtf(&small, [6.0, 6.0], 20, &radii, &MtfOptions::default()), Err(Error::Measurement(_))));
    }

    fn curve(f: impl Fn(f64) -> f64) -> MtfCurve {
        let frequencies: Vec<f64> = (1..=50).map(|i| i as f64 * 0.01).collect();
        MtfCurve { contrast: frequencies.iter().map(|&x| f(x)).collect(), frequencies, star_center: [0.0; 2] }
    }

    #[test]
    fn self_ratio_is_exactly_one_and_doubling_is_two() {
        let lr = curve(|f| (-19.7392 * f * f).exp());
        let s = summarize_mtf(&lr, &lr);
        assert_eq!((s.relative_mtf50, s.relative_mtf25), (1.0, 1.0));
        assert!(s.mtf25 >= s.mtf50);
        let sharper = curve(|f| (-19.7392 * f * f / 4.0).exp());
        let s = summarize_mtf(&sharper, &lr);
        assert!((s.relative_mtf50 - 2.0).abs() < 0.02, "{}", s.relative_mtf50);
    }

    #[test]
    fn never_crossing_curve_saturates() {
        let flat = curve(|_| 0.9);
        let s = summarize_mtf(&flat, &flat);
        assert!(s.saturated);
        assert_eq!(s.mtf50, 0.5);
    }

    #[test]
    fn psnr_closed_forms() {
        let a = vec![0.2f32; 100];
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let b: Vec<f32> = vec![0.3f32; 100];
        let offset = (0.3f32 as f64) - (0.2f32 as f64);
        assert!((psnr(&a, &b, 1.0).unwrap() + 20.0 * offset.log10()).abs() < 1e-9);
        assert!(psnr(&a, &b[..10], 1.0).is_err());
    }

    #[test]
    fn psnr_matches_brute_force_mse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f32> = (0..999).map(|_| rng.random()).collect();
        let b: Vec<f32> = (0..999).map(|_| rng.random()).collect();
        let mut mse = 0.0;
        for i in 0..a.len() {
            mse += (a[i] as f64 - b[i] as f64) * (a[i] as f64 - b[i] as f64);
        }
        mse /= a.len() as f64;
        assert!((psnr(&a, &b, 1.0).unwrap() - 10.0 * (1.0 / mse).log10()).abs() < 1e-9);
    }

    #[test]
    fn db_values_serialize_inf_as_text() {
        let m = PairMetrics { name: "x".into(), psnr: f64::INFINITY, ssim: 1.0 };
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"psnr\":\"inf\""));
        let back: PairMetrics = serde_json::from_str(&s).unwrap();
        assert_eq!(back.psnr, f64::INFINITY);
    }

    #[test]
    fn ssim_closed_forms() {
        let (w, h) = (16, 16);
        let checker: Vec<f32> = (0..w * h).map(|i| ((i % w + i / w) % 2) as f32).collect();
        assert_eq!(ssim(&checker, &checker, w, h, 1.0).unwrap(), 1.0);
        let negative: Vec<f32> = checker.iter().map(|v| 1.0 - v).collect();
        assert!(ssim(&checker, &negative, w, h, 1.0).unwrap() < 0.0);

        // constants: only the luminance term departs from one
        let (p, q) = (0.3f64, 0.6f64);
        let a = vec![p as f32; w * h];
        let b = vec![q as f32; w * h];
        let (p, q) = (p as f32 as f64, q as f32 as f64);
        let c1 = 1e-4;
        let expect = (2.0 * p * q + c1) / (p * p + q * q + c1);
        assert!((ssim(&a, &b, w, h, 1.0).unwrap() - expect).abs() < 1e-9);
        assert!((ssim(&a, &b, w, h, 1.0).unwrap() - ssim(&b, &a, w, h, 1.0).unwrap()).abs() < 1e-15);
        assert!(ssim(&a, &b, 8, 32, 1.0).is_err());
    }

    #[test]
    fn both_metric_spaces_run_separately() {
        let img = LinearRgbImage::from_fn(32, 32, |x, y| [x as f32 / 32.0, y as f32 / 32.0, 0.5]);
        let pairs = [NamedPair { name: "a".into(), prediction: &img, target: &img }];
        let rgb = evaluate_pair_set(&pairs, MetricSpace::Rgb, 1.0).unwrap();
        let raw = evaluate_pair_set(&pairs, MetricSpace::RawPacked { cfa: CfaPattern::RGGB }, 1.0).unwrap();
        assert_eq!(rgb.mean_psnr, f64::INFINITY);
        assert_eq!(raw.mean_ssim, 1.0);
        assert_ne!(rgb.space, raw.space);
    }

    proptest::proptest! {
        #[test]
        fn metrics_are_symmetric(seed in 0u64..1000, w in 11usize..24, h in 11usize..24) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f32> = (0..w * h).map(|_| rng.random()).collect();
            let b: Vec<f32> = (0..w * h).map(|_| rng.random()).collect();
            proptest::prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
            let (x, y) = (ssim(&a, &b, w, h, 1.0).unwrap(), ssim(&b, &a, w, h, 1.0).unwrap());
            proptest::prop_assert!((x - y).abs() < 1e-12 && (-1.0..=1.0).contains(&x));
            proptest::prop_assert_eq!(ssim(&a, &a, w, h, 1.0).unwrap(), 1.0);
        }

        #[test]
        fn mtf25_never_below_mtf50(c in proptest::collection::vec(0.0f64..1.2, 5..40)) {
            let frequencies: Vec<f64> = (1..=c.len()).map(|i| i as f64 * 0.01).collect();
            let curve = MtfCurve { frequencies, contrast: c, star_center: [0.0; 2] };
            let s = summarize_mtf(&curve, &curve);
            proptest::prop_assert!(s.mtf25 >= s.mtf50);
        }
    }
}
