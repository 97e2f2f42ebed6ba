//! Closed-loop acceptance gate. Every criterion runs against an independent
//! oracle and prints one PASS or FAIL line; the test fails if any criterion
//! does.

mod common;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::star::blurred_star;
use common::synth;
use common::{anisotropic, gradient_check, patch_points, planted_problem};
use rawforge::alignment::{
    bilinear_with_grad, decode_gray_code, fit_homography, warp_plane_jacobian, Correspondence, CorrespondenceSet, DecodeOptions, Homography,
    InverseMap, RansacOptions, Roi, Threshold,
};
use rawforge::evaluation::{compute_mtf, evaluate_pair_set, psnr, ssim, star_radii, summarize_mtf, MetricSpace, MtfOptions, NamedPair};
use rawforge::image::{CfaChannel, CfaPattern, LinearRgbImage, Plane, RawFrame, RawMeta};
use rawforge::kernel::{estimate_kernels, forward_model, gen_gaussian_kernel, GaussianKernelSpec, Kernel, KernelEstimationConfig};
use rawforge::noise::{estimate_hg_params, fit_iso_curves, interpolate_all, interpolate_params, sample_hg_noise, HgEstimateOptions, HgParams};
use rawforge::patterns::{gen_gray_code, Axis};
use rawforge::synthesis::{batch_synthesize, synthesize_pair, BatchConfig, IsoSampler};

/// `Ok(detail)` passes, `Err(detail)` fails.
type Outcome = Result<String, String>;

type Criterion = (&'static str, fn() -> Outcome);

fn require(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn planted_kernel_recovery() -> Outcome {
    let cfg = KernelEstimationConfig { patch_size: 32, scale: 4, support: 21, batch_size: 20, ..Default::default() };
    let k = cfg.support;
    let planted = [anisotropic(2.2, 1.4, 30.0, k), anisotropic(2.0, 1.3, 35.0, k), anisotropic(1.8, 1.4, 45.0, k)];
    let p = planted_problem(cfg.clone(), planted, 31);
    let init = Homography::translation(1.0, 0.0).compose(&p.true_h).unwrap();
    let start = Instant::now();
    let set = estimate_kernels(&p.measured, &p.displayed, &init, &p.fields, p.cfa, &cfg).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let l1: Vec<f64> = (0..3).map(|c| set.kernels[c].relative_l1(&p.kernels[c])).collect();
    let reproj = set.refined_h.mean_reprojection_distance(&p.true_h, &patch_points(&p));
    let worst = l1.iter().cloned().fold(0.0, f64::max);
    require(
        worst < 0.02 && reproj < 0.1 && secs < 300.0,
        format!("relative L1 {l1:.4?}, reprojection {reproj:.4} px, {secs:.0} s, {} iterations", set.iterations),
    )
}

/// Convolution matrix of one channel on a `w × w` grid with zero boundary.
fn convolution_matrix(k: &Kernel, w: usize) -> DMatrix<f64> {
    let m = k.radius() as isize;
    DMatrix::from_fn(w * w, w * w, |p, q| {
        let (px, py) = ((p % w) as isize, (p / w) as isize);
        let (qx, qy) = ((q % w) as isize, (q / w) as isize);
        let (dx, dy) = (px - qx, py - qy);
        if dx.abs() <= m && dy.abs() <= m {
            k.at(dx, dy)
        } else {
            0.0
        }
    })
}

fn dense_matrix_equivalence() -> Outcome {
    let (n, s, k) = (8, 2, 21);
    let m = k / 2;
    let w = s * (n - 1) + k;
    let hw = w * w;
    let layouts = [CfaPattern::RGGB, CfaPattern::GBRG, CfaPattern::GRBG, CfaPattern::BGGR];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // subsampling keeps HR pixel (m + s·j, m + s·i) of each channel
    let subsample = DMatrix::from_fn(3 * n * n, 3 * hw, |r, q| {
        let (c, i, j) = (r / (n * n), (r % (n * n)) / n, r % n);
        (q == c * hw + (m + s * i) * w + m + s * j) as u8 as f64
    });
    let mut blocks = DMatrix::zeros(3 * hw, 3 * hw);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let cfa = layouts[rng.random_range(0..4)];
        let kernels: [Kernel; 3] = std::array::from_fn(|_| Kernel::new(k, (0..k * k).map(|_| rng.random_range(-0.01..0.02)).collect()).unwrap());
        let x = LinearRgbImage::from_fn(w, w, |_, _| std::array::from_fn(|_| rng.random::<f32>()));
        for c in 0..3 {
            blocks.view_mut((c * hw, c * hw), (hw, hw)).copy_from(&convolution_matrix(&kernels[c], w));
        }
        let mosaic = DMatrix::from_fn(n * n, 3 * n * n, |r, q| {
            let c = cfa.channel_at(r / n, r % n).rgb_index();
            (q == c * n * n + r) as u8 as f64
        });
        let stacked = DVector::from_iterator(3 * hw, (0..3).flat_map(|c| x.channel(c).data).map(|v| v as f64));
        let expected = &mosaic * (&subsample * (&blocks * stacked));
        let y = forward_model(&x, &kernels, s, [0, 0], cfa).map_err(|e| e.to_string())?;
        if (y.width, y.height) != (n, n) {
            return Err(format!("forward model returned {}x{}", y.width, y.height));
        }
        for (a, b) in y.data.iter().zip(expected.iter()) {
            worst = worst.max((*a as f64 - b).abs());
        }
    }
    require(worst < 1e-5, format!("max abs error {worst:.2e} over 100 draws"))
}

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut wk, mut wh): (f64, f64) = (0.0, 0.0);
    for trial in 0..20 {
        let scale = [2, 3][trial % 2];
        let support = [5, 7][(trial / 2) % 2];
        let cfg = KernelEstimationConfig { patch_size: 6, scale, support, batch_size: 2, ..Default::default() };
        let planted: [Kernel; 3] =
            std::array::from_fn(|_| anisotropic(rng.random_range(0.5..1.2), rng.random_range(0.5..1.2), rng.random_range(0.0..90.0), support));
        let problem = planted_problem(cfg, planted, 500 + trial as u64);
        let taps = support * support;
        let kernels: [Kernel; 3] = std::array::from_fn(|_| Kernel::new(support, (0..taps).map(|_| rng.random_range(-0.01..0.05)).collect()).unwrap());
        let h = Homography::translation(rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8)).compose(&problem.true_h).unwrap();
        let (k, hh) = gradient_check(&problem, &kernels, &h);
        wk = wk.max(k);
        wh = wh.max(hh);
    }
    require(wk < 1e-4 && wh < 1e-4, format!("worst relative error: taps {wk:.2e}, homography {wh:.2e} over 20 configurations"))
}

fn noise_round_trip() -> Outcome {
    let (b1, b2) = (1e-4, 1e-6);
    let (band, height) = (64, 128);
    let levels: Vec<f32> = (0..10).map(|k| 0.02 + 0.1 * k as f32).collect();
    let clean = Plane::from_fn(band * levels.len(), height, |x, _| levels[x / band]);
    let params = HgParams { beta1: b1, beta2: b2, channel: CfaChannel::G1, iso: 100.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let burst: Vec<RawFrame> = (0..100)
        .map(|_| RawFrame::from_plane(sample_hg_noise(&clean, &params, &mut rng, false).unwrap(), RawMeta::normalized(CfaPattern::RGGB)).unwrap())
        .collect();
    let regions: Vec<Roi> = (0..levels.len()).map(|k| Roi { x: band * k, y: 0, width: band, height }).collect();
    let est = estimate_hg_params(&burst, &regions, &HgEstimateOptions::default()).map_err(|e| e.to_string())?;
    let rel: Vec<(f64, f64)> = est.iter().map(|p| ((p.beta1 / b1 - 1.0).abs(), (p.beta2 / b2 - 1.0).abs())).collect();
    let round_trip_ok = rel.iter().all(|&(e1, e2)| e1 < 0.05 && e2 < 0.05);

    // exactly quadratic in ISO per channel and parameter
    let isos = synth::ISOS;
    let poly = |ch: usize, which: usize, iso: f64| {
        let t = (ch * 2 + which) as f64;
        (1.0 + t) * 1e-6 + (2.0 + t) * 1e-8 * iso + (0.5 + t) * 1e-12 * iso * iso
    };
    let params: Vec<HgParams> = CfaChannel::ALL
        .iter()
        .enumerate()
        .flat_map(|(ch, &channel)| isos.map(|iso| HgParams { beta1: poly(ch, 0, iso), beta2: poly(ch, 1, iso), channel, iso }))
        .collect();
    let model = fit_iso_curves(&params).map_err(|e| e.to_string())?;
    let mut node: f64 = 0.0;
    let mut at600: f64 = 0.0;
    for (ch, &channel) in CfaChannel::ALL.iter().enumerate() {
        for &iso in &isos {
            let p = interpolate_params(&model, channel, iso, false).map_err(|e| e.to_string())?;
            node = node.max((p.beta1 - poly(ch, 0, iso)).abs()).max((p.beta2 - poly(ch, 1, iso)).abs());
        }
        let p = interpolate_params(&model, channel, 600.0, false).map_err(|e| e.to_string())?;
        at600 = at600.max((p.beta1 - poly(ch, 0, 600.0)).abs()).max((p.beta2 - poly(ch, 1, 600.0)).abs());
    }
    let worst1 = rel.iter().map(|r| r.0).fold(0.0, f64::max);
    let worst2 = rel.iter().map(|r| r.1).fold(0.0, f64::max);
    require(
        round_trip_ok && node < 1e-12 && at600 < 1e-12,
        format!("per-channel relative error beta1 {worst1:.4}, beta2 {worst2:.4}; node residual {node:.1e}, ISO 600 error {at600:.1e}"),
    )
}

fn mtf_analytic() -> Outcome {
    let sigma = 1.0;
    let (img, c) = blurred_star(421, 20, 200.0, sigma);
    let curve = compute_mtf(&img, c, 20, &star_radii(20, 200.0, 6.0), &MtfOptions::default()).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (&f, &m) in curve.frequencies.iter().zip(&curve.contrast) {
        if (0.05..=0.35).contains(&f) {
            let analytic = (-2.0 * std::f64::consts::PI.powi(2) * sigma * sigma * f * f).exp();
            worst = worst.max((m / analytic - 1.0).abs());
            checked += 1;
        }
    }
    let s = summarize_mtf(&curve, &curve);
    let mtf50_err = (s.mtf50 / 0.1874 - 1.0).abs();
    require(
        checked > 0 && worst < 0.05 && mtf50_err < 0.05 && s.relative_mtf50 == 1.0 && s.relative_mtf25 == 1.0,
        format!(
            "worst curve deviation {worst:.4} over {checked} radii, MTF50 {:.4} ({mtf50_err:.4}), relative {} / {}",
            s.mtf50, s.relative_mtf50, s.relative_mtf25
        ),
    )
}

fn synthesis_identity_and_recalibration() -> Outcome {
    // identity path against direct subsampling and mosaicking
    let (s, support) = (4, 7);
    let m = support / 2;
    let hr = synth::scene(100, 84, 3);
    let pool = synth::pool(Kernel::delta(support).unwrap(), s, [1.0; 3], synth::flat_model(0.0, 0.0), IsoSampler::default());
    let prof = synth::profile("cam", [1.0; 3]);
    let pair = synthesize_pair(&hr, &prof, &pool, s, &mut ChaCha8Rng::seed_from_u64(0)).map_err(|e| e.to_string())?;
    let lr = pair.lr_raw.to_plane_unclipped().map_err(|e| e.to_string())?;
    let mut mismatches = 0;
    for i in 0..lr.height {
        for j in 0..lr.width {
            let c = prof.cfa.channel_at(i, j).rgb_index();
            mismatches += (lr.get(j, i).to_bits() != hr.get(m + s * j, m + s * i, c).to_bits()) as usize;
        }
    }

    // planted noise recovered from synthesized constant bands, before and after a WB change
    let levels: Vec<f32> = (0..10).map(|k| 0.03 + 0.09 * k as f32).collect();
    let field = LinearRgbImage::from_fn(72 * levels.len(), 136, |x, _| [levels[x / 72]; 3]);
    let kernel = gen_gaussian_kernel(&GaussianKernelSpec::isotropic(1.0, 9)).unwrap();
    let model = synth::flat_model(1e-4, 1e-6);
    let truth = interpolate_all(&model, 600.0, false).map_err(|e| e.to_string())?;
    let regions: Vec<Roi> = (0..levels.len()).map(|k| Roi { x: 36 * k + 4, y: 0, width: 24, height: 64 }).collect();
    let mut worst: f64 = 0.0;
    let mut means = Vec::new();
    for wb in [[1.0; 3], [2.0; 3]] {
        let pool = synth::pool(kernel.clone(), 2, wb, model.clone(), IsoSampler::Fixed { iso: 600.0 });
        let frames: Vec<RawFrame> = (0..100)
            .map(|i| synthesize_pair(&field, &synth::profile("cam", wb), &pool, 2, &mut ChaCha8Rng::seed_from_u64(1000 + i)).map(|p| p.lr_raw))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let est = estimate_hg_params(&frames, &regions, &HgEstimateOptions::default()).map_err(|e| e.to_string())?;
        for (e, t) in est.iter().zip(&truth) {
            worst = worst.max((e.beta1 / t.beta1 - 1.0).abs()).max((e.beta2 / t.beta2 - 1.0).abs());
        }
        means.push(frames.iter().map(|f| f.sample(16, 1)).sum::<f64>() / frames.len() as f64);
    }
    // gains divide the signal before noise is added, so doubling them halves the mean only
    let ratio = means[0] / means[1];
    require(
        mismatches == 0 && worst < 0.05 && (ratio - 2.0).abs() < 0.05,
        format!("{mismatches} identity mismatches, worst beta error {worst:.4}, WB mean ratio {ratio:.4}"),
    )
}

/// Nearest-neighbour render of display frames through `h` onto a sensor grid.
fn render(frame: &Plane, inv: &InverseMap, w: usize, h: usize) -> Plane {
    Plane::from_fn(w, h, |x, y| {
        let d = inv.map([x as f64, y as f64]);
        let (dx, dy) = (d[0].round(), d[1].round());
        if dx < 0.0 || dy < 0.0 || dx >= frame.width as f64 || dy >= frame.height as f64 {
            0.0
        } else {
            frame.get(dx as usize, dy as usize)
        }
    })
}

fn gray_round_trip(h: &Homography, display: [usize; 2], sensor: [usize; 2]) -> Result<CorrespondenceSet, String> {
    let inv = InverseMap::new(h).map_err(|e| e.to_string())?;
    let planes = |axis| -> Result<Vec<Plane>, String> {
        let seq = gen_gray_code(display[0], display[1], axis, false).map_err(|e| e.to_string())?;
        Ok(seq.gray_frames().unwrap().into_iter().map(|f| render(f, &inv, sensor[0], sensor[1])).collect())
    };
    let white = render(&Plane::filled(display[0], display[1], 1.0), &inv, sensor[0], sensor[1]);
    let black = Plane::new(sensor[0], sensor[1]);
    decode_gray_code(
        &planes(Axis::Columns)?,
        &planes(Axis::Rows)?,
        Threshold::Fields { white: &white, black: &black },
        &DecodeOptions::new(display[0], display[1]),
    )
    .map_err(|e| e.to_string())
}

fn alignment_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let truth = Homography::from_rows([[0.9, 0.05, 12.0], [-0.03, 1.1, -7.0], [2e-4, -1e-4, 1.0]]).unwrap();
    let pairs: Vec<Correspondence> = (0..100)
        .map(|_| {
            let d = [rng.random_range(0.0..400.0), rng.random_range(0.0..300.0)];
            Correspondence::new(d, truth.apply(d))
        })
        .collect();
    let exact = fit_homography(&CorrespondenceSet { pairs: pairs.clone() }, None).map_err(|e| e.to_string())?;
    let exact_err = exact.homography.relative_error(&truth);

    let mut noisy = pairs;
    for p in noisy.iter_mut().take(20) {
        p.sensor = [rng.random_range(0.0..400.0), rng.random_range(0.0..300.0)];
    }
    let ransac = fit_homography(&CorrespondenceSet { pairs: noisy }, Some(&RansacOptions::default())).map_err(|e| e.to_string())?;
    let ransac_err = ransac.homography.relative_error(&truth);

    // identity geometry decodes every pixel to itself
    let ident = gray_round_trip(&Homography::identity(), [64, 48], [64, 48])?;
    let exact_decode = ident.len() == 64 * 48 && ident.pairs.iter().all(|c| c.sensor == c.display);
    let known = Homography::from_rows([[0.7, 0.03, 6.0], [-0.02, 0.72, 5.0], [1e-4, 8e-5, 1.0]]).unwrap();
    let decoded = gray_round_trip(&known, [128, 96], [112, 88])?;
    let fit = fit_homography(&decoded, Some(&RansacOptions::default())).map_err(|e| e.to_string())?;
    let pts: Vec<[f64; 2]> = (0..=4).flat_map(|i| (0..=4).map(move |j| [8.0 + 28.0 * j as f64, 8.0 + 20.0 * i as f64])).collect();
    let reproj = fit.homography.mean_reprojection_distance(&known, &pts);

    // warp derivative against central differences
    let src = Plane::from_fn(48, 40, |x, y| 0.5 + 0.3 * (x as f32 * 0.21).sin() * (y as f32 * 0.17).cos());
    let h = Homography::from_rows([[1.02, 0.03, 3.0], [-0.02, 0.98, 2.5], [4e-4, -3e-4, 1.0]]).unwrap();
    let (out, jac) = warp_plane_jacobian(&src, &h, 36, 30).map_err(|e| e.to_string())?;
    let params = h.params();
    // steps sized so every parameter moves the image by about 1e-6 pixels
    let r = 36.0;
    let steps = [1.0 / r, 1.0 / r, 1.0, 1.0 / r, 1.0 / r, 1.0, 1.0 / (r * r), 1.0 / (r * r)];
    let sample = |p: &[f64; 8], x: usize, y: usize| {
        let q = InverseMap::new(&Homography::from_params(p).unwrap()).unwrap().map([x as f64, y as f64]);
        bilinear_with_grad(&src, q[0], q[1]).map(|v| v.0)
    };
    let mut jac_err: f64 = 0.0;
    for q in 0..8 {
        let eps = 1e-6 * steps[q];
        let (mut plus, mut minus) = (params, params);
        plus[q] += eps;
        minus[q] -= eps;
        let scale = jac.iter().map(|g| g[q].abs()).fold(0.0, f64::max);
        for i in (0..out.image.data.len()).filter(|&i| out.mask[i]) {
            let (x, y) = (i % 36, i / 36);
            if let (Some(a), Some(b)) = (sample(&plus, x, y), sample(&minus, x, y)) {
                jac_err = jac_err.max((jac[i][q] - (a - b) / (2.0 * eps)).abs() / scale);
            }
        }
    }
    require(
        exact_err < 1e-6 && ransac_err < 1e-6 && exact_decode && reproj < 0.5 && jac_err < 1e-4,
        format!(
            "DLT {exact_err:.1e}, RANSAC with 20% outliers {ransac_err:.1e}, identity decode exact {exact_decode}, \
             decoded reprojection {reproj:.3} px, Jacobian {jac_err:.1e}"
        ),
    )
}

fn tree_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn reproducibility() -> Outcome {
    let inputs = tempfile::tempdir().map_err(|e| e.to_string())?;
    synth::write_inputs(inputs.path(), 4, 72);
    let prof = synth::profile("cam", [2.0, 1.0, 1.5]);
    let kernel = gen_gaussian_kernel(&GaussianKernelSpec::isotropic(0.8, 7)).unwrap();
    let pool = synth::pool(kernel, 2, [2.0, 1.0, 1.5], synth::flat_model(1e-4, 1e-6), IsoSampler::default());
    let runs = [1, 8, 1]
        .iter()
        .map(|&workers| {
            let out = tempfile::tempdir().map_err(|e| e.to_string())?;
            let cfg = BatchConfig { count: 16, patch_size: 48, scale: 2, seed: 99, workers };
            batch_synthesize(inputs.path(), out.path(), &prof, &pool, &cfg).map_err(|e| e.to_string())?;
            Ok(tree_bytes(out.path()))
        })
        .collect::<Result<Vec<_>, String>>()?;
    let files = runs[0].len();
    require(
        files == 16 * 3 + 1 && runs[0] == runs[1] && runs[0] == runs[2],
        format!("{files} files; workers 1 vs 8 identical {}, repeat identical {}", runs[0] == runs[1], runs[0] == runs[2]),
    )
}

fn metric_plumbing() -> Outcome {
    let target = LinearRgbImage::from_fn(48, 40, |x, y| [0.2 + 0.01 * (x % 9) as f32, 0.4, 0.3 + 0.01 * (y % 7) as f32]);
    let offset = target.map(|v| v + 0.1);
    let a: Vec<f32> = target.data.clone();
    // an offset of 0.1 in f32 carries a representation error near 1e-8
    let db = psnr(&offset.data, &a, 1.0).map_err(|e| e.to_string())?;
    let same = ssim(&target.channel(0).data, &target.channel(0).data, 48, 40, 1.0).map_err(|e| e.to_string())?;
    let pairs = [
        NamedPair { name: "offset".into(), prediction: &offset, target: &target },
        NamedPair { name: "same".into(), prediction: &target, target: &target },
    ];
    let rgb = evaluate_pair_set(&pairs, MetricSpace::Rgb, 1.0).map_err(|e| e.to_string())?;
    let raw = evaluate_pair_set(&pairs, MetricSpace::RawPacked { cfa: CfaPattern::GBRG }, 1.0).map_err(|e| e.to_string())?;
    let separate = rgb.space == MetricSpace::Rgb && matches!(raw.space, MetricSpace::RawPacked { .. }) && raw.pairs.len() == 2;
    let report_db = (rgb.pairs[0].psnr, raw.pairs[0].psnr);
    require(
        (db - 20.0).abs() < 1e-5
            && same == 1.0
            && rgb.pairs[1].ssim == 1.0
            && raw.pairs[1].ssim == 1.0
            && separate
            && (report_db.0 - 20.0).abs() < 1e-5
            && (report_db.1 - 20.0).abs() < 1e-5,
        format!(
            "PSNR {db:.7} dB (RGB {:.7}, raw-packed {:.7}), SSIM identical {same}, modes reported separately {separate}",
            report_db.0, report_db.1
        ),
    )
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 9] = [
        ("planted kernel recovery", planted_kernel_recovery),
        ("dense matrix equivalence", dense_matrix_equivalence),
        ("gradient correctness", gradient_correctness),
        ("noise round trip and ISO curves", noise_round_trip),
        ("MTF analytic check", mtf_analytic),
        ("synthesis identity and noise recalibration", synthesis_identity_and_recalibration),
        ("alignment suite", alignment_suite),
        ("reproducibility", reproducibility),
        ("metric plumbing", metric_plumbing),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let (verdict, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        // bypasses the harness capture so the verdicts always reach the log
        let mut out = std::io::stdout().lock();
        writeln!(out, "acceptance {} {verdict}: {name} ({detail}) [{:.1} s]", i + 1, start.elapsed().as_secs_f64()).unwrap();
        out.flush().unwrap();
        if outcome.is_err() {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
