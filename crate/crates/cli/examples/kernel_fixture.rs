//! Regenerates the closed-loop kernel calibration fixture under
//! `tests/fixtures/kernel_grid`: random-structure patterns rendered through
//! planted per-channel kernels and a known homography into short RAW bursts.
//!
//! cargo run -p rawforge-cli --example kernel_fixture -- crates/cli/tests/fixtures/kernel_grid

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rawforge::alignment::Homography;
use rawforge::image::{Plane, RawMeta};
use rawforge::io::{write_json, write_png16_gray, write_raw};
use rawforge::kernel::{forward_model, gen_gaussian_kernel, write_kernel_set, EstimationData, GaussianKernelSpec, Kernel, SrKernelSet};
use rawforge::patterns::gen_random_structures;
use rawforge::radiometric::TwoPointFields;
use rawforge::{CameraProfile, CfaPattern, RawFrame};

const SCALE: usize = 2;
const SUPPORT: usize = 11;
const SENSOR: usize = 48;
const DISPLAY: usize = 120;
const BATCH: usize = 20;
const FRAMES: usize = 3;
const NOISE_SIGMA: f64 = 3e-4;
const BLACK: f64 = 256.0;
const WHITE: f64 = 65535.0;

fn kernel(sx: f64, sy: f64, theta_deg: f64) -> Kernel {
    gen_gaussian_kernel(&GaussianKernelSpec::anisotropic(sx, sy, theta_deg.to_radians(), SUPPORT)).unwrap()
}

/// Integer frame holding one normalized value per CFA color.
fn flat_raw(meta: &RawMeta, rgb: [f64; 3]) -> RawFrame {
    let data = (0..SENSOR * SENSOR)
        .map(|i| {
            let c = meta.cfa.channel_at(i / SENSOR, i % SENSOR).rgb_index();
            (BLACK + rgb[c] * (WHITE - BLACK)).round() as u16
        })
        .collect();
    RawFrame::from_integer(SENSOR, SENSOR, data, meta.clone()).unwrap()
}

/// Per-channel normalized level actually stored in `raw`.
fn stored_levels(raw: &RawFrame) -> [f32; 3] {
    let plane = raw.to_plane().unwrap();
    let mut out = [0.0; 3];
    for (i, &v) in plane.data.iter().enumerate() {
        out[raw.meta.cfa.channel_at(i / SENSOR, i % SENSOR).rgb_index()] = v;
    }
    out
}

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).expect("usage: kernel_fixture <output dir>"));
    for sub in ["patterns", "bursts", "truth"] {
        std::fs::create_dir_all(dir.join(sub)).unwrap();
    }
    let profile = CameraProfile {
        name: "fixture_cam".into(),
        cfa: CfaPattern::GBRG,
        black_level: BLACK,
        white_level: WHITE,
        wb_gains: [2.0, 1.0, 1.6],
        iso_set: vec![100.0],
        noise_model: None,
        kernel_grid: [2, 2],
    };
    let meta = profile.raw_meta(100.0);

    let white = flat_raw(&meta, [0.85, 0.9, 0.8]);
    let black = flat_raw(&meta, [0.05, 0.05, 0.05]);
    write_raw(&dir.join("white.pgm"), &white).unwrap();
    write_raw(&dir.join("black.pgm"), &black).unwrap();

    // display → sensor: roughly half resolution with a mild perspective
    let h = Homography::from_rows([[0.5, 0.004, -6.0], [-0.003, 0.5, -5.8], [1e-5, -8e-6, 1.0]]).unwrap();
    let margin = SUPPORT / 2;
    let s = SCALE as f64;
    let sensor_to_hr = Homography::from_rows([[s, 0.0, margin as f64], [0.0, s, margin as f64], [0.0, 0.0, 1.0]]).unwrap();
    let extent = SCALE * SENSOR + 2 * margin;
    let fields = TwoPointFields::uniform(extent, extent, stored_levels(&white), stored_levels(&black), 0.0, 1.0).unwrap();

    let kernels = [kernel(1.1, 0.7, 30.0), kernel(1.0, 0.65, 35.0), kernel(0.9, 0.7, 45.0)];
    let seq = gen_random_structures(BATCH, DISPLAY, DISPLAY, 11).unwrap();
    let displayed: Vec<Plane> = seq.gray_frames().unwrap().into_iter().cloned().collect();
    let data = EstimationData::new(&displayed, &displayed, &fields, profile.cfa, SCALE, [0, 0]).unwrap();
    let full_h = sensor_to_hr.compose(&h).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut pairs = Vec::new();
    for (b, pattern) in displayed.iter().enumerate() {
        let pattern_file = format!("patterns/frame_{b:03}.png");
        write_png16_gray(&dir.join(&pattern_file), pattern).unwrap();
        let clean = forward_model(&data.render_target(b, &full_h).unwrap(), &kernels, SCALE, [0, 0], profile.cfa).unwrap();
        assert_eq!((clean.width, clean.height), (SENSOR, SENSOR));
        let burst = format!("bursts/{b:03}");
        std::fs::create_dir_all(dir.join(&burst)).unwrap();
        for f in 0..FRAMES {
            let samples = clean
                .data
                .iter()
                .map(|&v| {
                    let n: f64 = rng.sample(StandardNormal);
                    (BLACK + (v as f64 + NOISE_SIGMA * n) * (WHITE - BLACK)).round().clamp(0.0, 65535.0) as u16
                })
                .collect();
            let frame = RawFrame::from_integer(SENSOR, SENSOR, samples, meta.clone()).unwrap();
            write_raw(&dir.join(&burst).join(format!("{f:02}.pgm")), &frame).unwrap();
        }
        pairs.push(serde_json::json!({ "pattern": pattern_file, "burst": burst }));
    }

    // the calibration starts from a homography that is off by a fraction of a pixel
    let rough = Homography::translation(0.2, -0.15).compose(&h).unwrap();
    write_json(&dir.join("homography.json"), &rough).unwrap();
    write_json(&dir.join("profile.json"), &profile).unwrap();
    let mut truth = SrKernelSet::uniform(kernels[0].clone(), SCALE);
    truth.kernels = kernels;
    truth.refined_h = h;
    write_kernel_set(&dir.join("truth/kernels.json"), &truth).unwrap();
    write_json(
        &dir.join("manifest.json"),
        &serde_json::json!({
            "profile": "profile.json",
            "homography": "homography.json",
            "white": "white.pgm",
            "black": "black.pgm",
            "pairs": pairs,
        }),
    )
    .unwrap();
    write_json(
        &dir.join("config.json"),
        &serde_json::json!({
            "calibrate-kernels": { "patch_size": 16, "scale": SCALE, "support": SUPPORT, "batch": BATCH }
        }),
    )
    .unwrap();
    println!("fixture written to {}", Path::new(&dir).display());
}
