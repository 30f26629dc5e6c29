#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use epsr::image::ImagePlane;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const METRICS: [&str; 3] = ["PI", "CLIPIQA", "MANIQA"];

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures").join(name)
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

/// One row of the summary table.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub method: String,
    pub params_m: f64,
    pub gflops: f64,
    pub metrics: [f64; 3],
    pub score: f64,
}

pub fn summary() -> Vec<SummaryRow> {
    let mut rdr = csv::Reader::from_path(fixture("summary.csv")).unwrap();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            let f = |i: usize| r[i].parse::<f64>().unwrap();
            SummaryRow {
                method: r[0].to_string(),
                params_m: f(1),
                gflops: f(2),
                metrics: [f(3), f(4), f(5)],
                score: f(6),
            }
        })
        .collect()
}

/// method → metric → (mean, median, std).
pub fn class_stats() -> BTreeMap<String, BTreeMap<String, [f64; 3]>> {
    let mut out: BTreeMap<String, BTreeMap<String, [f64; 3]>> = BTreeMap::new();
    let mut rdr = csv::Reader::from_path(fixture("class_stats.csv")).unwrap();
    for r in rdr.records() {
        let r = r.unwrap();
        let f = |i: usize| r[i].parse::<f64>().unwrap();
        out.entry(r[0].to_string()).or_default().insert(r[1].to_string(), [f(2), f(3), f(4)]);
    }
    out
}

/// method → metric → ten per-class values, in table order.
pub fn per_class() -> BTreeMap<String, BTreeMap<String, Vec<f64>>> {
    let mut out: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    let mut rdr = csv::Reader::from_path(fixture("per_class.csv")).unwrap();
    for r in rdr.records() {
        let r = r.unwrap();
        for (i, m) in METRICS.iter().enumerate() {
            let v = r[2 + i].parse::<f64>().unwrap();
            out.entry(r[0].to_string()).or_default().entry(m.to_string()).or_default().push(v);
        }
    }
    out
}

/// A deterministic textured test image: gradients, a few discs and mild
/// noise.
pub fn synthetic_image(height: usize, width: usize, seed: u64) -> ImagePlane {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let discs: Vec<(f32, f32, f32, [f32; 3])> = (0..6)
        .map(|_| {
            (
                rng.gen_range(0.0..height as f32),
                rng.gen_range(0.0..width as f32),
                rng.gen_range(0.05..0.3) * height.min(width) as f32,
                [rng.gen(), rng.gen(), rng.gen()],
            )
        })
        .collect();
    let freq: f32 = rng.gen_range(0.02..0.2);
    ImagePlane::from_fn(height, width, |y, x, c| {
        let (fy, fx) = (y as f32, x as f32);
        let mut v = 0.5 + 0.25 * ((fx * freq + c as f32).sin() * (fy * freq * 0.7).cos());
        for (cy, cx, r, col) in &discs {
            if (fy - cy).powi(2) + (fx - cx).powi(2) < r * r {
                v = 0.5 * v + 0.5 * col[c];
            }
        }
        let n = ((y * 7919 + x * 104_729 + c * 31 + seed as usize) % 97) as f32 / 97.0 - 0.5;
        (v + 0.04 * n).clamp(0.0, 1.0)
    })
    .unwrap()
}

/// Writes `count` synthetic PNGs named `img_000.png`, ... into `dir`.
pub fn write_images(dir: &Path, count: usize, height: usize, width: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..count {
        synthetic_image(height, width, seed + i as u64)
            .save_png(dir.join(format!("img_{i:03}.png")))
            .unwrap();
    }
}
