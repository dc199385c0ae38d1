//! Deterministic synthetic face-like corpus for tests and desk-scale runs.
//!
//! Each identity is a shared oval template overlaid with its own set of small
//! Gaussian blobs, tinted by a per-group skin tone. Pose renderings shift the
//! face sideways and add a little noise, standing in for an external editor.

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

use crate::codec::{save_image, ImageFormat};
use crate::cohort::{allocation, load_manifest, write_manifest, FaceRecord, Race, TargetDistribution};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub identities: usize,
    /// Square image side in pixels.
    pub size: u32,
    pub seed: u64,
    /// Pose levels to render for every identity; empty for none. Must include 0 when nonempty.
    pub pose_levels: Vec<f64>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            identities: 400,
            size: 112,
            seed: 0,
            pose_levels: Vec::new(),
        }
    }
}

const BLOBS: usize = 48;
const POSE_SHIFT_PX: f64 = 2.0;
const POSE_NOISE: i32 = 4;
const BACKGROUND_STEP: f64 = 12.0;

fn tone(race: Race) -> ([f64; 3], f64) {
    match race {
        Race::White => ([1.0, 0.86, 0.76], 172.0),
        Race::Black => ([1.0, 0.82, 0.70], 96.0),
        Race::Asian => ([1.0, 0.88, 0.72], 150.0),
    }
}

struct Blob {
    x: f64,
    y: f64,
    sigma: f64,
    amp: f64,
}

/// Renders one identity. `shift` moves the face horizontally by that many
/// pixels; `noise_seed` adds small per-pixel jitter.
pub fn render_face(identity_seed: u64, race: Race, size: u32, shift: f64, noise_seed: Option<u64>) -> Image {
    let mut rng = seed::rng(identity_seed);
    let n = size as f64;
    let base = tone(race).1 + rng.random_range(-12.0..12.0);
    let blobs: Vec<Blob> = (0..BLOBS)
        .map(|_| Blob {
            x: rng.random_range(0.2..0.8) * n,
            y: rng.random_range(0.12..0.88) * n,
            sigma: rng.random_range(0.018..0.045) * n,
            amp: rng.random_range(25.0..60.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 },
        })
        .collect();
    let (mult, _) = tone(race);

    let mut field = vec![0f64; (size * size) as usize];
    for b in &blobs {
        let reach = (3.0 * b.sigma).ceil();
        let bx = b.x + shift;
        let (x0, x1) = ((bx - reach).max(0.0) as u32, ((bx + reach).min(n - 1.0)).max(0.0) as u32);
        let (y0, y1) = ((b.y - reach).max(0.0) as u32, (b.y + reach).min(n - 1.0) as u32);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x as f64 - bx, y as f64 - b.y);
                field[(y * size + x) as usize] += b.amp * (-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma)).exp();
            }
        }
    }

    let mut noise = noise_seed.map(seed::rng);
    let mut px = Vec::with_capacity(field.len() * 3);
    for y in 0..size {
        for x in 0..size {
            let (u, v) = ((x as f64 - shift) / n - 0.5, y as f64 / n - 0.5);
            let inside = (u / 0.36).powi(2) + (v / 0.46).powi(2) <= 1.0;
            let mut g = field[(y * size + x) as usize] + if inside { base } else { base - BACKGROUND_STEP };
            if let Some(r) = noise.as_mut() {
                g += r.random_range(-POSE_NOISE..=POSE_NOISE) as f64;
            }
            for m in mult {
                px.push((g * m).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Image::new(size, size, 3, px).expect("dimensions are consistent")
}

/// Writes `identities` PNG faces plus `manifest.csv` into `dir` and returns the
/// records as the manifest loader reads them back. Labels follow the target
/// distribution's cell apportionment.
pub fn generate_corpus(dir: impl AsRef<Path>, opts: &SynthOptions) -> Result<Vec<FaceRecord>> {
    let dir = dir.as_ref();
    if opts.size < 100 {
        return Err(Error::usage(format!(
            "synthetic faces need at least 100 px so every resolution level is valid, got {}",
            opts.size
        )));
    }
    if !opts.pose_levels.is_empty() && !opts.pose_levels.contains(&0.0) {
        return Err(Error::usage("pose levels must include 0"));
    }
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;

    let cells = allocation(&TargetDistribution::default(), opts.identities);
    let mut labels = Vec::with_capacity(opts.identities);
    for (cell, count) in cells {
        labels.extend(std::iter::repeat_n(cell, count));
    }
    let width = opts.identities.to_string().len().max(4);

    let records: Vec<FaceRecord> = labels
        .par_iter()
        .enumerate()
        .map(|(i, cell)| -> Result<FaceRecord> {
            let id = format!("s{i:0width$}");
            let identity_seed = seed::derive(opts.seed, i as u64);
            let rel = PathBuf::from("images").join(format!("{id}.png"));
            let img = render_face(identity_seed, cell.race, opts.size, 0.0, None);
            save_image(&img, dir.join(&rel), ImageFormat::Png)?;
            let mut variants = Vec::new();
            for (k, &psi) in opts.pose_levels.iter().enumerate() {
                let prel = PathBuf::from("images").join(format!("{id}_pose{psi}.png"));
                let noise = seed::derive(identity_seed, 1000 + k as u64);
                let img = render_face(identity_seed, cell.race, opts.size, psi * POSE_SHIFT_PX, Some(noise));
                save_image(&img, dir.join(&prel), ImageFormat::Png)?;
                variants.push((psi, prel));
            }
            Ok(FaceRecord {
                id,
                image_path: rel,
                race: cell.race,
                gender: cell.gender,
                age_bucket: ["20-29", "30-39", "40-49", "50-59"][i % 4].to_string(),
                pose_variants: (!variants.is_empty()).then_some(variants),
            })
        })
        .collect::<Result<_>>()?;

    let manifest = dir.join("manifest.csv");
    write_manifest(&records, &manifest)?;
    Ok(load_manifest(&manifest)?.records)
}
