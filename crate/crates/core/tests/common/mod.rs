#![allow(dead_code)]

use std::path::PathBuf;

use degrade_bench::cohort::{Cell, FaceRecord, Gender, Presence, Probe, Race, Split};
use degrade_bench::degrade::motion_blur_kernel;
use degrade_bench::ident::{search_1_to_n, ConfusionCounts, Embedding, MatchResult};
use degrade_bench::synth::{generate_corpus, SynthOptions};
use degrade_bench::{seed, Image};
use rand::Rng;

pub fn record(id: &str, race: Race, gender: Gender) -> FaceRecord {
    FaceRecord {
        id: id.to_string(),
        image_path: PathBuf::from(format!("{id}.png")),
        race,
        gender,
        age_bucket: "30-39".to_string(),
        pose_variants: None,
    }
}

/// `n` records whose labels cycle through the six cells with census-like weights.
pub fn population(n: usize) -> Vec<FaceRecord> {
    let pattern = [
        (Race::White, Gender::Female),
        (Race::White, Gender::Male),
        (Race::Black, Gender::Female),
        (Race::White, Gender::Female),
        (Race::White, Gender::Male),
        (Race::Asian, Gender::Female),
        (Race::Black, Gender::Male),
        (Race::White, Gender::Female),
        (Race::White, Gender::Male),
        (Race::Asian, Gender::Male),
    ];
    (0..n)
        .map(|i| {
            let (r, g) = pattern[i % pattern.len()];
            record(&format!("p{i:05}"), r, g)
        })
        .collect()
}

pub fn cell_count(records: &[FaceRecord], cell: Cell) -> usize {
    records.iter().filter(|r| r.cell() == cell).count()
}

pub fn random_image(rng: &mut impl Rng, max_w: u32, max_h: u32) -> Image {
    let w = rng.random_range(1..=max_w);
    let h = rng.random_range(1..=max_h);
    let c = if rng.random_bool(0.5) { 1 } else { 3 };
    let px = (0..w * h * c as u32).map(|_| rng.random()).collect();
    Image::new(w, h, c, px).unwrap()
}

/// Mirror about the edge pixel without repeating it, applied until in range.
fn mirror(mut i: i64, n: i64) -> usize {
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Full 2-D correlation with the published kernel matrix, in exact integer
/// arithmetic: every entry is 0 or 1/s, so scaling by s gives integer weights.
pub fn blur_oracle(img: &Image, s: u32) -> Image {
    if s <= 1 {
        return img.clone();
    }
    let k = motion_blur_kernel(s as usize).unwrap().to_matrix();
    let anchor = ((s - 1) / 2) as i64;
    let (w, h, c) = (img.width() as i64, img.height() as i64, img.channels());
    let mut px = Vec::new();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc: i64 = 0;
                for (ky, row) in k.iter().enumerate() {
                    for (kx, &v) in row.iter().enumerate() {
                        let weight = (v * s as f64).round() as i64;
                        if weight == 0 {
                            continue;
                        }
                        let sy = mirror(y + ky as i64 - anchor, h) as u32;
                        let sx = mirror(x + kx as i64 - anchor, w) as u32;
                        acc += weight * img.get(sx, sy, ch) as i64;
                    }
                }
                // acc / s rounded half up, without floating point
                let s = s as i64;
                px.push(((2 * acc + s) / (2 * s)) as u8);
            }
        }
    }
    Image::new(img.width(), img.height(), c, px).unwrap()
}

/// Area average to floor(dim * pct / 100), then nearest-neighbour back up.
/// Coverage of each source pixel is measured on a grid refined by both sizes.
pub fn resample_oracle(img: &Image, pct: u32) -> Option<Image> {
    let (w, h, c) = (img.width() as u64, img.height() as u64, img.channels());
    if pct == 100 {
        return Some(img.clone());
    }
    let (sw, sh) = (w * pct as u64 / 100, h * pct as u64 / 100);
    if sw == 0 || sh == 0 {
        return None;
    }
    let overlap = |a0: u64, a1: u64, b0: u64, b1: u64| a1.min(b1).saturating_sub(a0.max(b0));
    let mut small = vec![0u8; (sw * sh) as usize * c as usize];
    for oy in 0..sh {
        for ox in 0..sw {
            for ch in 0..c {
                let mut acc = 0u64;
                for y in 0..h {
                    for x in 0..w {
                        let wy = overlap(y * sh, (y + 1) * sh, oy * h, (oy + 1) * h);
                        let wx = overlap(x * sw, (x + 1) * sw, ox * w, (ox + 1) * w);
                        acc += wx * wy * img.get(x as u32, y as u32, ch) as u64;
                    }
                }
                let area = w * h;
                small[((oy * sw + ox) * c as u64 + ch as u64) as usize] = ((2 * acc + area) / (2 * area)) as u8;
            }
        }
    }
    let mut px = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = (x * sw / w, y * sh / h);
            for ch in 0..c as u64 {
                px.push(small[((sy * sw + sx) * c as u64 + ch) as usize]);
            }
        }
    }
    Some(Image::new(img.width(), img.height(), c, px).unwrap())
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
}

/// Counts every probe-gallery comparison directly from the definitions.
/// `mates[p]` is the gallery index of probe p's identity, if enrolled.
pub fn tally_oracle(
    probes: &[Embedding],
    mates: &[Option<usize>],
    gallery: &[Embedding],
    threshold: f64,
) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (p, mate) in probes.iter().zip(mates) {
        for (g, ge) in gallery.iter().enumerate() {
            let hit = cosine(p.vector(), ge.vector()) <= threshold;
            match (Some(g) == *mate, hit) {
                (true, true) => c.tp += 1,
                (true, false) => c.fn_ += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    c
}

pub struct Corpus {
    pub dir: tempfile::TempDir,
    pub records: Vec<FaceRecord>,
}

impl Corpus {
    pub fn manifest(&self) -> PathBuf {
        self.dir.path().join("manifest.csv")
    }
}

pub fn corpus(identities: usize, pose: bool) -> Corpus {
    let dir = tempfile::tempdir().unwrap();
    let opts = SynthOptions {
        identities,
        pose_levels: if pose { (-5..=5).map(f64::from).collect() } else { Vec::new() },
        ..SynthOptions::default()
    };
    let records = generate_corpus(dir.path(), &opts).unwrap();
    Corpus { dir, records }
}

pub fn random_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if v.iter().any(|x| x.abs() > 1e-3) {
            return v;
        }
    }
}

/// A random split with its gallery and probe embeddings. Probe vectors are
/// perturbed copies of their mate's vector so matches actually happen.
pub struct Instance {
    pub split: Split,
    pub gallery: Vec<Embedding>,
    pub probes: Vec<Embedding>,
    pub mates: Vec<Option<usize>>,
}

pub fn instance(seed: u64) -> Instance {
    let mut rng = seed::rng(seed);
    let n_gallery = rng.random_range(1..=10);
    let n_present = rng.random_range(0..=n_gallery.min(10));
    let n_absent = rng.random_range(0..=10 - n_present);
    let dim = rng.random_range(2..=5);
    let labels = [Race::White, Race::Black, Race::Asian];
    let mk = |rng: &mut rand_chacha::ChaCha8Rng, id: String| {
        record(&id, labels[rng.random_range(0..3)], if rng.random_bool(0.5) { Gender::Female } else { Gender::Male })
    };
    let gallery_recs: Vec<_> = (0..n_gallery).map(|i| mk(&mut rng, format!("g{i}"))).collect();
    let gallery: Vec<Embedding> = gallery_recs
        .iter()
        .map(|r| Embedding::new(&r.id, random_vector(&mut rng, dim)).unwrap())
        .collect();
    let mut probes = Vec::new();
    let mut probe_embs = Vec::new();
    let mut mates = Vec::new();
    for (i, rec) in gallery_recs.iter().take(n_present).enumerate() {
        probes.push(Probe { record: rec.clone(), presence: Presence::TargetPresent });
        let v: Vec<f64> = gallery[i].vector().iter().map(|x| x + rng.random_range(-0.5..0.5)).collect();
        let v = if v.iter().all(|x| *x == 0.0) { random_vector(&mut rng, dim) } else { v };
        probe_embs.push(Embedding::new(&rec.id, v).unwrap());
        mates.push(Some(i));
    }
    for i in 0..n_absent {
        let rec = mk(&mut rng, format!("a{i}"));
        probe_embs.push(Embedding::new(&rec.id, random_vector(&mut rng, dim)).unwrap());
        probes.push(Probe { record: rec, presence: Presence::TargetAbsent });
        mates.push(None);
    }
    Instance {
        split: Split { replication: 0, gallery: gallery_recs, probes },
        gallery,
        probes: probe_embs,
        mates,
    }
}

pub fn search_all(inst: &Instance, t: f64) -> Vec<MatchResult> {
    inst.probes
        .iter()
        .map(|p| search_1_to_n(p, &inst.gallery, t).unwrap())
        .collect()
}
