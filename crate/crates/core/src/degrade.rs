//! Image degradation operators and the normalized severity axis.
//!
//! Every operator works per channel on 8-bit data. Accumulation is exact
//! (integer sums, or real arithmetic where the formula is affine), results are
//! rounded half-up and clamped to `[0, 255]`. Each factor has a baseline level
//! at which the operator returns its input bit-for-bit:
//!
//! | factor      | raw parameter          | sweep range | baseline |
//! |-------------|------------------------|-------------|----------|
//! | contrast    | gain `alpha`           | 0.25 ..= 4  | 1        |
//! | brightness  | offset `beta`          | -100 ..= 100| 0        |
//! | motion blur | kernel size `s` (px)   | 0 ..= 100   | 0        |
//! | resolution  | scale in percent       | 1 ..= 100   | 100      |
//! | pose        | pose edit strength     | -5 ..= 5    | 0        |
//!
//! Pose images are produced outside this crate; [`apply`] refuses them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    Contrast,
    Brightness,
    MotionBlur,
    Resolution,
    Pose,
}

impl FactorKind {
    pub const ALL: [FactorKind; 5] = [
        FactorKind::Contrast,
        FactorKind::Brightness,
        FactorKind::MotionBlur,
        FactorKind::Resolution,
        FactorKind::Pose,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FactorKind::Contrast => "contrast",
            FactorKind::Brightness => "brightness",
            FactorKind::MotionBlur => "motion_blur",
            FactorKind::Resolution => "resolution",
            FactorKind::Pose => "pose",
        }
    }

    /// Raw parameter value that leaves an image untouched.
    pub fn baseline(self) -> f64 {
        match self {
            FactorKind::Contrast => 1.0,
            FactorKind::Resolution => 100.0,
            FactorKind::Brightness | FactorKind::MotionBlur | FactorKind::Pose => 0.0,
        }
    }

    /// Inclusive range of accepted raw values.
    pub fn raw_range(self) -> (f64, f64) {
        match self {
            FactorKind::Contrast => (0.25, 4.0),
            FactorKind::Brightness => (-100.0, 100.0),
            FactorKind::MotionBlur => (0.0, 100.0),
            FactorKind::Resolution => (1.0, 100.0),
            FactorKind::Pose => (-5.0, 5.0),
        }
    }

    /// Default sweep levels for each factor.
    pub fn default_sweep(self) -> Vec<f64> {
        match self {
            FactorKind::Contrast => vec![0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0],
            FactorKind::Brightness => vec![0.0, 25.0, 50.0, 75.0, 100.0],
            FactorKind::MotionBlur => vec![0.0, 20.0, 40.0, 60.0, 80.0, 100.0],
            FactorKind::Resolution => vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 100.0],
            FactorKind::Pose => (-5..=5).map(f64::from).collect(),
        }
    }
}

impl fmt::Display for FactorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FactorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FactorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::usage(format!("unknown degradation factor '{s}'")))
    }
}

/// Maps a raw parameter onto `[-1, 1]`, with the baseline at exactly 0.
pub fn normalize(kind: FactorKind, raw: f64) -> Result<f64> {
    let (lo, hi) = kind.raw_range();
    if !raw.is_finite() || raw < lo || raw > hi {
        return Err(Error::usage(format!(
            "{kind} level {raw} outside the sweep range [{lo}, {hi}]"
        )));
    }
    Ok(match kind {
        FactorKind::Contrast if raw < 1.0 => (raw - 1.0) / 0.75,
        FactorKind::Contrast => (raw - 1.0) / 3.0,
        FactorKind::Brightness => raw / 100.0,
        FactorKind::MotionBlur => raw / 100.0,
        FactorKind::Resolution => (raw - 100.0) / 99.0,
        FactorKind::Pose => raw / 5.0,
    })
}

/// A factor at one level. The normalized level is always derived from the raw one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradationFactor {
    kind: FactorKind,
    raw_level: f64,
    normalized_level: f64,
}

impl DegradationFactor {
    pub fn new(kind: FactorKind, raw_level: f64) -> Result<Self> {
        let normalized_level = normalize(kind, raw_level)?;
        if kind == FactorKind::MotionBlur && raw_level.fract() != 0.0 {
            return Err(Error::usage(format!(
                "motion blur strength must be a whole number of pixels, got {raw_level}"
            )));
        }
        Ok(DegradationFactor {
            kind,
            raw_level,
            normalized_level,
        })
    }

    pub fn baseline(kind: FactorKind) -> Self {
        DegradationFactor::new(kind, kind.baseline()).expect("baseline is in range")
    }

    pub fn kind(&self) -> FactorKind {
        self.kind
    }

    pub fn raw_level(&self) -> f64 {
        self.raw_level
    }

    pub fn normalized_level(&self) -> f64 {
        self.normalized_level
    }

    pub fn is_baseline(&self) -> bool {
        self.normalized_level == 0.0
    }
}

impl fmt::Display for DegradationFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.kind, self.raw_level)
    }
}

fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// `min(255, |alpha * p + beta|)` per sample, rounded half-up before clamping.
pub fn adjust_contrast_brightness(img: &Image, alpha: f64, beta: f64) -> Result<Image> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::usage(format!("contrast gain must be positive, got {alpha}")));
    }
    if !beta.is_finite() {
        return Err(Error::usage(format!("brightness offset must be finite, got {beta}")));
    }
    let mut lut = [0u8; 256];
    for (p, slot) in lut.iter_mut().enumerate() {
        let v = round_half_up((alpha * p as f64 + beta).abs());
        *slot = v.min(255.0) as u8;
    }
    Ok(img.with_pixels(img.pixels().iter().map(|&p| lut[p as usize]).collect()))
}

/// Horizontal motion-blur kernel of side `size`: one row of ones at index
/// `(size - 1) / 2`, scaled so the entries sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MotionBlurKernel {
    size: usize,
}

impl MotionBlurKernel {
    pub fn size(&self) -> usize {
        self.size
    }

    /// Index of the nonzero row, which is also the anchor in both directions.
    pub fn center(&self) -> usize {
        (self.size - 1) / 2
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        assert!(row < self.size && col < self.size, "kernel index out of range");
        if row == self.center() {
            1.0 / self.size as f64
        } else {
            0.0
        }
    }

    pub fn to_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.size)
            .map(|r| (0..self.size).map(|c| self.value(r, c)).collect())
            .collect()
    }
}

pub fn motion_blur_kernel(size: usize) -> Result<MotionBlurKernel> {
    if size < 1 {
        return Err(Error::usage("motion blur kernel size must be at least 1"));
    }
    Ok(MotionBlurKernel { size })
}

/// Border index mapping that mirrors about the edge pixel without repeating it
/// (`dcb|abcd|cba`), folded repeatedly for offsets wider than the line.
pub(crate) fn reflect_101(i: i64, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as i64 - 1);
    let m = i.rem_euclid(period);
    if m < len as i64 {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Convolves every channel with [`motion_blur_kernel`]`(s)`. `s` of 0 or 1 is the identity.
pub fn motion_blur(img: &Image, s: u32) -> Image {
    if s <= 1 {
        return img.clone();
    }
    let kernel = MotionBlurKernel { size: s as usize };
    let width = img.width() as usize;
    let taps = s as i64;
    let anchor = kernel.center() as i64;
    let planes = img
        .planes()
        .into_iter()
        .map(|plane| {
            let mut out = vec![0u8; plane.len()];
            for (src, dst) in plane.chunks_exact(width).zip(out.chunks_exact_mut(width)) {
                let at = |x: i64| src[reflect_101(x, width)] as i64;
                let mut sum: i64 = (0..taps).map(|t| at(t - anchor)).sum();
                for (x, slot) in dst.iter_mut().enumerate() {
                    let x = x as i64;
                    if x > 0 {
                        sum += at(x - anchor + taps - 1) - at(x - 1 - anchor);
                    }
                    // round(sum / s) half-up, exactly
                    *slot = ((2 * sum + taps) / (2 * taps)) as u8;
                }
            }
            out
        })
        .collect();
    Image::from_planes(img.width(), img.height(), planes)
}

/// Per output index, the overlapping source indices and their integer overlap.
///
/// Source pixel `i` spans `[i * dst, (i + 1) * dst)` and output pixel `o` spans
/// `[o * src, (o + 1) * src)` in a shared integer coordinate, so weights for
/// one output always total `src`.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, u64)>> {
    (0..dst)
        .map(|o| {
            let lo = o * src;
            let hi = lo + src;
            let first = lo / dst;
            let last = (hi - 1) / dst;
            (first..=last)
                .map(|i| {
                    let a = lo.max(i * dst);
                    let b = hi.min((i + 1) * dst);
                    (i, (b - a) as u64)
                })
                .collect()
        })
        .collect()
}

/// Area-average one plane to `dst_w` x `dst_h`. Returns the exact weighted sums;
/// each must be divided by `src_w * src_h` to give the mean.
pub(crate) fn area_sums(plane: &[u8], src_w: usize, src_h: usize, dst_w: usize, dst_h: usize) -> Vec<u64> {
    let wx = area_weights(src_w, dst_w);
    let wy = area_weights(src_h, dst_h);
    let mut out = Vec::with_capacity(dst_w * dst_h);
    for row_weights in &wy {
        for col_weights in &wx {
            let mut acc = 0u64;
            for &(sy, wyv) in row_weights {
                let row = &plane[sy * src_w..(sy + 1) * src_w];
                let mut row_acc = 0u64;
                for &(sx, wxv) in col_weights {
                    row_acc += wxv * row[sx] as u64;
                }
                acc += wyv * row_acc;
            }
            out.push(acc);
        }
    }
    out
}

/// Down-sample by area averaging to `scale_pct` percent, then blow back up to
/// the original size with nearest-neighbour sampling.
pub fn resample(img: &Image, scale_pct: f64) -> Result<Image> {
    if !scale_pct.is_finite() || scale_pct <= 0.0 || scale_pct > 100.0 {
        return Err(Error::usage(format!("scale must be in (0, 100], got {scale_pct}")));
    }
    if scale_pct == 100.0 {
        return Ok(img.clone());
    }
    let (w, h) = (img.width() as usize, img.height() as usize);
    let small_w = (w as f64 * scale_pct / 100.0).floor() as usize;
    let small_h = (h as f64 * scale_pct / 100.0).floor() as usize;
    if small_w < 1 || small_h < 1 {
        return Err(Error::usage(format!(
            "{w}x{h} image at {scale_pct}% scale has no pixels left"
        )));
    }
    let area = (w * h) as u64;
    let planes = img
        .planes()
        .into_iter()
        .map(|plane| {
            let small: Vec<u8> = area_sums(&plane, w, h, small_w, small_h)
                .into_iter()
                .map(|s| ((2 * s + area) / (2 * area)) as u8)
                .collect();
            let xs: Vec<usize> = (0..w).map(|x| x * small_w / w).collect();
            let mut out = Vec::with_capacity(w * h);
            for y in 0..h {
                let row = &small[(y * small_h / h) * small_w..][..small_w];
                out.extend(xs.iter().map(|&x| row[x]));
            }
            out
        })
        .collect();
    Ok(Image::from_planes(img.width(), img.height(), planes))
}

/// Applies one factor level. Pose levels are rejected; those images come from
/// the externally edited variants listed in the manifest.
pub fn apply(img: &Image, factor: &DegradationFactor) -> Result<Image> {
    let raw = factor.raw_level();
    match factor.kind() {
        FactorKind::Contrast => adjust_contrast_brightness(img, raw, 0.0),
        FactorKind::Brightness => adjust_contrast_brightness(img, 1.0, raw),
        FactorKind::MotionBlur => Ok(motion_blur(img, raw as u32)),
        FactorKind::Resolution => resample(img, raw),
        FactorKind::Pose => Err(Error::usage(
            "pose levels cannot be synthesized; supply pose-edited images through the manifest's pose_psi/pose_path columns",
        )),
    }
}
