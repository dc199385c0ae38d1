//! 8-bit raster images and the grayscale conversion used by the builtin embedder.

use crate::error::{Error, Result};

/// Largest accepted width or height.
pub const MAX_DIMENSION: u32 = 16384;

/// Row-major 8-bit raster with one (gray) or three (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    width: u32,
    height: u32,
    channels: u8,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32, channels: u8, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::usage(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if width > MAX_DIMENSION || height > MAX_DIMENSION {
            return Err(Error::usage(format!(
                "image dimensions {width}x{height} exceed the {MAX_DIMENSION} pixel limit"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::usage(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        let expected = width as usize * height as usize * channels as usize;
        if pixels.len() != expected {
            return Err(Error::usage(format!(
                "{width}x{height}x{channels} image needs {expected} bytes, got {}",
                pixels.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// Image with every sample set to `value`.
    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Result<Self> {
        let len = width as usize * height as usize * channels as usize;
        Image::new(width, height, channels, vec![value; len])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    /// Value at column `x`, row `y`, channel `c`.
    pub fn get(&self, x: u32, y: u32, c: u8) -> u8 {
        let idx = (y as usize * self.width as usize + x as usize) * self.channels as usize
            + c as usize;
        self.pixels[idx]
    }

    /// Same geometry, new pixel buffer. The caller guarantees the length.
    pub(crate) fn with_pixels(&self, pixels: Vec<u8>) -> Image {
        debug_assert_eq!(pixels.len(), self.pixels.len());
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            pixels,
        }
    }

    /// Splits an interleaved image into its channel planes.
    pub(crate) fn planes(&self) -> Vec<Vec<u8>> {
        let c = self.channels as usize;
        if c == 1 {
            return vec![self.pixels.clone()];
        }
        (0..c)
            .map(|ch| self.pixels.iter().skip(ch).step_by(c).copied().collect())
            .collect()
    }

    /// Inverse of [`Image::planes`]; all planes must share `width` x `height`.
    pub(crate) fn from_planes(width: u32, height: u32, planes: Vec<Vec<u8>>) -> Image {
        let channels = planes.len();
        let area = width as usize * height as usize;
        let pixels = if channels == 1 {
            planes.into_iter().next().unwrap_or_default()
        } else {
            let mut out = vec![0u8; area * channels];
            for (ch, plane) in planes.iter().enumerate() {
                for (i, &v) in plane.iter().enumerate() {
                    out[i * channels + ch] = v;
                }
            }
            out
        };
        Image {
            width,
            height,
            channels: channels as u8,
            pixels,
        }
    }
}

/// BT.601 luma, rounded half-up. Identity on single-channel input.
pub fn to_grayscale(img: &Image) -> Image {
    if img.channels == 1 {
        return img.clone();
    }
    // Integer weights keep the rounding exact: (299 R + 587 G + 114 B) / 1000.
    let pixels = img
        .pixels
        .chunks_exact(3)
        .map(|rgb| {
            let weighted =
                299 * rgb[0] as u32 + 587 * rgb[1] as u32 + 114 * rgb[2] as u32;
            ((weighted + 500) / 1000).min(255) as u8
        })
        .collect();
    Image {
        width: img.width,
        height: img.height,
        channels: 1,
        pixels,
    }
}
