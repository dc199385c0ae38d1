//! Binary PGM (P5) / PPM (P6) and 8-bit PNG reading and writing.

use std::cell::Cell;
use std::fmt;
use std::fs;
use std::io::{self, BufRead, Cursor, Read, Seek, SeekFrom};
use std::path::Path;
use std::rc::Rc;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, MAX_DIMENSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Pgm,
    Ppm,
    Png,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Pgm => "pgm",
            ImageFormat::Ppm => "ppm",
            ImageFormat::Png => "png",
        }
    }

    /// The netpbm flavour matching a channel count.
    pub fn pnm_for(channels: u8) -> ImageFormat {
        if channels == 1 {
            ImageFormat::Pgm
        } else {
            ImageFormat::Ppm
        }
    }
}

impl fmt::Display for ImageFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

impl FromStr for ImageFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pgm" => Ok(ImageFormat::Pgm),
            "ppm" => Ok(ImageFormat::Ppm),
            "png" => Ok(ImageFormat::Png),
            other => Err(Error::usage(format!("unknown image format '{other}'"))),
        }
    }
}

/// Loads a P5, P6 or PNG file, sniffing the format from its leading bytes.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| e.context(path.display().to_string()))
}

pub fn decode(bytes: &[u8]) -> Result<Image> {
    if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        decode_pnm(bytes)
    } else if bytes.starts_with(PNG_SIGNATURE) {
        decode_png(bytes)
    } else {
        Err(Error::format(0, "unrecognized magic, expected P5, P6 or PNG"))
    }
}

pub fn save_image(img: &Image, path: impl AsRef<Path>, format: ImageFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(img, format)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode(img: &Image, format: ImageFormat) -> Result<Vec<u8>> {
    match format {
        ImageFormat::Pgm | ImageFormat::Ppm => {
            let (magic, channels) = if format == ImageFormat::Pgm {
                ("P5", 1)
            } else {
                ("P6", 3)
            };
            if img.channels() != channels {
                return Err(Error::usage(format!(
                    "{format} holds {channels}-channel images, got {} channels",
                    img.channels()
                )));
            }
            let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
            out.extend_from_slice(img.pixels());
            Ok(out)
        }
        ImageFormat::Png => encode_png(img),
    }
}

struct PnmHeader {
    channels: u8,
    width: u32,
    height: u32,
    data_offset: usize,
}

fn parse_pnm_header(bytes: &[u8]) -> Result<PnmHeader> {
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(Error::format(0, "expected P5 or P6 magic")),
    };
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // whitespace and '#' comments may separate header fields
        let field_start = pos;
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        if pos == field_start {
            return Err(Error::format(pos as u64, "expected whitespace in header"));
        }
        let digits_start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if pos == digits_start {
            let what = ["width", "height", "maxval"][i];
            return Err(Error::format(pos as u64, format!("expected {what}")));
        }
        let text = std::str::from_utf8(&bytes[digits_start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| Error::format(digits_start as u64, format!("header value {text} overflows")))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::format(pos as u64, format!("maxval must be 255, got {maxval}")));
    }
    if width == 0 || height == 0 || width > MAX_DIMENSION || height > MAX_DIMENSION {
        return Err(Error::format(2, format!("unsupported dimensions {width}x{height}")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format(pos as u64, "expected a single whitespace after maxval")),
    }
    Ok(PnmHeader {
        channels,
        width,
        height,
        data_offset: pos,
    })
}

fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let header = parse_pnm_header(bytes)?;
    let expected = header.width as usize * header.height as usize * header.channels as usize;
    let payload = &bytes[header.data_offset..];
    if payload.len() < expected {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated payload: expected {expected} bytes, found {}", payload.len()),
        ));
    }
    if payload.len() > expected {
        return Err(Error::format(
            (header.data_offset + expected) as u64,
            format!("{} trailing bytes after payload", payload.len() - expected),
        ));
    }
    Image::new(header.width, header.height, header.channels, payload.to_vec())
}

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

/// Cursor that publishes its position so a failed decode can report where it stopped.
struct TrackedCursor<'a> {
    inner: Cursor<&'a [u8]>,
    pos: Rc<Cell<u64>>,
}

impl TrackedCursor<'_> {
    fn sync(&self) {
        self.pos.set(self.inner.position());
    }
}

impl Read for TrackedCursor<'_> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.sync();
        Ok(n)
    }
}

impl BufRead for TrackedCursor<'_> {
    fn fill_buf(&mut self) -> io::Result<&[u8]> {
        self.inner.fill_buf()
    }

    fn consume(&mut self, amt: usize) {
        self.inner.consume(amt);
        self.sync();
    }
}

impl Seek for TrackedCursor<'_> {
    fn seek(&mut self, pos: SeekFrom) -> io::Result<u64> {
        let p = self.inner.seek(pos)?;
        self.sync();
        Ok(p)
    }
}

fn decode_png(bytes: &[u8]) -> Result<Image> {
    let pos = Rc::new(Cell::new(0u64));
    let cursor = TrackedCursor {
        inner: Cursor::new(bytes),
        pos: Rc::clone(&pos),
    };
    let png_err = |e: png::DecodingError| Error::format(pos.get(), format!("png: {e}"));

    let mut decoder = png::Decoder::new(cursor);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let (color, depth) = reader.output_color_type();
    let channels = match (color, depth) {
        (png::ColorType::Grayscale, png::BitDepth::Eight) => 1,
        (png::ColorType::Rgb, png::BitDepth::Eight) => 3,
        _ => {
            return Err(Error::format(
                pos.get(),
                format!("unsupported png layout {color:?}/{depth:?}, need 8-bit gray or RGB"),
            ))
        }
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(pos.get(), "png image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    buf.truncate(info.buffer_size());
    // Drop row padding if the decoder reports a wider line than width*channels.
    let row = info.width as usize * channels as usize;
    if info.line_size != row {
        buf = buf
            .chunks(info.line_size)
            .flat_map(|line| line[..row].iter().copied())
            .collect();
    }
    Image::new(info.width, info.height, channels, buf)
        .map_err(|e| Error::format(pos.get(), e.to_string()))
}

fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, img.width(), img.height());
        encoder.set_color(if img.channels() == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        });
        encoder.set_depth(png::BitDepth::Eight);
        let to_err = |e: png::EncodingError| Error::Data(format!("png encoding failed: {e}"));
        let mut writer = encoder.write_header().map_err(to_err)?;
        writer.write_image_data(img.pixels()).map_err(to_err)?;
        writer.finish().map_err(to_err)?;
    }
    Ok(out)
}
