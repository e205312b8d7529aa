//! In-memory image buffers and the binary Netpbm codec (PPM `P6`, PGM `P5`).
//!
//! Every image in the pipeline is an 8-bit [`ImageBuffer`], either 3-channel
//! RGB or 1-channel grayscale. Encoding a buffer and decoding the result is
//! bit-exact for 3-channel buffers; grayscale files are replicated to three
//! channels on decode so the rest of the pipeline only ever sees one color
//! convention.

use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Largest sample count we are willing to allocate for one image (256 MiB).
const MAX_SAMPLES: u64 = 1 << 28;

/// H×W×C raster with 8-bit samples in row-major order, R,G,B for 3 channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl ImageBuffer {
    /// Builds a buffer from raw samples. `data.len()` must equal
    /// `width * height * channels` and `channels` must be 1 or 3.
    pub fn from_raw(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::image("zero-sized image"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::image(format!(
                "unsupported channel count {channels} (expected 1 or 3)"
            )));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|p| p.checked_mul(channels))
            .ok_or_else(|| Error::image("image dimensions overflow"))?;
        if data.len() != expected {
            return Err(Error::image(format!(
                "sample count {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(ImageBuffer {
            width,
            height,
            channels,
            data,
        })
    }

    /// Constant-color buffer, mostly used by tests and fixtures.
    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::from_raw(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Sample at (x, y) for one channel. Panics if out of bounds.
    pub fn sample(&self, x: usize, y: usize, c: usize) -> u8 {
        debug_assert!(x < self.width && y < self.height && c < self.channels);
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub(crate) fn set_sample(&mut self, x: usize, y: usize, c: usize, value: u8) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    /// Replicates a 1-channel buffer to 3 channels; 3-channel input is
    /// returned unchanged.
    pub fn to_rgb(&self) -> ImageBuffer {
        if self.channels == 3 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.data.len() * 3);
        for &v in &self.data {
            data.extend_from_slice(&[v, v, v]);
        }
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }
}

/// Reads a binary PPM (`P6`) or PGM (`P5`) file.
///
/// Grayscale sources are replicated to 3 channels so every decoded image has
/// `channels == 3`.
pub fn decode_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bytes(&bytes).map_err(|e| match e {
        Error::Image { message } => Error::ImageFile {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

/// Decodes a binary PPM/PGM byte slice (see [`decode_image`]).
pub fn decode_bytes(bytes: &[u8]) -> Result<ImageBuffer> {
    let mut cursor = Cursor { bytes, pos: 0 };
    let magic = cursor.take(2)?;
    let channels = match magic {
        b"P6" => 3usize,
        b"P5" => 1usize,
        _ => return Err(Error::image("unsupported format (expected P6 or P5 magic)")),
    };
    let width = cursor.next_header_number()?;
    let height = cursor.next_header_number()?;
    let maxval = cursor.next_header_number()?;
    if width == 0 || height == 0 {
        return Err(Error::image("zero-sized image"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::image(format!(
            "unsupported maxval {maxval} (only 8-bit samples)"
        )));
    }
    // Exactly one whitespace byte separates the header from the payload.
    let sep = cursor.take(1)?;
    if !sep[0].is_ascii_whitespace() {
        return Err(Error::image("missing whitespace before pixel data"));
    }
    let samples = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(channels as u64))
        .filter(|&n| n <= MAX_SAMPLES)
        .ok_or_else(|| Error::image(format!("image dimensions overflow ({width}x{height})")))?;
    let payload = cursor.take(samples as usize)?;
    let gray = ImageBuffer::from_raw(width as usize, height as usize, channels, payload.to_vec())?;
    Ok(if channels == 1 { gray.to_rgb() } else { gray })
}

/// Writes `img` as binary PPM (3 channels) or PGM (1 channel).
///
/// `decode_image` of the written file recovers the exact samples; for
/// 3-channel buffers the round trip is the identity.
pub fn encode_image(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_netpbm(img, &mut w).map_err(|e| Error::io(path, e))
}

/// Encodes `img` to an in-memory Netpbm byte vector.
pub fn encode_bytes(img: &ImageBuffer) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.data.len() + 32);
    write_netpbm(img, &mut out).expect("write to Vec cannot fail");
    out
}

fn write_netpbm<W: Write>(img: &ImageBuffer, w: &mut W) -> std::io::Result<()> {
    let magic: &[u8] = if img.channels == 3 { b"P6" } else { b"P5" };
    w.write_all(magic)?;
    writeln!(w, "\n{} {}\n255", img.width, img.height)?;
    w.write_all(&img.data)?;
    w.flush()
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::image("truncated file"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    /// Reads the next ASCII decimal in the header, skipping whitespace and
    /// `#` comment lines.
    fn next_header_number(&mut self) -> Result<u64> {
        loop {
            match self.bytes.get(self.pos) {
                None => return Err(Error::image("truncated header")),
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
            }
        }
        let start = self.pos;
        while let Some(b) = self.bytes.get(self.pos) {
            if b.is_ascii_digit() {
                self.pos += 1;
            } else {
                break;
            }
        }
        if self.pos == start {
            return Err(Error::image("malformed header (expected a number)"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::image("malformed header number"))
    }
}
