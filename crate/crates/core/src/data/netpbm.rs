//! Binary PGM (`P5`) and PPM (`P6`) images with 8-bit samples.

use crate::error::{Error, Result};

/// A decoded frame: row-major samples, channels interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub samples: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, samples: Vec<u8>) -> Result<Self> {
        if !matches!(channels, 1 | 3) {
            return Err(Error::Netpbm(format!("unsupported channel count {channels}")));
        }
        if height == 0 || width == 0 || samples.len() != height * width * channels {
            return Err(Error::Netpbm(format!(
                "{} samples do not form a {height}x{width}x{channels} image",
                samples.len()
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            samples,
        })
    }

    /// Sample at row `y`, column `x`, channel `c`.
    pub fn at(&self, y: usize, x: usize, c: usize) -> u8 {
        self.samples[(y * self.width + x) * self.channels + c]
    }

    /// Binary Netpbm encoding: `P5` for one channel, `P6` for three.
    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.samples);
        out
    }
}

/// Decodes a binary PGM or PPM with maxval 255. `#` comments may appear
/// anywhere in the header; bytes after the pixel payload are ignored.
pub fn decode_netpbm(bytes: &[u8]) -> Result<Image> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::Netpbm("bad magic, expected P5 or P6".into())),
    };
    let mut header = Header { bytes, pos: 2 };
    let width = header.field("width")?;
    let height = header.field("height")?;
    let maxval = header.field("maxval")?;
    if maxval != 255 {
        return Err(Error::Netpbm(format!("maxval {maxval} is not 255")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Netpbm("zero image extent".into()));
    }
    // Exactly one whitespace byte separates the header from the payload.
    match bytes.get(header.pos) {
        Some(b) if b.is_ascii_whitespace() => header.pos += 1,
        _ => return Err(Error::Netpbm("truncated header".into())),
    }
    let len = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::Netpbm("image extent overflows".into()))?;
    let payload = &bytes[header.pos..];
    if payload.len() < len {
        return Err(Error::Netpbm(format!(
            "truncated payload: {} of {len} bytes",
            payload.len()
        )));
    }
    Image::new(height, width, channels, payload[..len].to_vec())
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn field(&mut self, what: &str) -> Result<usize> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b'#') => {
                    while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                        self.pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Netpbm(format!("missing or invalid {what}")))
    }
}
