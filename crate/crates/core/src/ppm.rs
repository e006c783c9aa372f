//! Binary PPM (P6, maxval 255).
//!
//! Headers are written as `P6\n<w> <h>\n255\n` followed by the raw samples.
//! Comments are accepted on read and never written.

use std::path::Path;

use crate::colorspace::RgbImage;
use crate::{Error, Result};

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", img.width(), img.height());
    let mut out = Vec::with_capacity(header.len() + img.data().len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(img.data());
    out
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&c) = self.bytes.get(self.pos) {
            if c == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n' && c != b'\r') {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::MalformedPpm(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MalformedPpm(format!("{what} out of range")))
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::MalformedPpm("missing magic number".into()));
    }
    match bytes[1] {
        b'6' => {}
        d @ b'1'..=b'7' => return Err(Error::UnsupportedPpm(format!("P{}", d as char))),
        _ => return Err(Error::MalformedPpm("missing magic number".into())),
    }
    let mut r = HeaderReader { bytes, pos: 2 };
    if !r.bytes.get(2).is_some_and(|c| c.is_ascii_whitespace() || *c == b'#') {
        return Err(Error::MalformedPpm("magic number must be followed by whitespace".into()));
    }
    let width = r.number("width")?;
    let height = r.number("height")?;
    let maxval = r.number("maxval")?;
    if maxval != 255 {
        return Err(Error::MalformedPpm(format!("maxval {maxval} (only 255 is supported)")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if !r.bytes.get(r.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::MalformedPpm("missing whitespace after maxval".into()));
    }
    let start = r.pos + 1;
    if width == 0 || height == 0 {
        return Err(Error::MalformedPpm(format!("empty image {width}x{height}")));
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| Error::MalformedPpm("dimensions overflow".into()))?;
    let payload = &bytes[start..];
    if payload.len() < expected {
        return Err(Error::MalformedPpm(format!(
            "truncated payload: {} of {expected} bytes",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(Error::MalformedPpm(format!(
            "{} trailing bytes after payload",
            payload.len() - expected
        )));
    }
    RgbImage::new(width, height, payload.to_vec())
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes)
}

pub fn write_ppm(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}
