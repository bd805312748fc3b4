//! Binary PPM (P6) images with 8-bit channels.

use std::path::Path;

use srmmd::{Error, Points, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PpmImage {
    width: usize,
    height: usize,
    /// Row-major RGB triples.
    data: Vec<u8>,
}

impl PpmImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Argument("image must have at least one pixel".into()));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|p| p.checked_mul(3))
            .ok_or_else(|| Error::Argument("image dimensions overflow".into()))?;
        if data.len() != expected {
            return Err(Error::Argument(format!(
                "{width}x{height} image needs {expected} bytes, got {}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Image with every pixel set to `rgb`.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(width, height, rgb.repeat(width * height))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, i: usize) -> [u8; 3] {
        let p = &self.data[3 * i..3 * i + 3];
        [p[0], p[1], p[2]]
    }

    pub fn set_pixel(&mut self, i: usize, rgb: [u8; 3]) {
        self.data[3 * i..3 * i + 3].copy_from_slice(&rgb);
    }

    /// Colour of pixel `i` in `[0, 1]³`.
    pub fn color(&self, i: usize) -> [f64; 3] {
        self.pixel(i).map(|c| f64::from(c) / 255.0)
    }

    /// Colours of the given pixels as points in `[0, 1]³`.
    pub fn colors(&self, pixels: &[usize]) -> Points {
        let flat = pixels.iter().flat_map(|&i| self.color(i)).collect();
        Points::from_flat(flat, 3).expect("three channels")
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }
}

fn parse_error<T>(offset: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        offset,
        message: message.into(),
    })
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    /// Skips whitespace and `#` comments running to the end of the line.
    fn skip_blank(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_blank();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return match self.bytes.get(self.pos) {
                None => parse_error(start, format!("header ends before the {what}")),
                Some(_) => parse_error(start, format!("expected the {what} as a decimal number")),
            };
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        text.parse()
            .or_else(|_| parse_error(start, format!("{what} {text} is too large")))
    }
}

pub fn parse_ppm(bytes: &[u8]) -> Result<PpmImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return parse_error(0, "not a binary PPM (magic `P6` missing)");
    }
    let mut h = Header { bytes, pos: 2 };
    if !bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return parse_error(2, "expected whitespace after the magic number");
    }
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval_at = {
        h.skip_blank();
        h.pos
    };
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Capability(format!(
            "unsupported PPM format: maxval {maxval} at byte {maxval_at}; only 255 is supported"
        )));
    }
    if width == 0 || height == 0 {
        return parse_error(maxval_at, format!("empty image ({width}x{height})"));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        Some(_) => return parse_error(h.pos, "expected one whitespace byte before the pixel data"),
        None => return parse_error(h.pos, "file ends before the pixel data"),
    }
    let need = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(3))
        .ok_or_else(|| Error::Parse {
            offset: 3,
            message: "image dimensions overflow".into(),
        })?;
    let body = &bytes[h.pos..];
    if body.len() < need {
        return parse_error(
            bytes.len(),
            format!("truncated pixel data: {} of {need} bytes", body.len()),
        );
    }
    PpmImage::new(width, height, body[..need].to_vec())
}

pub fn read_ppm(path: &Path) -> Result<PpmImage> {
    parse_ppm(&std::fs::read(path)?)
}

pub fn write_ppm(img: &PpmImage, path: &Path) -> Result<()> {
    std::fs::write(path, img.encode())?;
    Ok(())
}
