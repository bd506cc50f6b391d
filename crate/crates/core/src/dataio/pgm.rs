//! Binary PGM (`P5`, maxval 255) reading and writing.

use std::fs;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Largest pixel count accepted from a header.
const MAX_PIXELS: usize = 1 << 26;

/// 8-bit grayscale raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::Image(format!(
                "{width}×{height} image cannot hold {} pixels",
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    /// `[1, 1, height, width]` tensor with each byte `v` mapped to `v / 255`.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let scale = T::one() / T::from_f64_lossy(255.0);
        let data = self
            .pixels
            .iter()
            .map(|&v| T::from_u8(v).expect("byte") * scale)
            .collect();
        Tensor::new(vec![1, 1, self.height, self.width], data).expect("extents are positive")
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

struct Header {
    width: usize,
    height: usize,
    data_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Image("bad magic (expected P5)".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (k, field) in fields.iter_mut().enumerate() {
        // whitespace and comments ahead of each field; at least one separator
        let start = pos;
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::Image("truncated header".into())),
            }
        }
        if pos == start {
            return Err(Error::Image(format!(
                "missing separator before header field {k}"
            )));
        }
        let digits_start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        let digits = &bytes[digits_start..pos];
        if digits.is_empty() || digits.len() > 9 {
            return Err(Error::Image(format!("malformed header field {k}")));
        }
        *field = std::str::from_utf8(digits)
            .expect("ascii digits")
            .parse()
            .expect("at most nine digits");
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        Some(_) => {
            return Err(Error::Image(
                "header must end in one whitespace byte".into(),
            ))
        }
        None => return Err(Error::Image("truncated header".into())),
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Image(format!(
            "maxval {maxval} unsupported (expected 255)"
        )));
    }
    if width == 0 || height == 0 || width.saturating_mul(height) > MAX_PIXELS {
        return Err(Error::Image(format!("unsupported extent {width}×{height}")));
    }
    Ok(Header {
        width,
        height,
        data_offset: pos,
    })
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let h = parse_header(bytes)?;
    let payload = &bytes[h.data_offset..];
    let expected = h.width * h.height;
    if payload.len() < expected {
        return Err(Error::Image(format!(
            "truncated payload: {} of {expected} bytes",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(Error::Image(format!(
            "{} trailing bytes after payload",
            payload.len() - expected
        )));
    }
    GrayImage::new(h.width, h.height, payload.to_vec())
}

/// `(width, height)` from the header alone.
pub fn read_pgm_dimensions(path: &Path) -> Result<(usize, usize)> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut head = Vec::with_capacity(512);
    f.by_ref()
        .take(512)
        .read_to_end(&mut head)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let h = parse_header(&head)?;
    Ok((h.width, h.height))
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_pgm(&bytes).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<()> {
    crate::io_util::write_atomic(path, &image.encode())
}

/// `load_gray_image`: PGM file → `[1, 1, H, W]` tensor in `[0, 1]`.
pub fn load_gray_image(path: &Path) -> Result<Tensor<f32>> {
    Ok(read_pgm(path)?.to_tensor())
}
