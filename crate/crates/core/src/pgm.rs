//! 8-bit binary PGM (`P5`) previews, min-max scaled per image.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The affine map from image values to gray levels: `v -> 255 * (v - min) / (max - min)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scaling {
    pub min: f64,
    pub max: f64,
}

impl Scaling {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("preview needs finite, non-empty values".into()));
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { min, max })
    }

    /// Gray level for `v`; a constant image maps to 0.
    pub fn level(&self, v: f64) -> u8 {
        let span = self.max - self.min;
        if span <= 0.0 {
            return 0;
        }
        (255.0 * (v - self.min) / span).round().clamp(0.0, 255.0) as u8
    }

    /// Sidecar text recorded next to each preview.
    pub fn sidecar(&self) -> String {
        format!("min {:e}\nmax {:e}\n", self.min, self.max)
    }
}

/// Encode an `(H, W)` grid (row-major `values`) as `P5` bytes.
pub fn encode(values: &[f64], h: usize, w: usize) -> Result<(Vec<u8>, Scaling)> {
    if values.len() != h * w {
        return Err(Error::shape("pgm", "pixels", h * w, values.len()));
    }
    let s = Scaling::of(values)?;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| s.level(v)));
    Ok((out, s))
}

/// Write a single-channel image as `<stem>.pgm` plus `<stem>.pgm.scale`.
pub fn write_preview(path: &Path, img: &Tensor) -> Result<Scaling> {
    let (h, w) = img.hw()?;
    if img.len() != h * w {
        return Err(Error::InvalidArgument(format!("preview needs one image, got shape {:?}", img.shape())));
    }
    write_grid(path, img.data(), h, w)
}

pub fn write_grid(path: &Path, values: &[f64], h: usize, w: usize) -> Result<Scaling> {
    let (bytes, s) = encode(values, h, w)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let mut side = path.as_os_str().to_owned();
    side.push(".scale");
    fs::write(&side, s.sidecar()).map_err(|e| Error::io(&side, e))?;
    Ok(s)
}

/// Decode `P5` bytes as written by [`encode`] into `(width, height, levels)`.
pub fn decode(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<u8>), String> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| "non-ASCII header")?.to_string());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(format!("unsupported header {fields:?}"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| format!("bad extent {s:?}"));
    let (w, h) = (num(&fields[1])?, num(&fields[2])?);
    let data = &bytes[pos + 1..];
    if data.len() != w * h {
        return Err(format!("expected {} pixels, found {}", w * h, data.len()));
    }
    Ok((w, h, data.to_vec()))
}
