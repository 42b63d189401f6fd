//! Single-channel masks and binary PGM (P5, maxval 255) I/O.

use std::fs;
use std::path::Path;

use crate::error::{DsuError, Result};
use crate::tensor::{Scalar, Tensor};

/// Raster with values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl MaskImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(DsuError::Shape(format!("mask {width}×{height} with {} values", data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        Self { width, height, data: vec![v; width * height] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Values thresholded at `t` (inclusive).
    pub fn binarize(&self, t: f64) -> Self {
        Self { data: self.data.iter().map(|&v| if v >= t { 1.0 } else { 0.0 }).collect(), ..*self }
    }

    /// From a `1×H×W` (or `H×W`) tensor.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let (c, h, w) = match t.shape() {
            [h, w] => (1, *h, *w),
            [c, h, w] => (*c, *h, *w),
            s => return Err(DsuError::Shape(format!("mask tensor must be 1×H×W, got {s:?}"))),
        };
        if c != 1 {
            return Err(DsuError::Shape(format!("mask tensor must have one channel, got {c}")));
        }
        Self::new(w, h, t.data().iter().map(|v| v.as_f64()).collect())
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_vec(&[1, self.height, self.width], self.data.iter().map(|&v| T::from_f64c(v)).collect())
            .expect("mask shape")
    }

    /// Export quantisation: `round(v·255)`, clamped to a byte.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }
}

pub fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Raw 8-bit plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray8 {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub fn encode_pgm(img: &Gray8) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Gray8> {
    let header = |detail: String| DsuError::PgmHeader { path: path.to_path_buf(), detail };
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(header("unexpected end of header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    if magic != "P5" {
        return Err(header(format!("expected P5, found {magic:?}")));
    }
    let mut num = |what: &str| -> Result<usize> {
        let t = token()?;
        t.parse().map_err(|_| header(format!("bad {what} {t:?}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if width == 0 || height == 0 {
        return Err(header(format!("empty raster {width}×{height}")));
    }
    if maxval != 255 {
        return Err(DsuError::PgmMaxval { path: path.to_path_buf(), maxval: maxval as u32 });
    }
    // exactly one whitespace byte separates the header from the payload
    let start = pos + 1;
    let need = width * height;
    if start > bytes.len() || bytes.len() - start < need {
        return Err(DsuError::Truncated {
            path: path.to_path_buf(),
            detail: format!("payload needs {need} bytes, found {}", bytes.len().saturating_sub(start)),
        });
    }
    Ok(Gray8 { width, height, pixels: bytes[start..start + need].to_vec() })
}

pub fn write_pgm(path: &Path, img: &Gray8) -> Result<()> {
    fs::write(path, encode_pgm(img)).map_err(|e| DsuError::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Gray8> {
    let bytes = fs::read(path).map_err(|e| DsuError::io(path, e))?;
    decode_pgm(&bytes, path)
}

pub fn write_mask(path: &Path, mask: &MaskImage) -> Result<()> {
    write_pgm(path, &Gray8 { width: mask.width, height: mask.height, pixels: mask.to_bytes() })
}

/// Continuous mask: `raw / 255`.
pub fn read_mask(path: &Path) -> Result<MaskImage> {
    let g = read_pgm(path)?;
    MaskImage::new(g.width, g.height, g.pixels.iter().map(|&b| b as f64 / 255.0).collect())
}

/// Binary ground truth: `raw ≥ 128`.
pub fn read_gt(path: &Path) -> Result<MaskImage> {
    let g = read_pgm(path)?;
    MaskImage::new(g.width, g.height, g.pixels.iter().map(|&b| if b >= 128 { 1.0 } else { 0.0 }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_rounds_to_128() {
        let m = MaskImage::new(1, 1, vec![0.5]).unwrap();
        assert_eq!(m.to_bytes(), vec![128]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        write_mask(&p, &m).unwrap();
        assert_eq!(read_mask(&p).unwrap().data, vec![128.0 / 255.0]);
        assert_eq!(read_gt(&p).unwrap().data, vec![1.0]);
    }

    #[test]
    fn binary_round_trip_exact() {
        let m = MaskImage::new(3, 2, vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.pgm");
        write_mask(&p, &m).unwrap();
        assert_eq!(read_mask(&p).unwrap(), m);
        assert_eq!(read_gt(&p).unwrap(), m);
    }

    #[test]
    fn distinct_errors() {
        let p = Path::new("x.pgm");
        assert!(matches!(decode_pgm(b"P2\n1 1\n255\n\x00", p), Err(DsuError::PgmHeader { .. })));
        assert!(matches!(decode_pgm(b"P5\n1 1\n65535\n\x00\x00", p), Err(DsuError::PgmMaxval { maxval: 65535, .. })));
        assert!(matches!(decode_pgm(b"P5\n2 2\n255\n\x00", p), Err(DsuError::Truncated { .. })));
        assert!(matches!(decode_pgm(b"P5\n2", p), Err(DsuError::PgmHeader { .. })));
        let ok = decode_pgm(b"P5 # comment\n2 1\n255\n\x07\x09", p).unwrap();
        assert_eq!(ok.pixels, vec![7, 9]);
    }
}
