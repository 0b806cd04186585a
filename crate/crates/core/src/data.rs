//! Datasets: IDX image files, a procedural 8x8 digit corpus, a synthetic
//! linear-Gaussian generator, and uniform dequantization.
//!
//! Discrete image pixels are stored as `x_int / 256`, so every value lies in
//! `[0, 255/256]` and dequantized values stay below 1.

use std::path::Path;

use crate::error::{check_dim, Error, IdxError, Result};
use crate::ndcore::{DenseMatrix, DenseVector, RngStream};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub items: Vec<DenseVector>,
    pub width: usize,
    pub height: usize,
    /// True for quantized pixels that need dequantization and the `ln 256`
    /// correction; false for continuous data.
    pub discrete: bool,
    pub source: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.width * self.height
    }

    fn from_pixels(pixels: &[u8], n: usize, height: usize, width: usize, source: String) -> Self {
        let k = height * width;
        let items = (0..n)
            .map(|i| DenseVector::from_raw(pixels[i * k..(i + 1) * k].iter().map(|&b| b as f64 / 256.0).collect()))
            .collect();
        Self { items, width, height, discrete: true, source }
    }
}

fn be_u32(buf: &[u8], at: usize) -> Result<u32> {
    let b = buf
        .get(at..at + 4)
        .ok_or(IdxError::Truncated { needed: at + 4, found: buf.len() })?;
    Ok(u32::from_be_bytes(b.try_into().expect("4 bytes")))
}

fn check_magic(buf: &[u8], expected: u32) -> Result<()> {
    let found = be_u32(buf, 0)?;
    if found != expected {
        return Err(IdxError::BadMagic { found, expected }.into());
    }
    Ok(())
}

/// Parses an IDX image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(buf: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    check_magic(buf, IDX_IMAGES_MAGIC)?;
    let n = be_u32(buf, 4)? as usize;
    let rows = be_u32(buf, 8)? as usize;
    let cols = be_u32(buf, 12)? as usize;
    let total = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .and_then(|v| v.checked_add(16))
        .ok_or(IdxError::DimOverflow)?;
    if buf.len() < total {
        return Err(IdxError::Truncated { needed: total, found: buf.len() }.into());
    }
    Ok((n, rows, cols, &buf[16..total]))
}

/// Parses an IDX label file. Labels are read for completeness but nothing
/// in training uses them.
pub fn parse_idx_labels(buf: &[u8]) -> Result<Vec<u8>> {
    check_magic(buf, IDX_LABELS_MAGIC)?;
    let n = be_u32(buf, 4)? as usize;
    let total = n.checked_add(8).ok_or(IdxError::DimOverflow)?;
    if buf.len() < total {
        return Err(IdxError::Truncated { needed: total, found: buf.len() }.into());
    }
    Ok(buf[8..total].to_vec())
}

pub fn load_idx(path: &Path) -> Result<Dataset> {
    let buf = std::fs::read(path)?;
    let (n, rows, cols, pixels) = parse_idx_images(&buf)?;
    Ok(Dataset::from_pixels(pixels, n, rows, cols, format!("idx:{}", path.display())))
}

pub fn encode_idx_images(rows: usize, cols: usize, images: &[Vec<u8>]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for v in [images.len(), rows, cols] {
        out.extend_from_slice(&u32::try_from(v).map_err(|_| IdxError::DimOverflow)?.to_be_bytes());
    }
    for img in images {
        check_dim("IDX image size", rows * cols, img.len())?;
        out.extend_from_slice(img);
    }
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&u32::try_from(labels.len()).map_err(|_| IdxError::DimOverflow)?.to_be_bytes());
    out.extend_from_slice(labels);
    Ok(out)
}

/// Quantized bytes of a discrete dataset, inverting the `/256` scaling.
pub fn to_bytes(ds: &Dataset) -> Result<Vec<Vec<u8>>> {
    ds.items
        .iter()
        .map(|x| {
            x.iter()
                .map(|&v| {
                    let b = v * 256.0;
                    if b.fract() == 0.0 && (0.0..256.0).contains(&b) {
                        Ok(b as u8)
                    } else {
                        Err(Error::InvalidParameter(format!("{v} is not a quantized pixel")))
                    }
                })
                .collect()
        })
        .collect()
}

/// `x + u` with `u ~ U[0, 1/256)` per pixel.
pub fn dequantize(x: &DenseVector, rng: &mut RngStream) -> DenseVector {
    let u: Vec<f64> = (0..x.len()).map(|_| rng.uniform() / 256.0).collect();
    dequantize_with_noise(x, &u).expect("lengths agree")
}

pub fn dequantize_with_noise(x: &DenseVector, u: &[f64]) -> Result<DenseVector> {
    check_dim("dequantize noise", x.len(), u.len())?;
    DenseVector::new(x.iter().zip(u).map(|(x, u)| x + u).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub d_true: usize,
    pub k: usize,
    pub mixing_seed: u64,
    pub noise: f64,
}

impl SyntheticSpec {
    /// Entries `N(0, 1/d_true)` drawn from `mixing_seed`.
    pub fn mixing_matrix(&self) -> Result<DenseMatrix> {
        if self.d_true == 0 || self.d_true > self.k {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= d_true <= k, got d_true={} k={}",
                self.d_true, self.k
            )));
        }
        let mut rng = RngStream::new(self.mixing_seed);
        let s = 1.0 / (self.d_true as f64).sqrt();
        DenseMatrix::new(self.k, self.d_true, (0..self.k * self.d_true).map(|_| s * rng.standard_normal()).collect())
    }
}

/// `x = A z + noise * eps` with `z ~ N(0, I)`, `eps ~ N(0, I)`.
pub fn make_synthetic(spec: &SyntheticSpec, n: usize, rng: &mut RngStream) -> Result<Dataset> {
    let a = spec.mixing_matrix()?;
    make_synthetic_with(&a, spec.noise, n, rng)
}

pub fn make_synthetic_with(a: &DenseMatrix, noise: f64, n: usize, rng: &mut RngStream) -> Result<Dataset> {
    if !(noise >= 0.0) || n == 0 {
        return Err(Error::InvalidParameter(format!("need noise >= 0 and n >= 1, got {noise}, {n}")));
    }
    let items = (0..n)
        .map(|_| {
            let z = crate::ndcore::gauss_sample(rng, a.cols());
            let mut x = a.matvec(&z)?.into_vec();
            if noise > 0.0 {
                for v in &mut x {
                    *v += noise * rng.standard_normal();
                }
            }
            DenseVector::new(x)
        })
        .collect::<Result<_>>()?;
    Ok(Dataset { items, width: a.rows(), height: 1, discrete: false, source: "synthetic".into() })
}

/// Seven-segment strokes per digit: top, upper right, lower right, bottom,
/// lower left, upper left, middle.
const SEGMENTS: [[bool; 7]; 10] = [
    [true, true, true, true, true, true, false],
    [false, true, true, false, false, false, false],
    [true, true, false, true, true, false, true],
    [true, true, true, true, false, false, true],
    [false, true, true, false, false, true, true],
    [true, false, true, true, false, true, true],
    [true, false, true, true, true, true, true],
    [true, true, true, false, false, false, false],
    [true, true, true, true, true, true, true],
    [true, true, true, true, false, true, true],
];

pub const DIGIT_SIDE: usize = 8;

/// One 8x8 digit as raw bytes: stroke segments inside a 4x7 box placed with
/// a random offset, random stroke intensity, and a little pixel noise.
pub fn render_digit(digit: usize, rng: &mut RngStream) -> Vec<u8> {
    let mut img = [0.0f64; DIGIT_SIDE * DIGIT_SIDE];
    let ox = 1 + rng.below(3);
    let oy = rng.below(2);
    let (w, h) = (4usize, 7usize);
    let ink = 0.6 + 0.4 * rng.uniform();
    let mut dot = |x: usize, y: usize| {
        let i = (oy + y) * DIGIT_SIDE + ox + x;
        img[i] = img[i].max(ink);
    };
    let seg = SEGMENTS[digit % 10];
    let mid = h / 2;
    for x in 0..w {
        if seg[0] {
            dot(x, 0);
        }
        if seg[6] {
            dot(x, mid);
        }
        if seg[3] {
            dot(x, h - 1);
        }
    }
    for y in 0..=mid {
        if seg[5] {
            dot(0, y);
        }
        if seg[1] {
            dot(w - 1, y);
        }
    }
    for y in mid..h {
        if seg[4] {
            dot(0, y);
        }
        if seg[2] {
            dot(w - 1, y);
        }
    }
    img.iter()
        .map(|&v| {
            let v = (v + 0.08 * rng.standard_normal()).clamp(0.0, 1.0);
            (v * 255.0).round() as u8
        })
        .collect()
}

/// `n` digits cycling through 0-9, with labels.
pub fn digit_corpus_bytes(n: usize, rng: &mut RngStream) -> (Vec<Vec<u8>>, Vec<u8>) {
    (0..n).map(|i| (render_digit(i % 10, rng), (i % 10) as u8)).unzip()
}

pub fn digit_corpus(n: usize, rng: &mut RngStream) -> Dataset {
    let (images, _) = digit_corpus_bytes(n, rng);
    let flat: Vec<u8> = images.concat();
    Dataset::from_pixels(&flat, n, DIGIT_SIDE, DIGIT_SIDE, "digits8x8".into())
}
