//! Floating-point grayscale images and their file I/O.

use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, Luma};

use crate::error::{invalid, Result};

/// Row-major grayscale image with values nominally in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gray {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Gray {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(invalid(format!(
                "{} pixels do not fill a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Gray { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Gray { width, height, data: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Gray { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Pixel lookup with coordinates clamped to the image (edge padding).
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    /// Bilinear sample at a real-valued position, edge padded.
    pub fn sample(&self, x: f64, y: f64) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = (x - x0) as f32;
        let fy = (y - y0) as f32;
        let (xi, yi) = (x0 as isize, y0 as isize);
        let a = self.get_clamped(xi, yi);
        let b = self.get_clamped(xi + 1, yi);
        let c = self.get_clamped(xi, yi + 1);
        let d = self.get_clamped(xi + 1, yi + 1);
        let top = a + (b - a) * fx;
        let bottom = c + (d - c) * fx;
        top + (bottom - top) * fy
    }

    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> Gray {
        Gray { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn clamp_to_u8_range(mut self) -> Gray {
        for v in &mut self.data {
            *v = v.clamp(0.0, 255.0);
        }
        self
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len() as f64
    }

    /// Pearson correlation between two equally sized images; 0 if either is flat.
    pub fn correlation(&self, other: &Gray) -> f64 {
        pearson(&self.data, &other.data)
    }

    pub fn to_luma8(&self) -> GrayImage {
        let mut out = GrayImage::new(self.width as u32, self.height as u32);
        for (i, p) in out.pixels_mut().enumerate() {
            *p = Luma([self.data[i].round().clamp(0.0, 255.0) as u8]);
        }
        out
    }

    pub fn from_luma8(img: &GrayImage) -> Gray {
        Gray {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.pixels().map(|p| f32::from(p.0[0])).collect(),
        }
    }

    /// Loads any supported image file (PGM, PNG) as 8-bit gray.
    pub fn load(path: &Path) -> Result<Gray> {
        let img = image::open(path)?.into_luma8();
        Ok(Gray::from_luma8(&img))
    }

    /// Saves as a binary portable graymap regardless of extension.
    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pgm_bytes()?)?;
        Ok(())
    }

    pub fn to_pgm_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Cursor::new(Vec::new());
        self.to_luma8().write_to(&mut buf, ImageFormat::Pnm)?;
        Ok(buf.into_inner())
    }

    pub fn from_encoded_bytes(bytes: &[u8]) -> Result<Gray> {
        let img = image::load_from_memory(bytes)?.into_luma8();
        Ok(Gray::from_luma8(&img))
    }
}

pub(crate) fn pearson(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let ma = a.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let mb = b.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let dx = f64::from(x) - ma;
        let dy = f64::from(y) - mb;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 1e-12 || sbb <= 1e-12 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Separable Gaussian blur with reflected borders.
pub fn gaussian_blur(img: &Gray, sigma: f64) -> Gray {
    if sigma <= 0.0 || img.is_empty() {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32)
        .collect();
    let norm: f32 = kernel.iter().sum();
    let kernel: Vec<f32> = kernel.into_iter().map(|k| k / norm).collect();
    let (w, h) = (img.width as isize, img.height as isize);
    let mut tmp = vec![0f32; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0f32;
            for (k, &kv) in kernel.iter().enumerate() {
                let xx = reflect(x + k as isize - radius, w);
                acc += kv * img.data[(y * w + xx) as usize];
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    let mut out = vec![0f32; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0f32;
            for (k, &kv) in kernel.iter().enumerate() {
                let yy = reflect(y + k as isize - radius, h);
                acc += kv * tmp[(yy * w + x) as usize];
            }
            out[(y * w + x) as usize] = acc;
        }
    }
    Gray { width: img.width, height: img.height, data: out }
}

/// Mirror index into `[0, n)` without repeating the edge sample.
#[inline]
pub(crate) fn reflect(i: isize, n: isize) -> isize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m
}
