//! Per-minutia descriptors from three oriented patches.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;

use crate::image::Gray;
use crate::model::{Descriptor, Minutia, RAW_LEN};
use crate::synthetic::normalize;

/// Sampling grid side for every patch, whatever its size in the image.
pub const GRID: usize = 32;
const CELLS: usize = 4;
const BINS: usize = 4;
pub const PATCH_LEN: usize = CELLS * CELLS * BINS;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchSpec {
    /// Side lengths in pixels, before resampling to the grid.
    pub sizes: [f64; 3],
}

impl Default for PatchSpec {
    fn default() -> Self {
        PatchSpec { sizes: [96.0, 96.0, 80.0] }
    }
}

/// Which orientation range a patch histogram covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Polarity {
    Signed,
    Unsigned,
}

const PATCH_POLARITY: [Polarity; 3] = [Polarity::Signed, Polarity::Unsigned, Polarity::Signed];

/// Samples a `GRID × GRID` patch of side `size` centred on the minutia,
/// with the grid's x axis along the minutia direction.
pub fn sample_patch(image: &Gray, m: &Minutia, size: f64) -> Vec<f32> {
    let (s, c) = m.theta.sin_cos();
    let step = size / GRID as f64;
    let mut out = Vec::with_capacity(GRID * GRID);
    for v in 0..GRID {
        let b = (v as f64 + 0.5) * step - size / 2.0;
        for u in 0..GRID {
            let a = (u as f64 + 0.5) * step - size / 2.0;
            out.push(image.sample(m.x + a * c - b * s, m.y + a * s + b * c));
        }
    }
    out
}

fn patch_histogram(patch: &[f32], polarity: Polarity) -> Vec<f32> {
    let mut hist = vec![0f64; PATCH_LEN];
    let at = |u: usize, v: usize| patch[v * GRID + u] as f64;
    let cell = GRID / CELLS;
    for v in 0..GRID {
        for u in 0..GRID {
            let gx = at((u + 1).min(GRID - 1), v) - at(u.saturating_sub(1), v);
            let gy = at(u, (v + 1).min(GRID - 1)) - at(u, v.saturating_sub(1));
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let angle = gy.atan2(gx).rem_euclid(TAU);
            let pos = match polarity {
                Polarity::Signed => angle / TAU * BINS as f64,
                Polarity::Unsigned => angle.rem_euclid(PI) / PI * BINS as f64,
            };
            let lo = pos.floor();
            let frac = pos - lo;
            let b0 = lo as usize % BINS;
            let b1 = (b0 + 1) % BINS;
            let base = ((v / cell) * CELLS + u / cell) * BINS;
            hist[base + b0] += mag * (1.0 - frac);
            hist[base + b1] += mag * frac;
        }
    }
    let roots: Vec<f64> = hist.iter().map(|h| h.sqrt()).collect();
    let mean = roots.iter().sum::<f64>() / PATCH_LEN as f64;
    let mut out: Vec<f32> = roots.iter().map(|r| (r - mean) as f32).collect();
    let norm = out.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if norm > 1e-9 {
        out.iter_mut().for_each(|x| *x = (*x as f64 / norm) as f32);
    } else {
        out.iter_mut().for_each(|x| *x = 0.0);
    }
    out
}

/// Raw 192-value descriptor: three mean-removed gradient histograms,
/// concatenated and scaled to unit length.
pub fn extract_descriptor(image: &Gray, minutia: &Minutia, spec: &PatchSpec) -> Descriptor {
    let mut values = Vec::with_capacity(RAW_LEN);
    for (size, polarity) in spec.sizes.iter().zip(PATCH_POLARITY) {
        values.extend(patch_histogram(&sample_patch(image, minutia, *size), polarity));
    }
    normalize(&mut values);
    Descriptor::Raw(values)
}

pub fn extract_descriptors(image: &Gray, minutiae: &[Minutia], spec: &PatchSpec) -> Vec<Descriptor> {
    minutiae.par_iter().map(|m| extract_descriptor(image, m, spec)).collect()
}

/// Cosine similarity; exactly 1 for a vector with itself.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0f64, 0f64, 0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    ab / (aa * bb).sqrt()
}
