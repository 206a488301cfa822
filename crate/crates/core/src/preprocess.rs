//! Classical enhancement front ends producing the processed latent images.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::image::{gaussian_blur, reflect, Gray};
use crate::model::angle_diff;
use crate::ridge::RidgeFields;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineTag {
    Decomposed,
    Contrast,
    Stft,
    ContrastStft,
    Gabor,
    ContrastGabor,
}

impl PipelineTag {
    pub fn as_str(self) -> &'static str {
        match self {
            PipelineTag::Decomposed => "decomposed",
            PipelineTag::Contrast => "contrast",
            PipelineTag::Stft => "stft",
            PipelineTag::ContrastStft => "contrast_stft",
            PipelineTag::Gabor => "gabor",
            PipelineTag::ContrastGabor => "contrast_gabor",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedImage {
    pub pixels: Gray,
    pub tag: PipelineTag,
}

/// Smoothing width of the cartoon component removed by [`decompose_texture`].
pub const CARTOON_SIGMA: f64 = 8.0;

/// Texture component: the image minus a large-kernel Gaussian cartoon,
/// stretched symmetrically about mid-gray so the 99th percentile of the
/// absolute residual maps to ±127.
pub fn decompose_texture(image: &Gray) -> ProcessedImage {
    let cartoon = gaussian_blur(image, CARTOON_SIGMA);
    let residual: Vec<f32> = image.data().iter().zip(cartoon.data()).map(|(a, b)| a - b).collect();
    let scale = percentile_abs(&residual, 0.99);
    let gain = if scale > 1e-3 { 127.0 / scale } else { 0.0 };
    let data = residual.iter().map(|r| (128.0 + gain * r).clamp(0.0, 255.0)).collect();
    ProcessedImage {
        pixels: Gray::new(image.width(), image.height(), data).expect("same dimensions"),
        tag: PipelineTag::Decomposed,
    }
}

fn percentile_abs(values: &[f32], q: f64) -> f32 {
    if values.is_empty() {
        return 0.0;
    }
    let mut abs: Vec<f32> = values.iter().map(|v| v.abs()).collect();
    let k = ((abs.len() - 1) as f64 * q).round() as usize;
    let (_, v, _) = abs.select_nth_unstable_by(k, f32::total_cmp);
    *v
}

pub const STFT_WINDOW: usize = 32;
pub const STFT_STEP: usize = 16;

/// Spectral-peak prominence below which a block is treated as noise.
const PEAK_RATIO_FLOOR: f64 = 6.5;
/// Prominence at which a block is fully trusted.
const PEAK_RATIO_FULL: f64 = 11.0;
/// Ridge periods searched for the dominant peak, in pixels.
const MIN_PERIOD: f64 = 3.0;
const MAX_PERIOD: f64 = 20.0;
const RADIAL_SIGMA: f64 = 1.5;
const ANGULAR_SIGMA: f64 = PI / 8.0;

struct Fft2d {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Fft2d {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2d { forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) }
    }

    fn run(&self, data: &mut [Complex<f64>], n: usize, inverse: bool) {
        let fft = if inverse { &self.inverse } else { &self.forward };
        for row in data.chunks_mut(n) {
            fft.process(row);
        }
        let mut col = vec![Complex::new(0.0, 0.0); n];
        for x in 0..n {
            for y in 0..n {
                col[y] = data[y * n + x];
            }
            fft.process(&mut col);
            for y in 0..n {
                data[y * n + x] = col[y];
            }
        }
    }
}

/// Signed frequency index for FFT bin `k` of an `n`-point transform.
#[inline]
fn freq(k: usize, n: usize) -> f64 {
    if k < n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

fn taper(n: usize) -> Vec<f64> {
    (0..n).map(|i| (PI * (i as f64 + 0.5) / n as f64).sin().powi(2)).collect()
}

/// Block-wise STFT enhancement: 32x32 raised-cosine windows every 16 pixels,
/// each band-passed around its dominant ridge frequency and orientation and
/// weighted by how prominent that peak is. Blocks without any AC energy pass
/// through unchanged. The reconstruction is stretched about mid-gray.
pub fn stft_enhance(image: &Gray) -> ProcessedImage {
    let (w, h) = (image.width(), image.height());
    let n = STFT_WINDOW;
    let win = taper(n);
    let fft = Fft2d::new(n);
    // confidence-weighted reconstruction, and the unweighted one used only to
    // pick the output stretch
    let mut acc_ac = vec![0f64; w * h];
    let mut acc_unit = vec![0f64; w * h];
    let mut acc_w2_enh = vec![0f64; w * h];
    let mut acc_pass = vec![0f64; w * h];
    let mut wsum = vec![0f64; w * h];

    let starts = |len: usize| -> Vec<isize> {
        let mut s = Vec::new();
        let mut p = -(STFT_STEP as isize);
        while p < len as isize {
            s.push(p);
            p += STFT_STEP as isize;
        }
        s
    };
    let mut buf = vec![Complex::new(0.0, 0.0); n * n];
    for by in starts(h) {
        for bx in starts(w) {
            // pixels outside the image take the mean of those inside, so the
            // padding adds no spectral structure
            let mut block = vec![f64::NAN; n * n];
            let (mut sum, mut count) = (0.0, 0usize);
            for dy in 0..n {
                let y = by + dy as isize;
                if y < 0 || y >= h as isize {
                    continue;
                }
                for dx in 0..n {
                    let x = bx + dx as isize;
                    if x < 0 || x >= w as isize {
                        continue;
                    }
                    let v = f64::from(image.get(x as usize, y as usize));
                    block[dy * n + dx] = v;
                    sum += v;
                    count += 1;
                }
            }
            let mean = sum / count as f64;
            block.iter_mut().filter(|v| v.is_nan()).for_each(|v| *v = mean);
            let ac_energy: f64 = block.iter().map(|v| (v - mean).powi(2)).sum();
            let filtered = if ac_energy > 1e-9 {
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = Complex::new((block[i] - mean) * win[i / n] * win[i % n], 0.0);
                }
                fft.run(&mut buf, n, false);
                let confidence = bandpass_dominant(&mut buf, n);
                fft.run(&mut buf, n, true);
                let scale = 1.0 / (n * n) as f64;
                Some((confidence, buf.iter().map(|c| c.re * scale).collect::<Vec<f64>>()))
            } else {
                None
            };
            for dy in 0..n {
                let y = by + dy as isize;
                if y < 0 || y >= h as isize {
                    continue;
                }
                for dx in 0..n {
                    let x = bx + dx as isize;
                    if x < 0 || x >= w as isize {
                        continue;
                    }
                    let i = y as usize * w + x as usize;
                    let wv = win[dy] * win[dx];
                    wsum[i] += wv * wv;
                    match &filtered {
                        Some((conf, f)) => {
                            acc_ac[i] += conf * wv * f[dy * n + dx];
                            acc_unit[i] += wv * f[dy * n + dx];
                            acc_w2_enh[i] += wv * wv;
                        }
                        None => acc_pass[i] += wv * wv * block[dy * n + dx],
                    }
                }
            }
        }
    }
    let enhanced_px: Vec<f32> = (0..w * h)
        .filter(|&i| acc_w2_enh[i] > 0.5 * wsum[i])
        .map(|i| (acc_unit[i] / wsum[i]) as f32)
        .collect();
    let scale = percentile_abs(&enhanced_px, 0.99);
    let gain = if scale > 1e-6 { 127.0 / f64::from(scale) } else { 0.0 };
    let data = (0..w * h)
        .map(|i| {
            let v = (gain * acc_ac[i] + 128.0 * acc_w2_enh[i] + acc_pass[i]) / wsum[i];
            v.clamp(0.0, 255.0) as f32
        })
        .collect();
    ProcessedImage { pixels: Gray::new(w, h, data).expect("same dimensions"), tag: PipelineTag::Stft }
}

/// Filters a block spectrum in place around its dominant peak and returns the
/// peak confidence in `[0, 1]`.
fn bandpass_dominant(spec: &mut [Complex<f64>], n: usize) -> f64 {
    let power: Vec<f64> = spec.iter().map(|c| c.norm_sqr()).collect();
    let lo = n as f64 / MAX_PERIOD;
    let hi = n as f64 / MIN_PERIOD;
    let mut band_sum = 0.0;
    let mut band_count = 0usize;
    let mut peak = (0usize, 0usize, f64::NEG_INFINITY);
    for v in 0..n {
        for u in 0..n {
            let (fu, fv) = (freq(u, n), freq(v, n));
            let r = fu.hypot(fv);
            if r < lo || r > hi {
                continue;
            }
            let mut smooth = 0.0;
            for dv in [n - 1, 0, 1] {
                for du in [n - 1, 0, 1] {
                    smooth += power[((v + dv) % n) * n + (u + du) % n];
                }
            }
            band_sum += smooth;
            band_count += 1;
            if smooth > peak.2 {
                peak = (u, v, smooth);
            }
        }
    }
    if band_count == 0 || band_sum <= 0.0 {
        return 0.0;
    }
    let ratio = peak.2 / (band_sum / band_count as f64);
    let confidence = ((ratio - PEAK_RATIO_FLOOR) / (PEAK_RATIO_FULL - PEAK_RATIO_FLOOR)).clamp(0.0, 1.0);
    let (pu, pv) = (freq(peak.0, n), freq(peak.1, n));
    let r0 = pu.hypot(pv);
    let phi0 = pv.atan2(pu);
    for v in 0..n {
        for u in 0..n {
            let (fu, fv) = (freq(u, n), freq(v, n));
            let r = fu.hypot(fv);
            let radial = (-(r - r0).powi(2) / (2.0 * RADIAL_SIGMA * RADIAL_SIGMA)).exp();
            // direction-ambiguous: a spectrum peak and its mirror describe the same ridges
            let d = angle_diff(crate::model::wrap_2pi(2.0 * fv.atan2(fu)), crate::model::wrap_2pi(2.0 * phi0)) / 2.0;
            let angular = (-(d * d) / (2.0 * ANGULAR_SIGMA * ANGULAR_SIGMA)).exp();
            let gain = if r == 0.0 { 0.0 } else { radial * angular };
            spec[v * n + u] *= gain;
        }
    }
    confidence
}

/// Radius (in pixels) of the Gabor kernels.
const GABOR_RADIUS: isize = 11;
const GABOR_SIGMA: f64 = 4.0;

fn gabor_kernel(orientation: f64, spacing: f64) -> Vec<f32> {
    let side = (2 * GABOR_RADIUS + 1) as usize;
    let (s, c) = orientation.sin_cos();
    let mut k = Vec::with_capacity(side * side);
    for dy in -GABOR_RADIUS..=GABOR_RADIUS {
        for dx in -GABOR_RADIUS..=GABOR_RADIUS {
            let (x, y) = (dx as f64, dy as f64);
            let along = x * c + y * s;
            let across = -x * s + y * c;
            let env = (-(along * along + across * across) / (2.0 * GABOR_SIGMA * GABOR_SIGMA)).exp();
            k.push(env * (2.0 * PI * across / spacing).cos());
        }
    }
    let mean = k.iter().sum::<f64>() / k.len() as f64;
    k.into_iter().map(|v| (v - mean) as f32).collect()
}

/// Per-block oriented Gabor filtering tuned to the block's flow and spacing.
/// Pixels outside the ROI are copied unchanged.
pub fn gabor_enhance(image: &Gray, fields: &RidgeFields) -> ProcessedImage {
    let (w, h) = (image.width(), image.height());
    let mut out = image.clone();
    if fields.is_empty() || fields.roi_count() == 0 {
        return ProcessedImage { pixels: out, tag: PipelineTag::Gabor };
    }
    let side = (2 * GABOR_RADIUS + 1) as usize;
    let mut kernels: HashMap<(u64, u64), Vec<f32>> = HashMap::new();
    let mut response = vec![0f32; w * h];
    let mut inside = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let Some(b) = fields.block_at(x as f64, y as f64) else { continue };
            if !fields.roi[b] {
                continue;
            }
            let key = (fields.orientation[b].to_bits(), fields.spacing[b].to_bits());
            let kernel = kernels
                .entry(key)
                .or_insert_with(|| gabor_kernel(fields.orientation[b], fields.spacing[b]));
            let mut acc = 0f32;
            for ky in 0..side {
                let yy = reflect(y as isize + ky as isize - GABOR_RADIUS, h as isize) as usize;
                let row = &image.data()[yy * w..(yy + 1) * w];
                let krow = &kernel[ky * side..(ky + 1) * side];
                for (kx, &kv) in krow.iter().enumerate() {
                    let xx = reflect(x as isize + kx as isize - GABOR_RADIUS, w as isize) as usize;
                    acc += kv * row[xx];
                }
            }
            response[y * w + x] = acc;
            inside[y * w + x] = true;
        }
    }
    let roi_resp: Vec<f32> = response.iter().zip(&inside).filter(|(_, &i)| i).map(|(r, _)| *r).collect();
    let scale = percentile_abs(&roi_resp, 0.99);
    let gain = if scale > 1e-6 { 127.0 / scale } else { 0.0 };
    for (i, px) in out.data_mut().iter_mut().enumerate() {
        if inside[i] {
            *px = (128.0 + gain * response[i]).clamp(0.0, 255.0);
        }
    }
    ProcessedImage { pixels: out, tag: PipelineTag::Gabor }
}

pub const CONTRAST_TILE: usize = 32;
const CONTRAST_MARGIN: usize = 16;
const CONTRAST_MIN_RANGE: f32 = 1.0;

/// Local contrast stretch. Each 32x32 tile gets one linear map taking the 1st
/// and 99th percentiles of its surrounding 64x64 window to 0 and 255, clamped;
/// so pixel order within a tile is preserved. Tiles whose window is flat are
/// left unchanged.
pub fn contrast_enhance(image: &Gray) -> ProcessedImage {
    let (w, h) = (image.width(), image.height());
    let mut out = image.clone();
    for ty in (0..h).step_by(CONTRAST_TILE) {
        for tx in (0..w).step_by(CONTRAST_TILE) {
            let x0 = tx.saturating_sub(CONTRAST_MARGIN);
            let y0 = ty.saturating_sub(CONTRAST_MARGIN);
            let x1 = (tx + CONTRAST_TILE + CONTRAST_MARGIN).min(w);
            let y1 = (ty + CONTRAST_TILE + CONTRAST_MARGIN).min(h);
            let mut window: Vec<f32> = Vec::with_capacity((x1 - x0) * (y1 - y0));
            for y in y0..y1 {
                window.extend_from_slice(&image.data()[y * w + x0..y * w + x1]);
            }
            window.sort_by(f32::total_cmp);
            let at = |q: f64| window[((window.len() - 1) as f64 * q).round() as usize];
            let (lo, hi) = (at(0.01), at(0.99));
            if hi - lo < CONTRAST_MIN_RANGE {
                continue;
            }
            for y in ty..(ty + CONTRAST_TILE).min(h) {
                for x in tx..(tx + CONTRAST_TILE).min(w) {
                    let v = image.get(x, y);
                    out.set(x, y, ((v - lo) / (hi - lo) * 255.0).clamp(0.0, 255.0));
                }
            }
        }
    }
    ProcessedImage { pixels: out, tag: PipelineTag::Contrast }
}

/// `contrast_enhance` followed by `stft_enhance`.
pub fn contrast_stft(image: &Gray) -> ProcessedImage {
    let mut p = stft_enhance(&contrast_enhance(image).pixels);
    p.tag = PipelineTag::ContrastStft;
    p
}

/// `decompose_texture` followed by `gabor_enhance`.
pub fn decomposed_gabor(image: &Gray, fields: &RidgeFields) -> ProcessedImage {
    let mut p = gabor_enhance(&decompose_texture(image).pixels, fields);
    p.tag = PipelineTag::Gabor;
    p
}

/// `contrast_enhance` followed by `gabor_enhance`.
pub fn contrast_gabor(image: &Gray, fields: &RidgeFields) -> ProcessedImage {
    let mut p = gabor_enhance(&contrast_enhance(image).pixels, fields);
    p.tag = PipelineTag::ContrastGabor;
    p
}

/// Stand-in for a learned enhancer: texture decomposition then STFT.
pub fn enhance(image: &Gray) -> ProcessedImage {
    let mut p = stft_enhance(&decompose_texture(image).pixels);
    p.tag = PipelineTag::Decomposed;
    p
}
