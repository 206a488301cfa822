//! Ridge-structure dictionary and block-wise ridge quality, flow, spacing and
//! ROI estimation.
//!
//! Patches are 32x32 pixels sampled every 16 pixels, so each 16x16 block gets
//! the labels of the patch centred on it. Pixel intensities are divided by 255
//! before the similarity is computed; `alpha` is expressed in those units.

use std::f64::consts::PI;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use image::{Rgb, RgbImage};

use crate::error::{format_err, invalid, Result};
use crate::image::{pearson, reflect, Gray};

pub const PATCH: usize = 32;
pub const PATCH_AREA: usize = PATCH * PATCH;
pub const BLOCK: usize = 16;
pub const DICTIONARY_SIZE: usize = 90;
pub const DEFAULT_ALPHA: f64 = 300.0;
pub const DEFAULT_ROI_THRESHOLD: f64 = 0.35;

const INTENSITY_SCALE: f32 = 1.0 / 255.0;

/// One synthetic ridge pattern.
///
/// `pattern` is a cosine across the ridges, centred on the patch. `quadrature`
/// is the matching sine, orthogonalised against `pattern`. Both have mean 0
/// and standard deviation 1. The pair makes the match independent of ridge
/// phase inside the patch.
#[derive(Debug, Clone)]
pub struct DictionaryElement {
    /// Ridge flow direction in `[0, π)`.
    pub orientation: f64,
    /// Ridge period in pixels.
    pub spacing: f64,
    pub pattern: Vec<f32>,
    pub quadrature: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct RidgeDictionary {
    elements: Vec<DictionaryElement>,
    orientation_count: usize,
    spacings: Vec<f64>,
}

/// Ridge wave of unit amplitude at pixel `(x, y)` of a patch of side `size`,
/// for flow direction `orientation` and period `spacing`.
///
/// Flow 0 means ridges run along the x axis, so the wave varies along y.
pub fn ridge_phase(x: f64, y: f64, size: usize, orientation: f64, spacing: f64) -> f64 {
    let c = (size as f64 - 1.0) / 2.0;
    let across = -(x - c) * orientation.sin() + (y - c) * orientation.cos();
    2.0 * PI * across / spacing
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter_mut().for_each(|x| *x -= mean);
    let sd = (v.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
    if sd > 0.0 {
        v.iter_mut().for_each(|x| *x /= sd);
    }
}

impl RidgeDictionary {
    /// Orientations `kπ/n` for `k < n`, crossed with the given spacings.
    pub fn build(orientations: usize, spacings: &[f64]) -> Result<Self> {
        if orientations * spacings.len() != DICTIONARY_SIZE {
            return Err(invalid(format!(
                "{orientations} orientations x {} spacings != {DICTIONARY_SIZE}",
                spacings.len()
            )));
        }
        if spacings.iter().any(|&s| !(s > 2.0)) {
            return Err(invalid("ridge spacings must exceed 2 pixels"));
        }
        let mut elements = Vec::with_capacity(DICTIONARY_SIZE);
        for k in 0..orientations {
            let orientation = k as f64 * PI / orientations as f64;
            for &spacing in spacings {
                let mut pattern = vec![0f64; PATCH_AREA];
                let mut quad = vec![0f64; PATCH_AREA];
                for y in 0..PATCH {
                    for x in 0..PATCH {
                        let ph = ridge_phase(x as f64, y as f64, PATCH, orientation, spacing);
                        pattern[y * PATCH + x] = ph.cos();
                        quad[y * PATCH + x] = ph.sin();
                    }
                }
                standardize(&mut pattern);
                standardize(&mut quad);
                let proj: f64 =
                    quad.iter().zip(&pattern).map(|(a, b)| a * b).sum::<f64>() / PATCH_AREA as f64;
                quad.iter_mut().zip(&pattern).for_each(|(q, p)| *q -= proj * p);
                standardize(&mut quad);
                elements.push(DictionaryElement {
                    orientation,
                    spacing,
                    pattern: pattern.iter().map(|&v| v as f32).collect(),
                    quadrature: quad.iter().map(|&v| v as f32).collect(),
                });
            }
        }
        Ok(RidgeDictionary { elements, orientation_count: orientations, spacings: spacings.to_vec() })
    }

    /// 10 orientations x spacings 5..=13 pixels.
    pub fn standard() -> Self {
        let spacings: Vec<f64> = (5..=13).map(f64::from).collect();
        Self::build(10, &spacings).expect("standard grid has 90 elements")
    }

    pub fn elements(&self) -> &[DictionaryElement] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn orientation_step(&self) -> f64 {
        PI / self.orientation_count as f64
    }

    pub fn spacings(&self) -> &[f64] {
        &self.spacings
    }

    /// Index of the element with the given labels, if present.
    pub fn index_of(&self, orientation: f64, spacing: f64) -> Option<usize> {
        self.elements
            .iter()
            .position(|e| (e.orientation - orientation).abs() < 1e-9 && (e.spacing - spacing).abs() < 1e-9)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchSimilarity {
    pub best_index: usize,
    pub s_m: f64,
    pub quality: f64,
}

/// Similarity of a patch to every element: `|P·d| / (‖P‖ + α)`, where `|P·d|`
/// is the phase-free response from the element's pattern/quadrature pair. The
/// patch mean is removed first.
pub fn element_similarities(patch: &[f32], dict: &RidgeDictionary, alpha: f64) -> Result<Vec<f64>> {
    if patch.len() != PATCH_AREA {
        return Err(invalid(format!("patch must be {PATCH}x{PATCH}")));
    }
    let centered = centered(patch);
    let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
    let denom = norm + alpha;
    Ok(dict
        .elements
        .iter()
        .map(|e| {
            if denom <= 0.0 {
                return 0.0;
            }
            let (mut a, mut b) = (0.0, 0.0);
            for ((&p, &c), &q) in centered.iter().zip(&e.pattern).zip(&e.quadrature) {
                a += p * f64::from(c);
                b += p * f64::from(q);
            }
            a.hypot(b) / denom
        })
        .collect())
}

fn centered(patch: &[f32]) -> Vec<f64> {
    let mean = patch.iter().map(|&v| f64::from(v)).sum::<f64>() / patch.len() as f64;
    patch.iter().map(|&v| f64::from(v) - mean).collect()
}

/// Best dictionary element for a patch and its similarity.
pub fn best_match(patch: &[f32], dict: &RidgeDictionary, alpha: f64) -> Result<(usize, f64)> {
    let sims = element_similarities(patch, dict, alpha)?;
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &s) in sims.iter().enumerate() {
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok(best)
}

/// Best element for the enhanced patch; quality adds the (non-negative)
/// correlation between the raw and enhanced patches to `s_m`.
pub fn patch_similarity(
    enhanced: &[f32],
    raw: &[f32],
    dict: &RidgeDictionary,
    alpha: f64,
) -> Result<PatchSimilarity> {
    if alpha <= 0.0 {
        return Err(invalid("alpha must be positive"));
    }
    if raw.len() != enhanced.len() {
        return Err(invalid("raw and enhanced patches differ in size"));
    }
    let (best_index, s_m) = best_match(enhanced, dict, alpha)?;
    let agreement = pearson(raw, enhanced).max(0.0);
    Ok(PatchSimilarity { best_index, s_m, quality: s_m + agreement })
}

/// Per-block ridge orientation, spacing, quality and ROI.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFields {
    pub rows: usize,
    pub cols: usize,
    pub block_size: usize,
    /// Ridge flow per block in `[0, π)`.
    pub orientation: Vec<f64>,
    pub spacing: Vec<f64>,
    pub quality: Vec<f64>,
    pub roi: Vec<bool>,
}

impl RidgeFields {
    pub fn empty() -> Self {
        RidgeFields {
            rows: 0,
            cols: 0,
            block_size: BLOCK,
            orientation: Vec::new(),
            spacing: Vec::new(),
            quality: Vec::new(),
            roi: Vec::new(),
        }
    }

    /// Uniform fields covering an image, ROI everywhere.
    pub fn uniform(width: usize, height: usize, orientation: f64, spacing: f64, quality: f64) -> Self {
        let (rows, cols) = (height.div_ceil(BLOCK), width.div_ceil(BLOCK));
        let n = rows * cols;
        RidgeFields {
            rows,
            cols,
            block_size: BLOCK,
            orientation: vec![orientation; n],
            spacing: vec![spacing; n],
            quality: vec![quality; n],
            roi: vec![true; n],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    /// Block containing pixel `(x, y)`, if inside the grid.
    pub fn block_at(&self, x: f64, y: f64) -> Option<usize> {
        if x < 0.0 || y < 0.0 {
            return None;
        }
        let (c, r) = ((x as usize) / self.block_size, (y as usize) / self.block_size);
        (r < self.rows && c < self.cols).then(|| self.index(r, c))
    }

    pub fn roi_at(&self, x: f64, y: f64) -> bool {
        self.block_at(x, y).is_some_and(|i| self.roi[i])
    }

    pub fn roi_count(&self) -> usize {
        self.roi.iter().filter(|&&r| r).count()
    }

    /// Four planes as a flat little-endian record: orientation, spacing and
    /// quality as f32, then ROI as one byte per block.
    pub fn write_planes<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"LFRD")?;
        w.write_u16::<LittleEndian>(1)?;
        w.write_u32::<LittleEndian>(self.rows as u32)?;
        w.write_u32::<LittleEndian>(self.cols as u32)?;
        w.write_u32::<LittleEndian>(self.block_size as u32)?;
        for plane in [&self.orientation, &self.spacing, &self.quality] {
            for &v in plane.iter() {
                w.write_f32::<LittleEndian>(v as f32)?;
            }
        }
        for &r in &self.roi {
            w.write_u8(u8::from(r))?;
        }
        Ok(())
    }

    pub fn read_planes<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"LFRD" {
            return Err(format_err("not a ridge-field file"));
        }
        let version = r.read_u16::<LittleEndian>()?;
        if version != 1 {
            return Err(format_err(format!("unsupported ridge-field version {version}")));
        }
        let rows = r.read_u32::<LittleEndian>()? as usize;
        let cols = r.read_u32::<LittleEndian>()? as usize;
        let block_size = r.read_u32::<LittleEndian>()? as usize;
        let n = rows * cols;
        let mut planes = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
        for plane in planes.iter_mut() {
            for _ in 0..n {
                plane.push(f64::from(r.read_f32::<LittleEndian>()?));
            }
        }
        let mut roi = Vec::with_capacity(n);
        for _ in 0..n {
            roi.push(r.read_u8()? != 0);
        }
        let [orientation, spacing, quality] = planes;
        Ok(RidgeFields { rows, cols, block_size, orientation, spacing, quality, roi })
    }

    /// Draws flow segments for ROI blocks and the ROI boundary over the image.
    pub fn render_overlay(&self, image: &Gray) -> RgbImage {
        let mut out = RgbImage::from_fn(image.width() as u32, image.height() as u32, |x, y| {
            let v = image.get(x as usize, y as usize).round().clamp(0.0, 255.0) as u8;
            Rgb([v, v, v])
        });
        let bs = self.block_size as f64;
        for r in 0..self.rows {
            for c in 0..self.cols {
                let i = self.index(r, c);
                if !self.roi[i] {
                    continue;
                }
                let (cx, cy) = ((c as f64 + 0.5) * bs, (r as f64 + 0.5) * bs);
                let (s, co) = self.orientation[i].sin_cos();
                let half = bs * 0.4;
                draw_line(&mut out, (cx - co * half, cy - s * half), (cx + co * half, cy + s * half), Rgb([255, 0, 0]));
                let boundary = [(0isize, -1isize), (0, 1), (-1, 0), (1, 0)].iter().any(|&(dr, dc)| {
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    rr < 0
                        || cc < 0
                        || rr >= self.rows as isize
                        || cc >= self.cols as isize
                        || !self.roi[self.index(rr as usize, cc as usize)]
                });
                if boundary {
                    let (x0, y0) = (c as f64 * bs, r as f64 * bs);
                    let (x1, y1) = (x0 + bs - 1.0, y0 + bs - 1.0);
                    for (a, b) in [((x0, y0), (x1, y0)), ((x1, y0), (x1, y1)), ((x1, y1), (x0, y1)), ((x0, y1), (x0, y0))] {
                        draw_line(&mut out, a, b, Rgb([0, 200, 0]));
                    }
                }
            }
        }
        out
    }
}

fn draw_line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: Rgb<u8>) {
    let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = a.0 + (b.0 - a.0) * t;
        let y = a.1 + (b.1 - a.1) * t;
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// The 32x32 patch centred on block `(row, col)`, scaled to `[0, 1]`.
pub fn block_patch(img: &Gray, row: usize, col: usize) -> Vec<f32> {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let x0 = (col * BLOCK) as isize - (PATCH - BLOCK) as isize / 2;
    let y0 = (row * BLOCK) as isize - (PATCH - BLOCK) as isize / 2;
    let mut patch = Vec::with_capacity(PATCH_AREA);
    for dy in 0..PATCH as isize {
        let y = reflect(y0 + dy, h);
        for dx in 0..PATCH as isize {
            let x = reflect(x0 + dx, w);
            patch.push(img.data()[(y * w + x) as usize] * INTENSITY_SCALE);
        }
    }
    patch
}

/// Labels every 16x16 block with the best dictionary element of its 32x32
/// patch and the patch quality. The ROI is left all-true; see [`segment_roi`].
pub fn estimate_ridge_fields(enhanced: &Gray, raw: &Gray, dict: &RidgeDictionary, alpha: f64) -> Result<RidgeFields> {
    if enhanced.width() != raw.width() || enhanced.height() != raw.height() {
        return Err(invalid("enhanced and raw images differ in size"));
    }
    if enhanced.width() < PATCH || enhanced.height() < PATCH {
        return Ok(RidgeFields::empty());
    }
    let rows = enhanced.height().div_ceil(BLOCK);
    let cols = enhanced.width().div_ceil(BLOCK);
    let labels: Vec<Result<PatchSimilarity>> = {
        use rayon::prelude::*;
        (0..rows * cols)
            .into_par_iter()
            .map(|i| {
                let (r, c) = (i / cols, i % cols);
                patch_similarity(&block_patch(enhanced, r, c), &block_patch(raw, r, c), dict, alpha)
            })
            .collect()
    };
    let mut fields = RidgeFields {
        rows,
        cols,
        block_size: BLOCK,
        orientation: Vec::with_capacity(rows * cols),
        spacing: Vec::with_capacity(rows * cols),
        quality: Vec::with_capacity(rows * cols),
        roi: vec![true; rows * cols],
    };
    for label in labels {
        let label = label?;
        let e = &dict.elements[label.best_index];
        fields.orientation.push(e.orientation);
        fields.spacing.push(e.spacing);
        fields.quality.push(label.quality);
    }
    Ok(fields)
}

/// Thresholds quality, applies a 3x3 open then close, and keeps the largest
/// 8-connected component.
pub fn segment_roi(fields: &RidgeFields, s_r: f64) -> RidgeFields {
    let mut out = fields.clone();
    let mask = threshold_mask(fields, s_r);
    let mask = morph_close(&morph_open(&mask, fields.rows, fields.cols), fields.rows, fields.cols);
    out.roi = largest_component(&mask, fields.rows, fields.cols);
    out
}

/// `quality > s_r` per block.
pub fn threshold_mask(fields: &RidgeFields, s_r: f64) -> Vec<bool> {
    fields.quality.iter().map(|&q| q > s_r).collect()
}

/// Erosion with a 3x3 structuring element; blocks outside the grid are ignored.
pub fn erode(mask: &[bool], rows: usize, cols: usize) -> Vec<bool> {
    neighborhood(mask, rows, cols, true)
}

/// Dilation with a 3x3 structuring element; blocks outside the grid are ignored.
pub fn dilate(mask: &[bool], rows: usize, cols: usize) -> Vec<bool> {
    neighborhood(mask, rows, cols, false)
}

fn neighborhood(mask: &[bool], rows: usize, cols: usize, all: bool) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for r in 0..rows {
        for c in 0..cols {
            let r_lo = r.saturating_sub(1);
            let c_lo = c.saturating_sub(1);
            let r_hi = (r + 1).min(rows - 1);
            let c_hi = (c + 1).min(cols - 1);
            let mut acc = all;
            'scan: for rr in r_lo..=r_hi {
                for cc in c_lo..=c_hi {
                    let v = mask[rr * cols + cc];
                    if all && !v {
                        acc = false;
                        break 'scan;
                    }
                    if !all && v {
                        acc = true;
                        break 'scan;
                    }
                }
            }
            out[r * cols + c] = acc;
        }
    }
    out
}

pub fn morph_open(mask: &[bool], rows: usize, cols: usize) -> Vec<bool> {
    dilate(&erode(mask, rows, cols), rows, cols)
}

pub fn morph_close(mask: &[bool], rows: usize, cols: usize) -> Vec<bool> {
    erode(&dilate(mask, rows, cols), rows, cols)
}

/// Keeps the largest 8-connected component; ties go to the one found first in
/// raster order.
pub fn largest_component(mask: &[bool], rows: usize, cols: usize) -> Vec<bool> {
    let mut label = vec![usize::MAX; mask.len()];
    let mut best: Option<(usize, usize)> = None;
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || label[start] != usize::MAX {
            continue;
        }
        let id = next;
        next += 1;
        let mut size = 0;
        label[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            size += 1;
            let (r, c) = ((i / cols) as isize, (i % cols) as isize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr < 0 || cc < 0 || rr >= rows as isize || cc >= cols as isize {
                        continue;
                    }
                    let j = rr as usize * cols + cc as usize;
                    if mask[j] && label[j] == usize::MAX {
                        label[j] = id;
                        stack.push(j);
                    }
                }
            }
        }
        if best.is_none_or(|(_, s)| size > s) {
            best = Some((id, size));
        }
    }
    match best {
        Some((id, _)) => label.iter().map(|&l| l == id).collect(),
        None => vec![false; mask.len()],
    }
}

/// Block threshold on normalised gradient quality used by [`gradient_fields`].
pub const GRADIENT_ROI_THRESHOLD: f64 = 0.25;

/// Fields for a reference print from gradients: flow and coherence from the
/// structure tensor over each 32x32 patch, spacing from the dictionary element
/// closest to that flow. Quality is coherence scaled by gradient energy
/// relative to the strongest block; ROI is thresholded and cleaned like
/// [`segment_roi`].
pub fn gradient_fields(img: &Gray, dict: &RidgeDictionary) -> RidgeFields {
    if img.width() < PATCH || img.height() < PATCH {
        return RidgeFields::empty();
    }
    let rows = img.height().div_ceil(BLOCK);
    let cols = img.width().div_ceil(BLOCK);
    let n = rows * cols;
    let mut orientation = vec![0.0; n];
    let mut energy = vec![0.0; n];
    let mut coherence = vec![0.0; n];
    let mut spacing = vec![dict.spacings()[dict.spacings().len() / 2]; n];
    for r in 0..rows {
        for c in 0..cols {
            let patch = block_patch(img, r, c);
            let (mut gxx, mut gyy, mut gxy) = (0.0, 0.0, 0.0);
            for y in 1..PATCH - 1 {
                for x in 1..PATCH - 1 {
                    let gx = f64::from(patch[y * PATCH + x + 1] - patch[y * PATCH + x - 1]) / 2.0;
                    let gy = f64::from(patch[(y + 1) * PATCH + x] - patch[(y - 1) * PATCH + x]) / 2.0;
                    gxx += gx * gx;
                    gyy += gy * gy;
                    gxy += gx * gy;
                }
            }
            let i = r * cols + c;
            let trace = gxx + gyy;
            energy[i] = trace;
            if trace > 1e-12 {
                coherence[i] = ((gxx - gyy).powi(2) + 4.0 * gxy * gxy).sqrt() / trace;
            }
            // dominant gradient direction is across the ridges
            let grad_dir = 0.5 * (2.0 * gxy).atan2(gxx - gyy);
            let flow = crate::model::wrap_pi(grad_dir + PI / 2.0);
            orientation[i] = flow;
            if trace > 1e-12 {
                spacing[i] = best_spacing_at(&patch, flow, dict);
            }
        }
    }
    let peak = energy.iter().cloned().fold(0.0, f64::max);
    let quality: Vec<f64> = if peak > 0.0 {
        energy.iter().zip(&coherence).map(|(&e, &c)| c * (e / peak).sqrt()).collect()
    } else {
        vec![0.0; n]
    };
    let fields = RidgeFields { rows, cols, block_size: BLOCK, orientation, spacing, quality, roi: vec![true; n] };
    segment_roi(&fields, GRADIENT_ROI_THRESHOLD)
}

fn best_spacing_at(patch: &[f32], flow: f64, dict: &RidgeDictionary) -> f64 {
    let step = dict.orientation_step();
    let k = ((flow / step).round() as usize) % dict.orientation_count;
    let target = k as f64 * step;
    let centered = centered(patch);
    let mut best = (dict.spacings()[0], f64::NEG_INFINITY);
    for e in dict.elements.iter().filter(|e| (e.orientation - target).abs() < 1e-9) {
        let (mut a, mut b) = (0.0, 0.0);
        for ((&p, &c), &q) in centered.iter().zip(&e.pattern).zip(&e.quadrature) {
            a += p * f64::from(c);
            b += p * f64::from(q);
        }
        let s = a.hypot(b);
        if s > best.1 {
            best = (e.spacing, s);
        }
    }
    best.0
}
