//! Baseline minutiae detector: binarization, thinning, spur pruning and
//! crossing-number analysis.

use crate::image::{gaussian_blur, Gray};
use crate::minutiae_map::{decode_minutiae_map, encode_minutiae_map, EncoderParams, MinutiaeMap};
use crate::model::{angle_diff, wrap_2pi, Minutia};
use crate::preprocess::ProcessedImage;
use crate::ridge::RidgeFields;

/// Skeleton branches shorter than this are removed.
pub const SPUR_LENGTH: usize = 8;
/// Distance traced along the skeleton to estimate minutia direction.
const TRACE_LENGTH: usize = 10;
/// Minutiae closer than this to the ROI or image border are dropped.
const BORDER_MARGIN: f64 = 12.0;
/// Ending pairs closer than this are treated as one broken ridge.
const BROKEN_RIDGE: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MinutiaType {
    Ending,
    Bifurcation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<bool>,
}

// Clockwise ring starting north: P2..P9 in Zhang-Suen notation.
const RING: [(isize, isize); 8] = [(0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1)];

impl Skeleton {
    pub fn new(width: usize, height: usize, pixels: Vec<bool>) -> Self {
        assert_eq!(pixels.len(), width * height);
        Skeleton { width, height, pixels }
    }

    #[inline]
    fn at(&self, x: isize, y: isize) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height && self.pixels[y as usize * self.width + x as usize]
    }

    fn ring(&self, x: isize, y: isize) -> [bool; 8] {
        RING.map(|(dx, dy)| self.at(x + dx, y + dy))
    }

    /// Number of 0→1 transitions around the 8-neighbourhood.
    pub fn crossing_number(&self, x: usize, y: usize) -> usize {
        let r = self.ring(x as isize, y as isize);
        (0..8).filter(|&i| !r[i] && r[(i + 1) % 8]).count()
    }

    fn neighbours(&self, x: isize, y: isize) -> impl Iterator<Item = (isize, isize)> + '_ {
        // 4-neighbours first so traces follow the thinnest path
        [0usize, 2, 4, 6, 1, 3, 5, 7]
            .into_iter()
            .map(move |i| (x + RING[i].0, y + RING[i].1))
            .filter(move |&(a, b)| self.at(a, b))
    }

    fn set(&mut self, x: isize, y: isize, v: bool) {
        self.pixels[y as usize * self.width + x as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    /// Walks from `start` along the skeleton, never revisiting `start` or
    /// `blocked`, stopping after `max_len` pixels or on reaching a junction.
    fn trace(&self, start: (isize, isize), first: Option<(isize, isize)>, max_len: usize, blocked: &[(isize, isize)]) -> Vec<(isize, isize)> {
        let mut path: Vec<(isize, isize)> = Vec::new();
        let mut cur = start;
        let mut next = first;
        while path.len() < max_len {
            let step = next.take().or_else(|| {
                self.neighbours(cur.0, cur.1).find(|p| *p != start && !path.contains(p) && !blocked.contains(p))
            });
            let Some(p) = step else { break };
            path.push(p);
            cur = p;
            if self.crossing_number(p.0 as usize, p.1 as usize) >= 3 {
                break;
            }
        }
        path
    }
}

/// Zhang-Suen thinning to a one-pixel-wide 8-connected skeleton.
pub fn thin(mask: &[bool], width: usize, height: usize) -> Skeleton {
    let mut sk = Skeleton::new(width, height, mask.to_vec());
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let mut remove = Vec::new();
            for y in 0..height as isize {
                for x in 0..width as isize {
                    if !sk.at(x, y) {
                        continue;
                    }
                    let r = sk.ring(x, y);
                    let b = r.iter().filter(|&&v| v).count();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&i| !r[i] && r[(i + 1) % 8]).count();
                    if a != 1 {
                        continue;
                    }
                    let (n, e, s, w) = (r[0], r[2], r[4], r[6]);
                    let ok = if pass == 0 { !(n && e && s) && !(e && s && w) } else { !(n && e && w) && !(n && s && w) };
                    if ok {
                        remove.push((x, y));
                    }
                }
            }
            changed |= !remove.is_empty();
            for (x, y) in remove {
                sk.set(x, y, false);
            }
        }
        if !changed {
            return sk;
        }
    }
}

/// Removes branches shorter than [`SPUR_LENGTH`] that hang off a junction,
/// and isolated fragments shorter than it.
pub fn prune_spurs(sk: &mut Skeleton) {
    for _ in 0..2 {
        let mut remove = Vec::new();
        for y in 0..sk.height {
            for x in 0..sk.width {
                if !sk.pixels[y * sk.width + x] || sk.crossing_number(x, y) != 1 {
                    continue;
                }
                let start = (x as isize, y as isize);
                let path = sk.trace(start, None, SPUR_LENGTH, &[]);
                let Some(&end) = path.last() else {
                    remove.push(start);
                    continue;
                };
                if path.len() >= SPUR_LENGTH {
                    continue;
                }
                let cn = sk.crossing_number(end.0 as usize, end.1 as usize);
                if cn >= 3 {
                    remove.push(start);
                    remove.extend(&path[..path.len() - 1]);
                } else if cn <= 1 {
                    remove.push(start);
                    remove.extend(&path);
                }
            }
        }
        if remove.is_empty() {
            break;
        }
        for (x, y) in remove {
            sk.set(x, y, false);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkeletonMinutia {
    pub minutia: Minutia,
    pub kind: MinutiaType,
}

/// Endings and bifurcations with directions: an ending points along its
/// ridge, a bifurcation points between its two branches.
pub fn skeleton_minutiae(sk: &Skeleton) -> Vec<SkeletonMinutia> {
    let mut found: Vec<SkeletonMinutia> = Vec::new();
    for y in 0..sk.height {
        for x in 0..sk.width {
            if !sk.pixels[y * sk.width + x] {
                continue;
            }
            let p = (x as isize, y as isize);
            let cn = sk.crossing_number(x, y);
            let (xf, yf) = (x as f64, y as f64);
            let entry = match cn {
                1 => {
                    let path = sk.trace(p, None, TRACE_LENGTH, &[]);
                    let &end = path.last().unwrap_or(&p);
                    if path.len() < 3 {
                        continue;
                    }
                    SkeletonMinutia { minutia: Minutia::real(xf, yf, direction(p, end)), kind: MinutiaType::Ending }
                }
                3 => {
                    if found.iter().any(|f| f.kind == MinutiaType::Bifurcation && f.minutia.distance(&Minutia::real(xf, yf, 0.0)) < 3.0) {
                        continue;
                    }
                    let starts = branch_starts(sk, p);
                    let dirs: Vec<f64> = starts
                        .iter()
                        .map(|&s| {
                            let others: Vec<_> = starts.iter().copied().filter(|&o| o != s).collect();
                            let path = sk.trace(p, Some(s), TRACE_LENGTH, &others);
                            direction(p, *path.last().unwrap_or(&s))
                        })
                        .collect();
                    if dirs.len() != 3 {
                        continue;
                    }
                    let (a, b) = closest_pair(&dirs);
                    let theta = (dirs[a].sin() + dirs[b].sin()).atan2(dirs[a].cos() + dirs[b].cos());
                    SkeletonMinutia { minutia: Minutia::real(xf, yf, theta), kind: MinutiaType::Bifurcation }
                }
                _ => continue,
            };
            found.push(entry);
        }
    }
    found
}

fn direction(from: (isize, isize), to: (isize, isize)) -> f64 {
    wrap_2pi(((to.1 - from.1) as f64).atan2((to.0 - from.0) as f64))
}

/// One pixel per run of set ring neighbours, preferring 4-neighbours.
fn branch_starts(sk: &Skeleton, p: (isize, isize)) -> Vec<(isize, isize)> {
    let r = sk.ring(p.0, p.1);
    let Some(gap) = (0..8).find(|&i| !r[i]) else { return Vec::new() };
    let mut starts = Vec::new();
    let mut run: Vec<usize> = Vec::new();
    for k in 1..=8 {
        let i = (gap + k) % 8;
        if r[i] {
            run.push(i);
        } else if !run.is_empty() {
            let pick = run.iter().copied().find(|i| i % 2 == 0).unwrap_or(run[0]);
            starts.push((p.0 + RING[pick].0, p.1 + RING[pick].1));
            run.clear();
        }
    }
    starts
}

fn closest_pair(dirs: &[f64]) -> (usize, usize) {
    let pairs = [(0, 1), (0, 2), (1, 2)];
    pairs
        .into_iter()
        .min_by(|&(a, b), &(c, d)| angle_diff(dirs[a], dirs[b]).total_cmp(&angle_diff(dirs[c], dirs[d])))
        .unwrap()
}

/// Ridge pixels: darker than the local mean, inside the ROI.
pub fn binarize(image: &Gray, fields: &RidgeFields) -> Vec<bool> {
    let smooth = gaussian_blur(image, 1.0);
    let local = gaussian_blur(&smooth, 4.0);
    let (w, h) = (image.width(), image.height());
    let mut mask = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            mask[y * w + x] = fields.roi_at(x as f64, y as f64) && smooth.get(x, y) < local.get(x, y);
        }
    }
    mask
}

fn well_inside(fields: &RidgeFields, w: usize, h: usize, m: &Minutia) -> bool {
    let d = BORDER_MARGIN;
    if m.x < d || m.y < d || m.x > w as f64 - 1.0 - d || m.y > h as f64 - 1.0 - d {
        return false;
    }
    [(-d, -d), (0.0, -d), (d, -d), (-d, 0.0), (d, 0.0), (-d, d), (0.0, d), (d, d), (0.0, 0.0)]
        .iter()
        .all(|(dx, dy)| fields.roi_at(m.x + dx, m.y + dy))
}

/// Minutiae found on the skeleton of the enhanced image, before encoding.
pub fn baseline_minutiae(enhanced: &ProcessedImage, fields: &RidgeFields) -> Vec<Minutia> {
    skeleton_minutiae_in(&enhanced.pixels, fields)
}

/// Skeleton minutiae of any grayscale image with dark ridges.
pub fn skeleton_minutiae_in(img: &Gray, fields: &RidgeFields) -> Vec<Minutia> {
    let (w, h) = (img.width(), img.height());
    if fields.roi_count() == 0 || img.is_empty() {
        return Vec::new();
    }
    let mut sk = thin(&binarize(img, fields), w, h);
    prune_spurs(&mut sk);
    let found: Vec<SkeletonMinutia> = skeleton_minutiae(&sk).into_iter().filter(|f| well_inside(fields, w, h, &f.minutia)).collect();
    let mut keep = vec![true; found.len()];
    for i in 0..found.len() {
        for j in i + 1..found.len() {
            let close = found[i].minutia.distance(&found[j].minutia) < BROKEN_RIDGE;
            if close && (found[i].kind == MinutiaType::Ending || found[j].kind == MinutiaType::Ending) {
                keep[i] = false;
                keep[j] = false;
            }
        }
    }
    found.into_iter().zip(keep).filter(|(_, k)| *k).map(|(f, _)| f.minutia).collect()
}

/// Detector output as a minutiae map, so learned detectors can be swapped in.
pub fn detect_minutiae_baseline(enhanced: &ProcessedImage, fields: &RidgeFields) -> MinutiaeMap {
    let img = &enhanced.pixels;
    let ms = baseline_minutiae(enhanced, fields);
    encode_minutiae_map(&ms, img.height(), img.width(), EncoderParams::default()).expect("detected minutiae lie inside the image")
}

/// Detects and decodes in one step.
pub fn detect_minutiae(enhanced: &ProcessedImage, fields: &RidgeFields, threshold: f64) -> Vec<Minutia> {
    decode_minutiae_map(&detect_minutiae_baseline(enhanced, fields), threshold)
}

/// Like [`detect_minutiae`] on a bare image with explicit encoder widths.
pub fn detect_minutiae_with(img: &Gray, fields: &RidgeFields, params: EncoderParams, threshold: f64) -> Vec<Minutia> {
    let ms = skeleton_minutiae_in(img, fields);
    let map = encode_minutiae_map(&ms, img.height(), img.width(), params).expect("detected minutiae lie inside the image");
    decode_minutiae_map(&map, threshold)
}
