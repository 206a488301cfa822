//! Seeded synthetic data: ridge images with known minutiae, latent-style
//! degradation, structured descriptor corpora and perturbed templates.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::image::{gaussian_blur, Gray};
use crate::extract::{LatentTemplates, ReferenceTemplates};
use crate::model::{wrap_2pi, Descriptor, Minutia, MinutiaKind, MinutiaeTemplate, SourceTag, TextureTemplate};
use crate::pq::PqCodebook;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrintParams {
    pub width: usize,
    pub height: usize,
    /// Ridge period in pixels.
    pub spacing: f64,
    pub minutiae: usize,
    pub seed: u64,
}

impl Default for PrintParams {
    fn default() -> Self {
        PrintParams { width: 320, height: 320, spacing: 9.0, minutiae: 24, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPrint {
    pub image: Gray,
    /// Ground-truth ridge dislocations, oriented towards the side that gains a ridge.
    pub minutiae: Vec<Minutia>,
    /// Foreground ellipse: centre, semi-axes.
    pub center: (f64, f64),
    pub axes: (f64, f64),
}

impl SyntheticPrint {
    pub fn in_foreground(&self, x: f64, y: f64) -> bool {
        ellipse_level(x, y, self.center, self.axes) <= 1.0
    }
}

fn ellipse_level(x: f64, y: f64, c: (f64, f64), a: (f64, f64)) -> f64 {
    ((x - c.0) / a.0).powi(2) + ((y - c.1) / a.1).powi(2)
}

struct Flow {
    k: f64,
    cos_a: f64,
    sin_a: f64,
    bend: f64,
    bend_period: f64,
    bend_phase: f64,
}

impl Flow {
    fn phase(&self, x: f64, y: f64) -> f64 {
        let u = x * self.cos_a + y * self.sin_a;
        let v = -x * self.sin_a + y * self.cos_a;
        self.k * (u + self.bend * (TAU * v / self.bend_period + self.bend_phase).sin())
    }

    fn gradient(&self, x: f64, y: f64) -> (f64, f64) {
        let h = 0.5;
        (
            (self.phase(x + h, y) - self.phase(x - h, y)) / (2.0 * h),
            (self.phase(x, y + h) - self.phase(x, y - h)) / (2.0 * h),
        )
    }
}

/// A print-like ridge pattern with phase dislocations at known positions.
pub fn synthetic_print(params: &PrintParams) -> SyntheticPrint {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (w, h) = (params.width as f64, params.height as f64);
    let angle: f64 = rng.random_range(0.0..PI);
    let flow = Flow {
        k: TAU / params.spacing,
        cos_a: angle.cos(),
        sin_a: angle.sin(),
        bend: rng.random_range(6.0..14.0),
        bend_period: rng.random_range(0.9..1.6) * w.max(h),
        bend_phase: rng.random_range(0.0..TAU),
    };
    let center = (w / 2.0 + rng.random_range(-0.04..0.04) * w, h / 2.0 + rng.random_range(-0.04..0.04) * h);
    let axes = (w * rng.random_range(0.40..0.46), h * rng.random_range(0.42..0.47));

    let mut spots: Vec<(f64, f64, f64)> = Vec::new();
    let mut attempts = 0;
    while spots.len() < params.minutiae && attempts < 20_000 {
        attempts += 1;
        let x = rng.random_range(0.0..w);
        let y = rng.random_range(0.0..h);
        let inner = (axes.0 - 24.0, axes.1 - 24.0);
        if inner.0 <= 0.0 || inner.1 <= 0.0 || ellipse_level(x, y, center, inner) > 1.0 {
            continue;
        }
        if spots.iter().any(|s| (s.0 - x).hypot(s.1 - y) < 4.0 * params.spacing) {
            continue;
        }
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        spots.push((x, y, sign));
    }

    let minutiae = spots
        .iter()
        .map(|&(x, y, s)| {
            let (gx, gy) = flow.gradient(x, y);
            let norm = gx.hypot(gy);
            let (nx, ny) = (gx / norm, gy / norm);
            // Tangent (-ny, nx): the winding term adds phase on the -s side.
            let (tx, ty) = if s < 0.0 { (-ny, nx) } else { (ny, -nx) };
            Minutia::real(x, y, ty.atan2(tx))
        })
        .collect();

    let offset: f64 = rng.random_range(0.0..TAU);
    let noise = Normal::new(0.0, 6.0).unwrap();
    let image = Gray::from_fn(params.width, params.height, |px, py| {
        let (x, y) = (px as f64, py as f64);
        let mut phi = flow.phase(x, y) + offset;
        for &(sx, sy, s) in &spots {
            phi += s * (y - sy).atan2(x - sx);
        }
        let level = ellipse_level(x, y, center, axes);
        let fade = ((1.08 - level) / 0.08).clamp(0.0, 1.0);
        // Dark ridges where cos(phi) is high; the tanh sharpens the profile.
        let ridge = (2.0 * phi.cos()).tanh() / 2f64.tanh();
        let v = 150.0 - 95.0 * ridge * fade + 60.0 * (1.0 - fade) + noise.sample(&mut rng);
        v.clamp(0.0, 255.0) as f32
    });
    SyntheticPrint { image, minutiae, center, axes }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentParams {
    /// Fraction of the print's foreground kept.
    pub coverage: f64,
    pub contrast: f64,
    pub noise_sigma: f64,
    pub blur_sigma: f64,
    pub strokes: usize,
    pub seed: u64,
}

impl Default for LatentParams {
    fn default() -> Self {
        LatentParams { coverage: 0.55, contrast: 0.45, noise_sigma: 14.0, blur_sigma: 1.0, strokes: 6, seed: 0 }
    }
}

/// Partial, low-contrast, noisy copy of a print over a textured background.
pub fn degrade_to_latent(print: &SyntheticPrint, params: &LatentParams) -> Gray {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let img = &print.image;
    let (w, h) = (img.width(), img.height());
    let scale = params.coverage.clamp(0.05, 1.0).sqrt();
    let axes = (print.axes.0 * scale, print.axes.1 * scale);
    let drift = (print.axes.0 - axes.0, print.axes.1 - axes.1);
    let center = (
        print.center.0 + rng.random_range(-0.7..=0.7) * drift.0,
        print.center.1 + rng.random_range(-0.7..=0.7) * drift.1,
    );
    let strokes: Vec<(f64, f64, f64, f64)> = (0..params.strokes)
        .map(|_| (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64), rng.random_range(0.0..PI), rng.random_range(2.0..5.0)))
        .collect();
    let gradient_dir: f64 = rng.random_range(0.0..TAU);
    let noise = Normal::new(0.0, params.noise_sigma.max(0.0)).unwrap();
    let mut out = Gray::from_fn(w, h, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let level = ellipse_level(xf, yf, center, axes);
        let keep = ((1.1 - level) / 0.2).clamp(0.0, 1.0);
        let shade = 170.0 + 25.0 * ((xf * gradient_dir.cos() + yf * gradient_dir.sin()) / w as f64);
        let print_v = img.get(x, y) as f64;
        let mut v = shade + keep * params.contrast * (print_v - 170.0);
        for &(sx, sy, a, width) in &strokes {
            let d = ((xf - sx) * a.sin() - (yf - sy) * a.cos()).abs();
            if d < width {
                v -= 35.0 * (1.0 - d / width);
            }
        }
        v as f32
    });
    if params.blur_sigma > 0.0 {
        out = gaussian_blur(&out, params.blur_sigma);
    }
    out.map(|v| (v as f64 + noise.sample(&mut rng)).clamp(0.0, 255.0) as f32)
}

/// Low-rank generator of unit-norm descriptors with controllable relatedness.
#[derive(Debug, Clone)]
pub struct DescriptorFactory {
    dim: usize,
    basis: Vec<Vec<f32>>,
    nonnegative: bool,
}

impl DescriptorFactory {
    pub fn new(dim: usize, rank: usize, nonnegative: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f32, 1.0).unwrap();
        let basis = (0..rank)
            .map(|_| {
                (0..dim)
                    .map(|_| {
                        let v = normal.sample(&mut rng);
                        if nonnegative {
                            v.abs().powi(2)
                        } else {
                            v
                        }
                    })
                    .collect()
            })
            .collect();
        DescriptorFactory { dim, basis, nonnegative }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f32> {
        let normal = Normal::new(0.0f32, 1.0).unwrap();
        let mut v = vec![0f32; self.dim];
        for b in &self.basis {
            let z = normal.sample(rng);
            let z = if self.nonnegative { z.abs().powi(3) } else { z * z.abs() };
            for (o, x) in v.iter_mut().zip(b) {
                *o += z * x;
            }
        }
        for o in v.iter_mut() {
            *o += 0.15 * normal.sample(rng);
        }
        self.finish(v)
    }

    /// A copy of `d` with per-component noise of standard deviation `eps`.
    pub fn perturb(&self, d: &[f32], eps: f32, rng: &mut impl Rng) -> Vec<f32> {
        let normal = Normal::new(0.0f32, 1.0).unwrap();
        let v = d.iter().map(|&x| x + eps * normal.sample(rng)).collect();
        self.finish(v)
    }

    fn finish(&self, mut v: Vec<f32>) -> Vec<f32> {
        if self.nonnegative {
            v.iter_mut().for_each(|x| *x = x.max(0.0));
        }
        normalize(&mut v);
        v
    }
}

/// Scales to unit length; a zero vector becomes the uniform unit vector.
pub fn normalize(v: &mut [f32]) {
    let n = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if n > 1e-12 {
        v.iter_mut().for_each(|x| *x = (*x as f64 / n) as f32);
    } else if !v.is_empty() {
        let u = (1.0 / (v.len() as f64).sqrt()) as f32;
        v.iter_mut().for_each(|x| *x = u);
    }
}

/// Random unit vector with independent Gaussian components.
pub fn random_unit(dim: usize, rng: &mut impl Rng) -> Vec<f32> {
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    let mut v: Vec<f32> = (0..dim).map(|_| normal.sample(rng)).collect();
    normalize(&mut v);
    v
}

/// Per-component Gaussian noise of standard deviation `eps`, renormalised.
pub fn jitter(d: &[f32], eps: f32, rng: &mut impl Rng) -> Vec<f32> {
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    let mut v: Vec<f32> = d.iter().map(|&x| x + eps * normal.sample(rng)).collect();
    normalize(&mut v);
    v
}

/// Random minutiae inside a square frame with a minimum separation.
pub fn random_minutiae(n: usize, size: f64, min_separation: f64, rng: &mut impl Rng) -> Vec<Minutia> {
    let mut out: Vec<Minutia> = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n && attempts < 200 * n.max(1) {
        attempts += 1;
        let m = Minutia::real(rng.random_range(0.0..size), rng.random_range(0.0..size), rng.random_range(0.0..TAU));
        if out.iter().all(|o| o.distance(&m) >= min_separation) {
            out.push(m);
        }
    }
    out
}

/// Rigid motion about `center` applied to a list of minutiae.
pub fn transform_all(ms: &[Minutia], angle: f64, center: (f64, f64), shift: (f64, f64)) -> Vec<Minutia> {
    ms.iter().map(|m| m.transformed(angle, center, shift)).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Orientation on `[0, 2π)` of the segment from `a` to `b`.
pub fn bearing(a: (f64, f64), b: (f64, f64)) -> f64 {
    wrap_2pi((b.1 - a.1).atan2(b.0 - a.0))
}

/// Distortions applied to a reference to make a probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    /// Largest rotation, radians.
    pub max_rotation: f64,
    pub max_translation: f64,
    pub delete_fraction: f64,
    pub spurious_fraction: f64,
    /// Per-component descriptor noise.
    pub descriptor_noise: f32,
}

impl Default for Perturbation {
    fn default() -> Self {
        Perturbation { max_rotation: PI / 6.0, max_translation: 40.0, delete_fraction: 0.2, spurious_fraction: 0.1, descriptor_noise: 0.05 }
    }
}

/// Shape of template-level synthetic cases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseParams {
    pub minutiae: usize,
    /// Side of the square frame holding the minutiae.
    pub frame: f64,
    /// Virtual minutia lattice stride; 0 disables texture templates.
    pub stride: usize,
    pub perturbation: Perturbation,
}

impl Default for CaseParams {
    fn default() -> Self {
        CaseParams { minutiae: 60, frame: 400.0, stride: 32, perturbation: Perturbation::default() }
    }
}

/// A reference template pair and a perturbed latent-side probe of it.
#[derive(Debug, Clone)]
pub struct SyntheticCase {
    pub id: String,
    pub reference: ReferenceTemplates,
    pub probe: LatentTemplates,
}

struct Motion {
    angle: f64,
    center: (f64, f64),
    shift: (f64, f64),
}

impl Motion {
    fn random(frame: f64, p: &Perturbation, rng: &mut impl Rng) -> Self {
        Motion {
            angle: rng.random_range(-p.max_rotation..=p.max_rotation),
            center: (frame / 2.0, frame / 2.0),
            shift: (rng.random_range(-p.max_translation..=p.max_translation), rng.random_range(-p.max_translation..=p.max_translation)),
        }
    }

    fn apply(&self, m: &Minutia) -> Minutia {
        m.transformed(self.angle, self.center, self.shift)
    }
}

fn perturbed_items(
    ms: &[Minutia],
    ds: &[Vec<f32>],
    motion: &Motion,
    frame: f64,
    p: &Perturbation,
    factory: &DescriptorFactory,
    spurious: bool,
    rng: &mut impl Rng,
) -> (Vec<Minutia>, Vec<Vec<f32>>) {
    let n = ms.len();
    let drop = ((n as f64) * p.delete_fraction).round() as usize;
    let mut keep: Vec<usize> = rand::seq::index::sample(rng, n, n - drop.min(n)).into_vec();
    keep.sort_unstable();
    let mut out_m: Vec<Minutia> = keep.iter().map(|&i| motion.apply(&ms[i])).collect();
    let mut out_d: Vec<Vec<f32>> = keep.iter().map(|&i| factory.perturb(&ds[i], p.descriptor_noise, rng)).collect();
    if spurious {
        let extra = ((n as f64) * p.spurious_fraction).round() as usize;
        for _ in 0..extra {
            let m = Minutia::real(rng.random_range(0.0..frame), rng.random_range(0.0..frame), rng.random_range(0.0..TAU));
            out_m.push(motion.apply(&m));
            out_d.push(factory.sample(rng));
        }
    }
    (out_m, out_d)
}

fn compressed_all(ds: Vec<Vec<f32>>) -> Vec<Descriptor> {
    ds.into_iter().map(|d| Descriptor::compressed(d).expect("factory dimension")).collect()
}

/// Template-level identification cases. Reference texture descriptors are
/// quantized with `codebook`; the factory must produce vectors of its length.
pub fn synthetic_cases(n: usize, params: &CaseParams, factory: &DescriptorFactory, codebook: &PqCodebook, seed: u64) -> Vec<SyntheticCase> {
    let p = &params.perturbation;
    (0..n)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(k as u64));
            let ms = random_minutiae(params.minutiae, params.frame, 10.0, &mut rng);
            let ds: Vec<Vec<f32>> = ms.iter().map(|_| factory.sample(&mut rng)).collect();
            let flow = rng.random_range(0.0..PI);
            let virt: Vec<Minutia> = if params.stride == 0 {
                Vec::new()
            } else {
                let steps = (params.frame as usize) / params.stride;
                (1..steps)
                    .flat_map(|j| (1..steps).map(move |i| (i, j)))
                    .map(|(i, j)| {
                        let (x, y) = ((i * params.stride) as f64, (j * params.stride) as f64);
                        Minutia::virtual_at(x, y, flow + 0.4 * (x / params.frame - 0.5) * (y / params.frame))
                    })
                    .collect()
            };
            let vds: Vec<Vec<f32>> = virt.iter().map(|_| factory.sample(&mut rng)).collect();
            let reference = ReferenceTemplates {
                minutiae: MinutiaeTemplate::new(ms.clone(), compressed_all(ds.clone()), SourceTag::Reference).expect("consistent"),
                texture: TextureTemplate::new(
                    virt.clone(),
                    vds.iter().map(|d| Descriptor::quantized(codebook.quantize_values(d).expect("codebook dimension")).expect("codes")).collect(),
                )
                .expect("consistent"),
            };
            let motion = Motion::random(params.frame, p, &mut rng);
            let tags = [SourceTag::LatentStft, SourceTag::LatentEnhanced, SourceTag::LatentCommon];
            let minutiae = tags.map(|tag| {
                let (pm, pd) = perturbed_items(&ms, &ds, &motion, params.frame, p, factory, true, &mut rng);
                MinutiaeTemplate::new(pm, compressed_all(pd), tag).expect("consistent")
            });
            let (tv, td) = perturbed_items(&virt, &vds, &motion, params.frame, p, factory, false, &mut rng);
            let texture = TextureTemplate::new(tv.iter().map(|m| Minutia { kind: MinutiaKind::Virtual, ..*m }).collect(), compressed_all(td)).expect("consistent");
            SyntheticCase { id: format!("ref{k:05}"), reference, probe: LatentTemplates { minutiae, texture } }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn print_is_deterministic_and_has_requested_minutiae() {
        let p = PrintParams { seed: 4, ..PrintParams::default() };
        let a = synthetic_print(&p);
        let b = synthetic_print(&p);
        assert_eq!(a.image, b.image);
        assert_eq!(a.minutiae.len(), p.minutiae);
        for m in &a.minutiae {
            assert!(a.in_foreground(m.x, m.y));
        }
    }

    #[test]
    fn latent_is_darker_outside_partial_region() {
        let p = synthetic_print(&PrintParams { seed: 5, ..PrintParams::default() });
        let l = degrade_to_latent(&p, &LatentParams::default());
        assert_eq!((l.width(), l.height()), (p.image.width(), p.image.height()));
        let (lo, hi) = l.min_max();
        assert!(lo >= 0.0 && hi <= 255.0);
    }

    #[test]
    fn factory_outputs_unit_vectors_and_perturbations_stay_close() {
        let f = DescriptorFactory::new(192, 16, true, 3);
        let mut r = rng(9);
        let a = f.sample(&mut r);
        let b = f.perturb(&a, 0.01, &mut r);
        let dot: f32 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((a.iter().map(|x| x * x).sum::<f32>() - 1.0).abs() < 1e-5);
        assert!(a.iter().all(|&x| x >= 0.0));
        assert!(dot > 0.95);
    }
}
