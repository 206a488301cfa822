//! Product quantization of compressed descriptors and asymmetric distances.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{format_err, invalid, Error, Result};
use crate::model::{Descriptor, COMPRESSED_LEN, PQ_CENTROIDS};
use crate::synthetic::jitter;

pub const DEFAULT_SUBQUANTIZERS: usize = 16;
pub const KMEANS_ITERATIONS: usize = 50;
/// Noise level of the synthetic genuine pairs used to calibrate `d0`.
pub const CALIBRATION_NOISE: f32 = 0.05;
pub const CALIBRATION_PERCENTILE: f64 = 0.95;
const MAGIC: &[u8; 4] = b"LFPQ";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PqCodebook {
    m: usize,
    sub_dim: usize,
    /// `m × 256 × sub_dim`, row-major.
    centroids: Vec<f32>,
    /// Distance threshold turning ADC distances into similarities.
    d0: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    /// Total squared distortion after each assignment step.
    pub distortion: Vec<f64>,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Lloyd's algorithm with farthest-point seeding; empty clusters are
/// reseeded with the point farthest from its centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, iterations: usize, seed: u64) -> KMeansResult {
    assert!(points.len() >= k && k > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..points.len());
    let mut centroids = vec![points[first].clone()];
    let mut gap: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let far = argmax(&gap);
        centroids.push(points[far].clone());
        let c = centroids.last().unwrap();
        for (g, p) in gap.iter_mut().zip(points) {
            *g = g.min(sq_dist(p, c));
        }
    }
    let dim = points[0].len();
    let mut assign = vec![usize::MAX; points.len()];
    let mut dist = vec![0f64; points.len()];
    let mut distortion = Vec::new();
    for _ in 0..iterations {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (a, d) = nearest(p, &centroids);
            changed |= assign[i] != a;
            assign[i] = a;
            dist[i] = d;
        }
        distortion.push(dist.iter().sum());
        if !changed {
            break;
        }
        let mut sums = vec![vec![0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let mut current: Vec<f64> = points.iter().zip(&assign).map(|(p, &a)| sq_dist(p, &centroids[a])).collect();
        for c in 0..k {
            if counts[c] == 0 {
                let far = argmax(&current);
                centroids[c] = points[far].clone();
                current[far] = 0.0;
            }
        }
    }
    KMeansResult { centroids, distortion }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct PqTrainReport {
    /// Distortion history per subquantizer.
    pub distortion: Vec<Vec<f64>>,
}

impl PqCodebook {
    pub fn subquantizers(&self) -> usize {
        self.m
    }

    pub fn sub_dim(&self) -> usize {
        self.sub_dim
    }

    pub fn dim(&self) -> usize {
        self.m * self.sub_dim
    }

    pub fn d0(&self) -> f32 {
        self.d0
    }

    pub fn set_d0(&mut self, d0: f32) {
        self.d0 = d0;
    }

    #[inline]
    pub fn centroid(&self, sub: usize, code: usize) -> &[f32] {
        let start = (sub * PQ_CENTROIDS + code) * self.sub_dim;
        &self.centroids[start..start + self.sub_dim]
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::LengthMismatch { expected: self.dim(), actual: len });
        }
        Ok(())
    }

    /// Nearest centroid per slice; ties go to the lowest index.
    pub fn quantize_values(&self, y: &[f32]) -> Result<Vec<u8>> {
        self.check_len(y.len())?;
        Ok((0..self.m)
            .map(|i| {
                let slice = &y[i * self.sub_dim..(i + 1) * self.sub_dim];
                let mut best = (0usize, f32::INFINITY);
                for code in 0..PQ_CENTROIDS {
                    let d = sub_sq(slice, self.centroid(i, code));
                    if d < best.1 {
                        best = (code, d);
                    }
                }
                best.0 as u8
            })
            .collect())
    }

    pub fn reconstruct(&self, codes: &[u8]) -> Result<Vec<f32>> {
        if codes.len() != self.m {
            return Err(Error::LengthMismatch { expected: self.m, actual: codes.len() });
        }
        Ok(codes.iter().enumerate().flat_map(|(i, &c)| self.centroid(i, c as usize).iter().copied()).collect())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u16::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(self.m as u32)?;
        w.write_u32::<LittleEndian>(self.sub_dim as u32)?;
        w.write_u32::<LittleEndian>(PQ_CENTROIDS as u32)?;
        w.write_f32::<LittleEndian>(self.d0)?;
        for v in &self.centroids {
            w.write_f32::<LittleEndian>(*v)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(format_err("not a codebook file"));
        }
        let version = r.read_u16::<LittleEndian>()?;
        if version != VERSION {
            return Err(format_err(format!("unsupported codebook version {version}")));
        }
        let m = r.read_u32::<LittleEndian>()? as usize;
        let sub_dim = r.read_u32::<LittleEndian>()? as usize;
        let k = r.read_u32::<LittleEndian>()? as usize;
        if k != PQ_CENTROIDS || m == 0 || m * sub_dim != COMPRESSED_LEN {
            return Err(format_err(format!("bad codebook shape {m}x{k}x{sub_dim}")));
        }
        let d0 = r.read_f32::<LittleEndian>()?;
        let mut centroids = vec![0f32; m * k * sub_dim];
        r.read_f32_into::<LittleEndian>(&mut centroids)?;
        if !d0.is_finite() || centroids.iter().any(|v| !v.is_finite()) {
            return Err(format_err("non-finite codebook value"));
        }
        Ok(PqCodebook { m, sub_dim, centroids, d0 })
    }
}

#[inline]
fn sub_sq(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Independent k-means per slice. `d0` is calibrated on the corpus itself
/// as a high percentile of genuine-pair distances.
pub fn train_pq(corpus: &[Vec<f32>], m: usize, seed: u64) -> Result<(PqCodebook, PqTrainReport)> {
    let dim = corpus.first().map_or(COMPRESSED_LEN, Vec::len);
    if m == 0 || dim % m != 0 {
        return Err(invalid(format!("{m} subvectors do not divide {dim}")));
    }
    if corpus.len() < PQ_CENTROIDS {
        return Err(Error::CorpusTooSmall { required: PQ_CENTROIDS, actual: corpus.len() });
    }
    if let Some(bad) = corpus.iter().find(|v| v.len() != dim) {
        return Err(Error::LengthMismatch { expected: dim, actual: bad.len() });
    }
    let sub_dim = dim / m;
    let results: Vec<KMeansResult> = (0..m)
        .into_par_iter()
        .map(|i| {
            let points: Vec<Vec<f64>> =
                corpus.iter().map(|v| v[i * sub_dim..(i + 1) * sub_dim].iter().map(|&x| x as f64).collect()).collect();
            kmeans(&points, PQ_CENTROIDS, KMEANS_ITERATIONS, seed.wrapping_add(i as u64))
        })
        .collect();
    let centroids = results.iter().flat_map(|r| r.centroids.iter().flatten().map(|&x| x as f32)).collect();
    let mut book = PqCodebook { m, sub_dim, centroids, d0: 0.0 };
    book.d0 = calibrate_d0(&book, corpus, seed);
    Ok((book, PqTrainReport { distortion: results.into_iter().map(|r| r.distortion).collect() }))
}

/// 95th percentile of ADC distances between corpus vectors and quantized,
/// lightly perturbed copies of themselves.
pub fn calibrate_d0(book: &PqCodebook, corpus: &[Vec<f32>], seed: u64) -> f32 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n = corpus.len().min(2000);
    let mut dists: Vec<f32> = (0..n)
        .map(|_| {
            let x = &corpus[rng.random_range(0..corpus.len())];
            let y = jitter(x, CALIBRATION_NOISE, &mut rng);
            let codes = book.quantize_values(&y).expect("length checked");
            AdcTable::new(book, x).expect("length checked").distance(&codes)
        })
        .collect();
    dists.sort_by(f32::total_cmp);
    let idx = ((n as f64 - 1.0) * CALIBRATION_PERCENTILE).round() as usize;
    dists[idx]
}

pub fn quantize_descriptor(book: &PqCodebook, y: &Descriptor) -> Result<Descriptor> {
    match y {
        Descriptor::Compressed(v) => Descriptor::quantized(book.quantize_values(v)?),
        other => Err(invalid(format!("cannot quantize a {:?} descriptor", other.stage()))),
    }
}

/// Per-probe table of sub-distances from one compressed descriptor to every
/// centroid of every slice.
#[derive(Debug, Clone, PartialEq)]
pub struct AdcTable {
    m: usize,
    table: Vec<[f32; PQ_CENTROIDS]>,
}

impl AdcTable {
    pub fn new(book: &PqCodebook, x: &[f32]) -> Result<Self> {
        book.check_len(x.len())?;
        let table = (0..book.m)
            .map(|i| {
                let slice = &x[i * book.sub_dim..(i + 1) * book.sub_dim];
                std::array::from_fn(|code| sub_sq(slice, book.centroid(i, code)).sqrt())
            })
            .collect();
        Ok(AdcTable { m: book.m, table })
    }

    pub fn subquantizers(&self) -> usize {
        self.m
    }

    /// Sum of table entries selected by `codes`; codes must have one entry per slice.
    #[inline]
    pub fn distance(&self, codes: &[u8]) -> f32 {
        debug_assert_eq!(codes.len(), self.m);
        let mut total = 0f32;
        for (row, &c) in self.table.iter().zip(codes) {
            total += row[c as usize];
        }
        total
    }

    /// [`AdcTable::distance`] for many code vectors, four at a time so the
    /// independent sums overlap. Results are bit-identical to the single path.
    pub fn distances(&self, codes: &[&[u8]], out: &mut [f32]) {
        assert_eq!(codes.len(), out.len());
        let mut groups = codes.chunks_exact(4);
        let mut outs = out.chunks_exact_mut(4);
        for (g, o) in (&mut groups).zip(&mut outs) {
            let (a, b, c, d) = (&g[0][..self.m], &g[1][..self.m], &g[2][..self.m], &g[3][..self.m]);
            let mut t = [0f32; 4];
            for (i, row) in self.table.iter().enumerate() {
                t[0] += row[a[i] as usize];
                t[1] += row[b[i] as usize];
                t[2] += row[c[i] as usize];
                t[3] += row[d[i] as usize];
            }
            o.copy_from_slice(&t);
        }
        for (c, o) in groups.remainder().iter().zip(outs.into_remainder()) {
            *o = self.distance(c);
        }
    }
}

/// Direct evaluation of the asymmetric distance, without a table.
pub fn adc_distance(x: &[f32], codes: &[u8], book: &PqCodebook) -> Result<f32> {
    book.check_len(x.len())?;
    if codes.len() != book.m {
        return Err(Error::LengthMismatch { expected: book.m, actual: codes.len() });
    }
    let mut total = 0f32;
    for (i, &c) in codes.iter().enumerate() {
        total += sub_sq(&x[i * book.sub_dim..(i + 1) * book.sub_dim], book.centroid(i, c as usize)).sqrt();
    }
    Ok(total)
}

/// Sum over slices of exact Euclidean sub-distances.
pub fn sliced_distance(x: &[f32], y: &[f32], m: usize) -> f32 {
    let sub = x.len() / m;
    (0..m).map(|i| sub_sq(&x[i * sub..(i + 1) * sub], &y[i * sub..(i + 1) * sub]).sqrt()).sum()
}
