//! Learned 192→96 descriptor compression that preserves cosine similarity.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::descriptor::cosine;
use crate::error::{format_err, Error, Result};
use crate::model::{Descriptor, COMPRESSED_LEN, RAW_LEN};
use crate::synthetic::normalize;

pub const MIN_CORPUS: usize = 10_000;
pub const LAYER_WIDTHS: [usize; 5] = [RAW_LEN, 128, 128, 128, COMPRESSED_LEN];
const MAGIC: &[u8; 4] = b"LFCM";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    /// `out × in`.
    weight: Array2<f32>,
    bias: Array1<f32>,
}

/// Four affine layers with tanh between them; the last layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressorModel {
    layers: Vec<Layer>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_pairs: usize,
    pub learning_rate: f32,
    pub seed: u64,
    pub min_corpus: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 12, steps_per_epoch: 100, batch_pairs: 256, learning_rate: 1e-3, seed: 7, min_corpus: MIN_CORPUS }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean loss per epoch.
    pub epoch_loss: Vec<f64>,
}

impl CompressorModel {
    /// Glorot-uniform initialisation.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = LAYER_WIDTHS
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f32).sqrt();
                Layer {
                    weight: Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-limit..limit)),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        CompressorModel { layers }
    }

    /// Rows of `x` are inputs; returns pre-normalisation outputs and, when
    /// asked, every layer's input for back-propagation.
    fn forward(&self, x: ArrayView2<f32>, keep: bool) -> (Array2<f32>, Vec<Array2<f32>>) {
        let mut acts = Vec::new();
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight.t());
            z += &layer.bias;
            if keep {
                acts.push(h);
            }
            if i < last {
                z.mapv_inplace(f32::tanh);
            }
            h = z;
        }
        (h, acts)
    }

    pub fn compress_values(&self, raw: &[f32]) -> Result<Vec<f32>> {
        if raw.len() != RAW_LEN {
            return Err(Error::LengthMismatch { expected: RAW_LEN, actual: raw.len() });
        }
        let x = ArrayView2::from_shape((1, RAW_LEN), raw).expect("shape checked");
        let (y, _) = self.forward(x, false);
        let mut out = y.into_raw_vec_and_offset().0;
        normalize(&mut out);
        Ok(out)
    }

    pub fn compress_batch(&self, raws: &[Descriptor]) -> Result<Vec<Descriptor>> {
        raws.iter().map(|d| compress_descriptor(self, d)).collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u16::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(self.layers.len() as u32)?;
        for layer in &self.layers {
            let (o, i) = layer.weight.dim();
            w.write_u32::<LittleEndian>(o as u32)?;
            w.write_u32::<LittleEndian>(i as u32)?;
            for v in layer.weight.iter().chain(layer.bias.iter()) {
                w.write_f32::<LittleEndian>(*v)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(format_err("not a compressor model file"));
        }
        let version = r.read_u16::<LittleEndian>()?;
        if version != VERSION {
            return Err(format_err(format!("unsupported compressor version {version}")));
        }
        let n = r.read_u32::<LittleEndian>()? as usize;
        if n != LAYER_WIDTHS.len() - 1 {
            return Err(format_err(format!("expected 4 layers, found {n}")));
        }
        let mut layers = Vec::with_capacity(n);
        for k in 0..n {
            let o = r.read_u32::<LittleEndian>()? as usize;
            let i = r.read_u32::<LittleEndian>()? as usize;
            if (i, o) != (LAYER_WIDTHS[k], LAYER_WIDTHS[k + 1]) {
                return Err(format_err(format!("layer {k} has shape {o}x{i}")));
            }
            let mut w = vec![0f32; o * i];
            r.read_f32_into::<LittleEndian>(&mut w)?;
            let mut b = vec![0f32; o];
            r.read_f32_into::<LittleEndian>(&mut b)?;
            if w.iter().chain(&b).any(|v| !v.is_finite()) {
                return Err(format_err("non-finite compressor weight"));
            }
            layers.push(Layer { weight: Array2::from_shape_vec((o, i), w).expect("sized"), bias: Array1::from(b) });
        }
        Ok(CompressorModel { layers })
    }
}

pub fn compress_descriptor(model: &CompressorModel, d: &Descriptor) -> Result<Descriptor> {
    match d {
        Descriptor::Raw(v) => Descriptor::compressed(model.compress_values(v)?),
        other => Err(Error::InvalidArgument(format!("cannot compress a {:?} descriptor", other.stage()))),
    }
}

/// Draws training pairs: half uniformly random, half the most similar of a
/// small random pool, so both low and high input cosines are represented.
pub struct PairSampler<'a> {
    corpus: &'a [Vec<f32>],
    pool: usize,
}

impl<'a> PairSampler<'a> {
    pub fn new(corpus: &'a [Vec<f32>]) -> Self {
        PairSampler { corpus, pool: 48 }
    }

    pub fn draw(&self, rng: &mut impl Rng) -> (usize, usize) {
        let n = self.corpus.len();
        let a = rng.random_range(0..n);
        if rng.random_bool(0.5) {
            let mut b = rng.random_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            return (a, b);
        }
        let mut best = (f64::NEG_INFINITY, a);
        for b in sample(rng, n, self.pool.min(n)).into_iter().filter(|&b| b != a) {
            let c = cosine(&self.corpus[a], &self.corpus[b]);
            if c > best.0 {
                best = (c, b);
            }
        }
        (a, best.1)
    }
}

struct Adam {
    m: Vec<(Array2<f32>, Array1<f32>)>,
    v: Vec<(Array2<f32>, Array1<f32>)>,
    t: i32,
}

impl Adam {
    fn new(model: &CompressorModel) -> Self {
        let zeros = || model.layers.iter().map(|l| (Array2::zeros(l.weight.dim()), Array1::zeros(l.bias.len()))).collect();
        Adam { m: zeros(), v: zeros(), t: 0 }
    }

    fn step(&mut self, model: &mut CompressorModel, grads: &[(Array2<f32>, Array1<f32>)], lr: f32) {
        const B1: f32 = 0.9;
        const B2: f32 = 0.999;
        const EPS: f32 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for (k, layer) in model.layers.iter_mut().enumerate() {
            let (gw, gb) = &grads[k];
            let (mw, mb) = &mut self.m[k];
            let (vw, vb) = &mut self.v[k];
            ndarray::Zip::from(&mut layer.weight).and(mw).and(vw).and(gw).for_each(|p, m, v, &g| {
                *m = B1 * *m + (1.0 - B1) * g;
                *v = B2 * *v + (1.0 - B2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
            });
            ndarray::Zip::from(&mut layer.bias).and(mb).and(vb).and(gb).for_each(|p, m, v, &g| {
                *m = B1 * *m + (1.0 - B1) * g;
                *v = B2 * *v + (1.0 - B2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
            });
        }
    }
}

/// Loss and gradients for a batch whose rows are `a0, b0, a1, b1, ...`.
fn batch_gradients(model: &CompressorModel, x: &Array2<f32>, targets: &[f32]) -> (f64, Vec<(Array2<f32>, Array1<f32>)>) {
    let (y, acts) = model.forward(x.view(), true);
    let pairs = targets.len();
    let mut grad_y = Array2::<f32>::zeros(y.dim());
    let mut loss = 0f64;
    for p in 0..pairs {
        let ya = y.row(2 * p);
        let yb = y.row(2 * p + 1);
        let na = ya.dot(&ya).sqrt().max(1e-12);
        let nb = yb.dot(&yb).sqrt().max(1e-12);
        let c = ya.dot(&yb) / (na * nb);
        let diff = c - targets[p];
        loss += (diff as f64).powi(2);
        let scale = 2.0 * diff / pairs as f32;
        let ga = (&yb / (na * nb) - &ya * (c / (na * na))) * scale;
        let gb = (&ya / (na * nb) - &yb * (c / (nb * nb))) * scale;
        grad_y.row_mut(2 * p).assign(&ga);
        grad_y.row_mut(2 * p + 1).assign(&gb);
    }
    let mut grads = Vec::with_capacity(model.layers.len());
    let mut delta = grad_y;
    for k in (0..model.layers.len()).rev() {
        let input = &acts[k];
        let gw = delta.t().dot(input);
        let gb = delta.sum_axis(Axis(0));
        if k > 0 {
            let mut back = delta.dot(&model.layers[k].weight);
            // input of layer k is tanh output of layer k-1
            ndarray::Zip::from(&mut back).and(input).for_each(|d, &h| *d *= 1.0 - h * h);
            delta = back;
        }
        grads.push((gw, gb));
    }
    grads.reverse();
    (loss / pairs as f64, grads)
}

/// Trains on raw descriptors to match output-pair cosines to input-pair
/// cosines. Deterministic for a given corpus and seed.
pub fn train_compressor(corpus: &[Vec<f32>], config: &TrainConfig) -> Result<(CompressorModel, TrainReport)> {
    if corpus.len() < config.min_corpus.max(2) {
        return Err(Error::CorpusTooSmall { required: config.min_corpus.max(2), actual: corpus.len() });
    }
    if let Some(bad) = corpus.iter().find(|d| d.len() != RAW_LEN) {
        return Err(Error::LengthMismatch { expected: RAW_LEN, actual: bad.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = CompressorModel::random(rng.random());
    let mut adam = Adam::new(&model);
    let sampler = PairSampler::new(corpus);
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    let mut x = Array2::<f32>::zeros((2 * config.batch_pairs, RAW_LEN));
    let mut targets = vec![0f32; config.batch_pairs];
    for epoch in 0..config.epochs {
        let mut total = 0.0;
        // a short decay keeps late epochs from oscillating
        let lr = config.learning_rate * 0.5f32.powf(epoch as f32 / config.epochs.max(1) as f32 * 3.0);
        for _ in 0..config.steps_per_epoch {
            for p in 0..config.batch_pairs {
                let (a, b) = sampler.draw(&mut rng);
                x.row_mut(2 * p).assign(&ArrayView2::from_shape((1, RAW_LEN), &corpus[a]).unwrap().row(0));
                x.row_mut(2 * p + 1).assign(&ArrayView2::from_shape((1, RAW_LEN), &corpus[b]).unwrap().row(0));
                targets[p] = cosine(&corpus[a], &corpus[b]) as f32;
            }
            let (loss, grads) = batch_gradients(&model, &x, &targets);
            total += loss;
            adam.step(&mut model, &grads, lr);
        }
        epoch_loss.push(total / config.steps_per_epoch.max(1) as f64);
    }
    Ok((model, TrainReport { epoch_loss }))
}

/// Mean absolute change in cosine over the given pairs.
pub fn cosine_error(model: &CompressorModel, corpus: &[Vec<f32>], pairs: &[(usize, usize)]) -> Result<f64> {
    let mut total = 0.0;
    for &(a, b) in pairs {
        let (ca, cb) = (model.compress_values(&corpus[a])?, model.compress_values(&corpus[b])?);
        total += (cosine(&corpus[a], &corpus[b]) - cosine(&ca, &cb)).abs();
    }
    Ok(total / pairs.len().max(1) as f64)
}
