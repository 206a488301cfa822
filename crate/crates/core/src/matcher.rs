//! Template comparison: descriptor similarities, correspondence selection,
//! second-order graph matching, and score fusion.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{angle_diff, Descriptor, Minutia, MinutiaeTemplate, TextureTemplate};
use crate::pq::{AdcTable, PqCodebook};

pub const NORMALIZE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatcherParams {
    pub top_n_minutiae: usize,
    pub top_n_texture: usize,
    /// Per-row candidates kept in texture mode before the global cut.
    pub texture_per_row: usize,
    pub tau_d: f64,
    pub tau_theta: f64,
    pub k_s: usize,
    /// Activation floor as a fraction of the largest eigenvector entry.
    pub rho: f64,
    pub power_iterations: usize,
}

impl Default for MatcherParams {
    fn default() -> Self {
        MatcherParams {
            top_n_minutiae: 120,
            top_n_texture: 200,
            texture_per_row: 2,
            tau_d: 15.0,
            tau_theta: PI / 6.0,
            k_s: 10,
            rho: 0.1,
            power_iterations: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub latent_index: usize,
    pub reference_index: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    pub score: f64,
    pub surviving: Vec<Correspondence>,
}

impl MatchResult {
    pub fn empty() -> Self {
        MatchResult::default()
    }

    /// Text record of the correspondences, one per line.
    pub fn debug_record(&self, selected: &[Correspondence]) -> String {
        let mut out = format!("score {:.6}\n", self.score);
        for (label, list) in [("selected", selected), ("surviving", &self.surviving[..])] {
            let _ = writeln!(out, "{label} {}", list.len());
            for c in list {
                let _ = writeln!(out, "{} {} {:.6}", c.latent_index, c.reference_index, c.similarity);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    Minutiae,
    Texture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphStage {
    Simplified,
    Full,
}

/// Dense row-major matrix of non-negative similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SimilarityMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(invalid("ragged similarity matrix"));
        }
        Ok(SimilarityMatrix { rows: rows.len(), cols, data: rows.concat() })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }
}

fn descriptor_values(d: &Descriptor) -> &[f32] {
    d.values().unwrap_or(&[])
}

/// Four-lane dot product; the fixed lane order keeps results reproducible.
#[inline]
fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0f64; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for k in 0..4 {
            acc[k] += f64::from(x[k]) * f64::from(y[k]);
        }
    }
    let mut tail = 0.0;
    for (x, y) in ar.iter().zip(br) {
        tail += f64::from(*x) * f64::from(*y);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Cosine similarities between compressed descriptors, floored at 0.
pub fn similarity_matrix(l: &MinutiaeTemplate, r: &MinutiaeTemplate) -> SimilarityMatrix {
    let ld: Vec<&[f32]> = l.descriptors().iter().map(descriptor_values).collect();
    let rd: Vec<&[f32]> = r.descriptors().iter().map(descriptor_values).collect();
    let rn: Vec<f64> = rd.iter().map(|b| dot(b, b)).collect();
    let mut s = SimilarityMatrix::zeros(ld.len(), rd.len());
    for (i, a) in ld.iter().enumerate() {
        let an = dot(a, a);
        if an == 0.0 {
            continue;
        }
        let row = &mut s.data[i * rd.len()..(i + 1) * rd.len()];
        for ((out, b), &bn) in row.iter_mut().zip(&rd).zip(&rn) {
            if bn > 0.0 {
                *out = (dot(a, b) / (an * bn).sqrt()).clamp(0.0, 1.0);
            }
        }
    }
    s
}

/// Row and column sums of a similarity matrix.
struct Margins {
    row: Vec<f64>,
    col: Vec<f64>,
}

impl Margins {
    fn of(s: &SimilarityMatrix) -> Self {
        let mut row = vec![0f64; s.rows];
        let mut col = vec![0f64; s.cols];
        for (i, r) in s.data.chunks_exact(s.cols.max(1)).enumerate().take(s.rows) {
            let mut acc = 0.0;
            for (c, &v) in col.iter_mut().zip(r) {
                acc += v;
                *c += v;
            }
            row[i] = acc;
        }
        Margins { row, col }
    }

    #[inline]
    fn normalized(&self, v: f64, i: usize, j: usize) -> f64 {
        if v > 0.0 {
            v / (self.row[i] + self.col[j] - v + NORMALIZE_EPS)
        } else {
            0.0
        }
    }
}

/// `S[i][j] / (rowsum_i + colsum_j − S[i][j] + ε)`.
pub fn normalize_similarity(s: &SimilarityMatrix) -> SimilarityMatrix {
    let m = Margins::of(s);
    let mut out = SimilarityMatrix::zeros(s.rows, s.cols);
    for i in 0..s.rows {
        for j in 0..s.cols {
            out.set(i, j, m.normalized(s.get(i, j), i, j));
        }
    }
    out
}

fn by_value_then_index(a: &(f64, usize, usize), b: &(f64, usize, usize)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
}

/// Highest positive entries of `normalized`; in texture mode each row first
/// contributes only its best `per_row` columns by `raw` similarity.
pub fn select_top_correspondences(
    normalized: &SimilarityMatrix,
    n: usize,
    mode: SelectionMode,
    raw: &SimilarityMatrix,
    per_row: usize,
) -> Vec<Correspondence> {
    select_with(raw, n, mode, per_row, |i, j| normalized.get(i, j))
}

fn select_with(raw: &SimilarityMatrix, n: usize, mode: SelectionMode, per_row: usize, norm: impl Fn(usize, usize) -> f64) -> Vec<Correspondence> {
    let mut pool: Vec<(f64, usize, usize)> = Vec::new();
    match mode {
        SelectionMode::Minutiae => {
            for i in 0..raw.rows {
                for j in 0..raw.cols {
                    let v = norm(i, j);
                    if v > 0.0 {
                        pool.push((v, i, j));
                    }
                }
            }
        }
        SelectionMode::Texture => {
            let mut best: Vec<(f64, usize)> = Vec::with_capacity(per_row + 1);
            for i in 0..raw.rows {
                best.clear();
                for (j, &v) in raw.data[i * raw.cols..(i + 1) * raw.cols].iter().enumerate() {
                    if v <= 0.0 || (best.len() == per_row && v <= best[per_row - 1].0) {
                        continue;
                    }
                    let at = best.partition_point(|&(b, _)| b >= v);
                    best.insert(at, (v, j));
                    best.truncate(per_row);
                }
                for &(_, j) in &best {
                    let v = norm(i, j);
                    if v > 0.0 {
                        pool.push((v, i, j));
                    }
                }
            }
        }
    }
    let keep = n.min(pool.len());
    if keep == 0 {
        return Vec::new();
    }
    if keep < pool.len() {
        pool.select_nth_unstable_by(keep - 1, by_value_then_index);
        pool.truncate(keep);
    }
    pool.sort_by(by_value_then_index);
    pool.into_iter().map(|(similarity, latent_index, reference_index)| Correspondence { latent_index, reference_index, similarity }).collect()
}

/// Pairwise geometric consistency of correspondences.
struct Geometry {
    period: f64,
    tau_d: f64,
    tau_theta: f64,
}

impl Geometry {
    fn for_mode(mode: SelectionMode, params: &MatcherParams) -> Self {
        // Virtual minutiae carry flow angles, which are only defined modulo π.
        let period = if mode == SelectionMode::Texture { PI } else { TAU };
        Geometry { period, tau_d: params.tau_d, tau_theta: params.tau_theta }
    }

    #[inline]
    fn diff(&self, a: f64, b: f64) -> f64 {
        if self.period == TAU {
            angle_diff(a, b)
        } else {
            angle_diff(2.0 * a, 2.0 * b) / 2.0
        }
    }

    #[cfg(test)]
    fn compatibility(&self, l: (&Minutia, &Minutia), r: (&Minutia, &Minutia)) -> f64 {
        self.combine(l, edge(l.0, l.1), r, edge(r.0, r.1))
    }

    #[inline]
    fn combine(&self, l: (&Minutia, &Minutia), (llen, le): (f64, f64), r: (&Minutia, &Minutia), (rlen, re): (f64, f64)) -> f64 {
        let (la, lb) = l;
        let (ra, rb) = r;
        let length = (llen - rlen).abs();
        let turn = self.diff(la.theta - lb.theta, ra.theta - rb.theta);
        let edge_a = self.diff(le - la.theta, re - ra.theta);
        let edge_b = self.diff(le + PI - lb.theta, re + PI - rb.theta);
        (-(length / self.tau_d + turn / self.tau_theta + 0.5 * (edge_a + edge_b) / self.tau_theta)).exp()
    }
}

/// Length and direction of the segment from `a` to `b`.
#[inline]
fn edge(a: &Minutia, b: &Minutia) -> (f64, f64) {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    ((dx * dx + dy * dy).sqrt(), dy.atan2(dx))
}

/// Segment lengths and directions between every ordered pair of the
/// minutiae a candidate list touches on one side.
struct EdgeTable {
    slot: Vec<usize>,
    width: usize,
    edges: Vec<(f64, f64)>,
}

impl EdgeTable {
    fn new(ms: &[Minutia], used: impl Iterator<Item = usize>) -> Self {
        let mut slot = vec![usize::MAX; ms.len()];
        let mut members = Vec::new();
        for i in used {
            if slot[i] == usize::MAX {
                slot[i] = members.len();
                members.push(i);
            }
        }
        let width = members.len();
        let mut edges = vec![(0.0, 0.0); width * width];
        for (a, &i) in members.iter().enumerate() {
            for (b, &j) in members.iter().enumerate().skip(a + 1) {
                let (len, dir) = edge(&ms[i], &ms[j]);
                edges[a * width + b] = (len, dir);
                edges[b * width + a] = (len, dir + PI);
            }
        }
        EdgeTable { slot, width, edges }
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> (f64, f64) {
        self.edges[self.slot[i] * self.width + self.slot[j]]
    }
}

/// Symmetric compatibility matrix of candidate correspondences; pairs that
/// share a latent or reference minutia are incompatible.
fn compatibility_matrix(cands: &[Correspondence], lm: &[Minutia], rm: &[Minutia], geo: &Geometry) -> Vec<f64> {
    let n = cands.len();
    let le = EdgeTable::new(lm, cands.iter().map(|c| c.latent_index));
    let re = EdgeTable::new(rm, cands.iter().map(|c| c.reference_index));
    let mut c = vec![0f64; n * n];
    for a in 0..n {
        for b in a + 1..n {
            let (p, q) = (&cands[a], &cands[b]);
            if p.latent_index == q.latent_index || p.reference_index == q.reference_index {
                continue;
            }
            let (li, lj, ri, rj) = (p.latent_index, q.latent_index, p.reference_index, q.reference_index);
            let v = geo.combine((&lm[li], &lm[lj]), le.get(li, lj), (&rm[ri], &rm[rj]), re.get(ri, rj));
            c[a * n + b] = v;
            c[b * n + a] = v;
        }
    }
    c
}

/// Indices of candidates ranked by the sum of their `k_s` strongest compatibilities.
fn simplified_keep(n: usize, compat: &[f64], k_s: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = (0..n)
        .map(|a| {
            let mut row: Vec<f64> = (0..n).filter(|&b| b != a).map(|b| compat[a * n + b]).collect();
            let k = k_s.min(row.len());
            if k > 0 && k < row.len() {
                row.select_nth_unstable_by(k - 1, |x, y| y.total_cmp(x));
            }
            (row[..k].iter().sum(), a)
        })
        .collect();
    scored.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let keep = n.div_ceil(2);
    let mut idx: Vec<usize> = scored[..keep].iter().map(|s| s.1).collect();
    idx.sort_unstable();
    idx
}

/// Principal eigenvector of the affinity matrix, similarities on the diagonal.
fn spectral_select(cands: &[Correspondence], compat: &[f64], params: &MatcherParams) -> Vec<usize> {
    let n = cands.len();
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut next = vec![0f64; n];
    for _ in 0..params.power_iterations {
        for a in 0..n {
            let row = &compat[a * n..(a + 1) * n];
            let mut s = cands[a].similarity * x[a];
            for (c, v) in row.iter().zip(&x) {
                s += c * v;
            }
            next[a] = s;
        }
        let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        let mut delta = 0.0;
        for (xa, na) in x.iter_mut().zip(&next) {
            let v = na / norm;
            delta += (v - *xa).abs();
            *xa = v;
        }
        if delta < 1e-12 {
            break;
        }
    }
    let max = x.iter().copied().fold(0.0, f64::max);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    let mut used_l = Vec::new();
    let mut used_r = Vec::new();
    let mut chosen = Vec::new();
    for a in order {
        if x[a] < params.rho * max || x[a] <= 0.0 {
            break;
        }
        let c = &cands[a];
        if used_l.contains(&c.latent_index) || used_r.contains(&c.reference_index) {
            continue;
        }
        used_l.push(c.latent_index);
        used_r.push(c.reference_index);
        chosen.push(a);
    }
    chosen.sort_unstable();
    chosen
}

fn score_survivors(survivors: &[usize], cands: &[Correspondence], compat: &[f64]) -> f64 {
    let n = cands.len();
    match survivors {
        [] => 0.0,
        [only] => cands[*only].similarity,
        _ => {
            let mut pair_sum = 0.0;
            let mut pairs = 0usize;
            for (k, &a) in survivors.iter().enumerate() {
                for &b in &survivors[k + 1..] {
                    pair_sum += compat[a * n + b];
                    pairs += 1;
                }
            }
            let sim: f64 = survivors.iter().map(|&a| cands[a].similarity).sum();
            sim * pair_sum / pairs as f64
        }
    }
}

/// Simplified stage, then (for [`GraphStage::Full`]) spectral selection.
pub fn second_order_match(cands: &[Correspondence], lm: &[Minutia], rm: &[Minutia], mode: SelectionMode, stage: GraphStage, params: &MatcherParams) -> MatchResult {
    let cands: Vec<Correspondence> = cands.iter().copied().filter(|c| c.similarity > 0.0).collect();
    if cands.is_empty() {
        return MatchResult::empty();
    }
    if cands.len() == 1 {
        return MatchResult { score: cands[0].similarity, surviving: cands };
    }
    let geo = Geometry::for_mode(mode, params);
    let compat = compatibility_matrix(&cands, lm, rm, &geo);
    let n = cands.len();
    let kept = simplified_keep(n, &compat, params.k_s);
    let (pool, pool_compat): (Vec<Correspondence>, Vec<f64>) = {
        let m = kept.len();
        let mut sub = vec![0f64; m * m];
        for (a, &ka) in kept.iter().enumerate() {
            for (b, &kb) in kept.iter().enumerate() {
                sub[a * m + b] = compat[ka * n + kb];
            }
        }
        (kept.iter().map(|&k| cands[k]).collect(), sub)
    };
    let survivors: Vec<usize> = match stage {
        GraphStage::Simplified => (0..pool.len()).collect(),
        GraphStage::Full => spectral_select(&pool, &pool_compat, params),
    };
    let score = score_survivors(&survivors, &pool, &pool_compat);
    MatchResult { score, surviving: survivors.iter().map(|&a| pool[a]).collect() }
}

/// Full comparison of a latent minutiae template against a reference one.
pub fn compare_minutiae_templates(l: &MinutiaeTemplate, r: &MinutiaeTemplate, params: &MatcherParams) -> MatchResult {
    if l.is_empty() || r.is_empty() {
        return MatchResult::empty();
    }
    let raw = similarity_matrix(l, r);
    let margins = Margins::of(&raw);
    let cands = select_with(&raw, params.top_n_minutiae, SelectionMode::Minutiae, params.texture_per_row, |i, j| margins.normalized(raw.get(i, j), i, j));
    second_order_match(&cands, l.minutiae(), r.minutiae(), SelectionMode::Minutiae, GraphStage::Full, params)
}

/// A latent texture template with one ADC table per descriptor, built once
/// per search and reused against every reference.
#[derive(Debug, Clone)]
pub struct TextureProbe<'a> {
    template: &'a TextureTemplate,
    tables: Vec<AdcTable>,
}

impl<'a> TextureProbe<'a> {
    pub fn new(template: &'a TextureTemplate, codebook: &PqCodebook) -> Result<Self> {
        let tables = template
            .descriptors()
            .iter()
            .map(|d| match d.values() {
                Some(v) if d.stage() == crate::model::DescriptorStage::Compressed => AdcTable::new(codebook, v),
                _ => Err(invalid("latent texture descriptors must be compressed")),
            })
            .collect::<Result<_>>()?;
        Ok(TextureProbe { template, tables })
    }

    pub fn template(&self) -> &TextureTemplate {
        self.template
    }

    /// `max(0, d0 − ADC)` against every reference descriptor.
    pub fn similarity_matrix(&self, reference: &TextureTemplate, d0: f64) -> SimilarityMatrix {
        let codes: Vec<&[u8]> = reference.descriptors().iter().map(|d| d.codes().unwrap_or(&[])).collect();
        let mut s = SimilarityMatrix::zeros(self.tables.len(), codes.len());
        let Some(m) = self.tables.first().map(AdcTable::subquantizers) else {
            return s;
        };
        if codes.iter().any(|c| c.len() != m) {
            return s;
        }
        let mut dist = vec![0f32; codes.len()];
        for (i, table) in self.tables.iter().enumerate() {
            table.distances(&codes, &mut dist);
            let row = &mut s.data[i * codes.len()..(i + 1) * codes.len()];
            for (out, &d) in row.iter_mut().zip(&dist) {
                *out = (d0 - f64::from(d)).max(0.0);
            }
        }
        s
    }
}

pub fn compare_texture_prepared(probe: &TextureProbe<'_>, reference: &TextureTemplate, d0: f64, params: &MatcherParams) -> MatchResult {
    if probe.template.is_empty() || reference.is_empty() {
        return MatchResult::empty();
    }
    let raw = probe.similarity_matrix(reference, d0);
    let margins = Margins::of(&raw);
    let cands = select_with(&raw, params.top_n_texture, SelectionMode::Texture, params.texture_per_row, |i, j| margins.normalized(raw.get(i, j), i, j));
    second_order_match(&cands, probe.template.minutiae(), reference.minutiae(), SelectionMode::Texture, GraphStage::Full, params)
}

/// Texture comparison; latent descriptors compressed, reference quantized.
pub fn compare_texture_templates(l: &TextureTemplate, r: &TextureTemplate, codebook: &PqCodebook, d0: f64, params: &MatcherParams) -> Result<MatchResult> {
    if l.is_empty() || r.is_empty() {
        return Ok(MatchResult::empty());
    }
    let probe = TextureProbe::new(l, codebook)?;
    Ok(compare_texture_prepared(&probe, r, d0, params))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionWeights {
    pub minutiae: [f64; 3],
    pub texture: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        FusionWeights { minutiae: [1.0, 1.0, 1.0], texture: 0.3 }
    }
}

pub fn fuse_scores(minutiae: [f64; 3], texture: f64, w: &FusionWeights) -> f64 {
    w.minutiae[0] * minutiae[0] + w.minutiae[1] * minutiae[1] + w.minutiae[2] * minutiae[2] + w.texture * texture
}
