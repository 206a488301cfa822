//! Probe-versus-gallery search and CMC evaluation.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{invalid, Error, Result};
use crate::extract::LatentTemplates;
use crate::gallery::{GalleryEntry, GalleryIndex};
use crate::matcher::{compare_minutiae_templates, compare_texture_prepared, fuse_scores, MatchResult, TextureProbe};
use crate::model::{Candidate, CandidateList, ComponentScores};

/// A probe prepared once for a whole gallery pass.
pub struct PreparedProbe<'a> {
    templates: &'a LatentTemplates,
    texture: TextureProbe<'a>,
    d0: f64,
    config: Config,
}

impl<'a> PreparedProbe<'a> {
    pub fn new(templates: &'a LatentTemplates, index: &GalleryIndex, config: &Config) -> Result<Self> {
        let models = index.models();
        Ok(PreparedProbe {
            templates,
            texture: TextureProbe::new(&templates.texture, &models.codebook)?,
            d0: models.d0(config),
            config: *config,
        })
    }

    /// The four comparisons against one reference.
    pub fn compare(&self, entry: &GalleryEntry) -> ([MatchResult; 3], MatchResult) {
        let params = &self.config.matcher;
        let r = &entry.templates;
        let minutiae = self.templates.minutiae.each_ref().map(|l| compare_minutiae_templates(l, &r.minutiae, params));
        let texture = compare_texture_prepared(&self.texture, &r.texture, self.d0, params);
        (minutiae, texture)
    }

    pub fn score(&self, entry: &GalleryEntry) -> Candidate {
        let (m, t) = self.compare(entry);
        candidate(entry, &m, &t, &self.config)
    }
}

fn candidate(entry: &GalleryEntry, m: &[MatchResult; 3], t: &MatchResult, config: &Config) -> Candidate {
    let scores = ComponentScores { minutiae: [m[0].score, m[1].score, m[2].score], texture: t.score };
    Candidate {
        reference_id: entry.id.clone(),
        fused_score: fuse_scores(scores.minutiae, scores.texture, &config.fusion),
        scores,
    }
}

/// Runs `f` over contiguous shards of the gallery on `workers` threads and
/// returns the shard results in gallery order.
fn sharded<T: Send>(entries: &[GalleryEntry], workers: usize, f: impl Fn(&[GalleryEntry]) -> T + Sync) -> Vec<T> {
    let workers = workers.clamp(1, entries.len().max(1));
    if workers == 1 {
        return vec![f(entries)];
    }
    let chunk = entries.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = entries.chunks(chunk).map(|shard| s.spawn(|| f(shard))).collect();
        handles.into_iter().map(|h| h.join().expect("search worker panicked")).collect()
    })
}

/// Top-`k` references by fused score.
pub fn search_gallery(probe: &LatentTemplates, index: &GalleryIndex, k: usize, config: &Config) -> Result<CandidateList> {
    search_with_workers(probe, index, k, config, config.search.worker_count())
}

/// [`search_gallery`] with an explicit worker count.
pub fn search_with_workers(probe: &LatentTemplates, index: &GalleryIndex, k: usize, config: &Config, workers: usize) -> Result<CandidateList> {
    if index.is_empty() || k == 0 {
        return Ok(CandidateList::default());
    }
    let prepared = PreparedProbe::new(probe, index, config)?;
    let partial = sharded(index.entries(), workers, |shard| {
        CandidateList::from_unsorted(shard.iter().map(|e| prepared.score(e)).collect(), k).into_entries()
    });
    Ok(CandidateList::from_unsorted(partial.into_iter().flatten().collect(), k))
}

/// Scores against every reference, in gallery order.
pub fn score_gallery(probe: &LatentTemplates, index: &GalleryIndex, config: &Config) -> Result<Vec<Candidate>> {
    let prepared = PreparedProbe::new(probe, index, config)?;
    let parts = sharded(index.entries(), config.search.worker_count(), |shard| shard.iter().map(|e| prepared.score(e)).collect::<Vec<_>>());
    Ok(parts.into_iter().flatten().collect())
}

/// A candidate with the correspondences behind each component score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetailedCandidate {
    #[serde(flatten)]
    pub candidate: Candidate,
    pub minutiae: [MatchResult; 3],
    pub texture: MatchResult,
}

/// Search, then recompute the surviving correspondences of the top `k`.
pub fn search_gallery_detailed(probe: &LatentTemplates, index: &GalleryIndex, k: usize, config: &Config) -> Result<Vec<DetailedCandidate>> {
    let list = search_gallery(probe, index, k, config)?;
    let prepared = PreparedProbe::new(probe, index, config)?;
    list.into_entries()
        .into_iter()
        .map(|c| {
            let entry = index.get(&c.reference_id).ok_or_else(|| Error::NotFound(c.reference_id.clone()))?;
            let (minutiae, texture) = prepared.compare(entry);
            Ok(DetailedCandidate { candidate: c, minutiae, texture })
        })
        .collect()
}

/// Probe-by-gallery score table.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub probe_ids: Vec<String>,
    pub gallery_ids: Vec<String>,
    /// One row per probe, one column per gallery entry.
    pub scores: Vec<Vec<f64>>,
}

/// Identification rate at ranks 1 to K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmcCurve {
    pub rates: Vec<f64>,
}

impl CmcCurve {
    /// Rate at `rank` (1-based); ranks past the end repeat the last value.
    pub fn rate(&self, rank: usize) -> f64 {
        if rank == 0 || self.rates.is_empty() {
            return 0.0;
        }
        self.rates[rank.min(self.rates.len()) - 1]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,rate\n");
        for (i, r) in self.rates.iter().enumerate() {
            let _ = writeln!(out, "{},{r:.6}", i + 1);
        }
        out
    }
}

/// Pessimistic rank of the mate: ties with smaller ids count against it.
pub fn mate_rank(scores: &[f64], ids: &[String], mate: usize) -> usize {
    let (s, id) = (scores[mate], &ids[mate]);
    1 + scores
        .iter()
        .zip(ids)
        .filter(|&(&v, other)| v > s || (v == s && other < id))
        .count()
}

pub fn evaluate_cmc(matrix: &ScoreMatrix, truth: &HashMap<String, String>, max_rank: usize) -> Result<CmcCurve> {
    if matrix.scores.len() != matrix.probe_ids.len() {
        return Err(Error::LengthMismatch { expected: matrix.probe_ids.len(), actual: matrix.scores.len() });
    }
    if matrix.probe_ids.is_empty() {
        return Err(invalid("no probes"));
    }
    let column: HashMap<&str, usize> = matrix.gallery_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut hits = vec![0usize; max_rank];
    for (probe, row) in matrix.probe_ids.iter().zip(&matrix.scores) {
        if row.len() != matrix.gallery_ids.len() {
            return Err(Error::LengthMismatch { expected: matrix.gallery_ids.len(), actual: row.len() });
        }
        let mate = truth.get(probe).ok_or_else(|| invalid(format!("probe {probe} has no mate")))?;
        let &col = column.get(mate.as_str()).ok_or_else(|| invalid(format!("mate {mate} of probe {probe} is not in the gallery")))?;
        let rank = mate_rank(row, &matrix.gallery_ids, col);
        if rank <= max_rank {
            hits[rank - 1] += 1;
        }
    }
    let n = matrix.probe_ids.len() as f64;
    let mut acc = 0;
    let rates = hits
        .into_iter()
        .map(|h| {
            acc += h;
            acc as f64 / n
        })
        .collect();
    Ok(CmcCurve { rates })
}

#[cfg(test)]
mod tests;
