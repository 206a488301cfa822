//! Shared domain types: minutiae, descriptors, templates and candidate lists.

use std::cmp::Ordering;
use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Length of a raw descriptor: three patches of 64 values.
pub const RAW_LEN: usize = 192;
/// Length of a compressed descriptor.
pub const COMPRESSED_LEN: usize = 96;
/// Number of centroids per product-quantization subquantizer.
pub const PQ_CENTROIDS: usize = 256;

/// Orientation difference on the circle, in `[0, π]`.
///
/// Inputs are expected in `[0, 2π)`; other finite values are wrapped first.
#[inline]
pub fn angle_diff(theta1: f64, theta2: f64) -> f64 {
    let d = theta1 - theta2;
    if (-PI..PI).contains(&d) {
        d.abs()
    } else {
        let d = d.abs() % TAU;
        if d > PI {
            TAU - d
        } else {
            d
        }
    }
}

/// Wraps any finite angle into `[0, 2π)`.
#[inline]
pub fn wrap_2pi(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// Wraps any finite angle into `[0, π)`.
#[inline]
pub fn wrap_pi(theta: f64) -> f64 {
    let t = theta.rem_euclid(PI);
    if t >= PI {
        0.0
    } else {
        t
    }
}

/// Lifts a direction-ambiguous ridge-flow angle to a minutia orientation.
///
/// The flow angle is taken as-is; both sides of a comparison use the same
/// convention so the π ambiguity cancels.
#[inline]
pub fn flow_to_orientation(flow: f64) -> f64 {
    wrap_2pi(flow)
}

/// Folds a minutia orientation onto the ridge-flow range `[0, π)`.
#[inline]
pub fn orientation_to_flow(theta: f64) -> f64 {
    wrap_pi(theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MinutiaKind {
    Real,
    Virtual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Minutia {
    /// Pixel column.
    pub x: f64,
    /// Pixel row.
    pub y: f64,
    /// Orientation in `[0, 2π)`.
    pub theta: f64,
    pub kind: MinutiaKind,
}

impl Minutia {
    pub fn real(x: f64, y: f64, theta: f64) -> Self {
        Minutia { x, y, theta: wrap_2pi(theta), kind: MinutiaKind::Real }
    }

    pub fn virtual_at(x: f64, y: f64, theta: f64) -> Self {
        Minutia { x, y, theta: wrap_2pi(theta), kind: MinutiaKind::Virtual }
    }

    pub fn distance(&self, other: &Minutia) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Applies a rotation by `angle` about `center`, then a translation.
    pub fn transformed(&self, angle: f64, center: (f64, f64), shift: (f64, f64)) -> Minutia {
        let (s, c) = angle.sin_cos();
        let dx = self.x - center.0;
        let dy = self.y - center.1;
        Minutia {
            x: center.0 + c * dx - s * dy + shift.0,
            y: center.1 + s * dx + c * dy + shift.1,
            theta: wrap_2pi(self.theta + angle),
            kind: self.kind,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptorStage {
    Raw,
    Compressed,
    Quantized,
}

/// A per-minutia descriptor at one of three processing stages.
#[derive(Debug, Clone, PartialEq)]
pub enum Descriptor {
    Raw(Vec<f32>),
    Compressed(Vec<f32>),
    /// One codeword index per subquantizer.
    Quantized(Vec<u8>),
}

impl Descriptor {
    pub fn raw(values: Vec<f32>) -> Result<Self> {
        check_float_vec(&values, RAW_LEN)?;
        Ok(Descriptor::Raw(values))
    }

    pub fn compressed(values: Vec<f32>) -> Result<Self> {
        check_float_vec(&values, COMPRESSED_LEN)?;
        Ok(Descriptor::Compressed(values))
    }

    /// Quantized codes; the subquantizer count must divide the compressed length.
    pub fn quantized(codes: Vec<u8>) -> Result<Self> {
        if codes.is_empty() || COMPRESSED_LEN % codes.len() != 0 {
            return Err(invalid(format!(
                "{} codes do not split a {COMPRESSED_LEN}-value descriptor",
                codes.len()
            )));
        }
        Ok(Descriptor::Quantized(codes))
    }

    pub fn stage(&self) -> DescriptorStage {
        match self {
            Descriptor::Raw(_) => DescriptorStage::Raw,
            Descriptor::Compressed(_) => DescriptorStage::Compressed,
            Descriptor::Quantized(_) => DescriptorStage::Quantized,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Descriptor::Raw(v) | Descriptor::Compressed(v) => v.len(),
            Descriptor::Quantized(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Float values for raw and compressed descriptors.
    pub fn values(&self) -> Option<&[f32]> {
        match self {
            Descriptor::Raw(v) | Descriptor::Compressed(v) => Some(v),
            Descriptor::Quantized(_) => None,
        }
    }

    pub fn codes(&self) -> Option<&[u8]> {
        match self {
            Descriptor::Quantized(c) => Some(c),
            _ => None,
        }
    }
}

fn check_float_vec(values: &[f32], expected: usize) -> Result<()> {
    if values.len() != expected {
        return Err(Error::LengthMismatch { expected, actual: values.len() });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("descriptor values must be finite"));
    }
    Ok(())
}

/// Which pipeline produced a minutiae template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    /// Latent minutiae set 1 (STFT-enhanced image).
    LatentStft,
    /// Latent minutiae set 3 (enhancement stand-in image).
    LatentEnhanced,
    /// Latent minutiae set 6 (majority vote over sets 1-5).
    LatentCommon,
    /// Reference print minutiae.
    Reference,
    /// Examiner-edited minutiae.
    Manual,
}

impl SourceTag {
    pub(crate) fn code(self) -> u8 {
        match self {
            SourceTag::LatentStft => 1,
            SourceTag::LatentEnhanced => 3,
            SourceTag::LatentCommon => 6,
            SourceTag::Reference => 10,
            SourceTag::Manual => 20,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => SourceTag::LatentStft,
            3 => SourceTag::LatentEnhanced,
            6 => SourceTag::LatentCommon,
            10 => SourceTag::Reference,
            20 => SourceTag::Manual,
            _ => return None,
        })
    }
}

/// Real minutiae with one compressed descriptor each.
#[derive(Debug, Clone, PartialEq)]
pub struct MinutiaeTemplate {
    minutiae: Vec<Minutia>,
    descriptors: Vec<Descriptor>,
    source: SourceTag,
}

impl MinutiaeTemplate {
    pub fn new(minutiae: Vec<Minutia>, descriptors: Vec<Descriptor>, source: SourceTag) -> Result<Self> {
        if minutiae.len() != descriptors.len() {
            return Err(Error::LengthMismatch { expected: minutiae.len(), actual: descriptors.len() });
        }
        if minutiae.iter().any(|m| m.kind != MinutiaKind::Real) {
            return Err(invalid("minutiae template holds real minutiae only"));
        }
        if descriptors.iter().any(|d| d.stage() != DescriptorStage::Compressed) {
            return Err(invalid("minutiae template descriptors must be compressed"));
        }
        Ok(MinutiaeTemplate { minutiae, descriptors, source })
    }

    pub fn empty(source: SourceTag) -> Self {
        MinutiaeTemplate { minutiae: Vec::new(), descriptors: Vec::new(), source }
    }

    pub fn minutiae(&self) -> &[Minutia] {
        &self.minutiae
    }

    pub fn descriptors(&self) -> &[Descriptor] {
        &self.descriptors
    }

    pub fn source(&self) -> SourceTag {
        self.source
    }

    pub fn len(&self) -> usize {
        self.minutiae.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minutiae.is_empty()
    }
}

/// Virtual minutiae with descriptors that all share one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureTemplate {
    minutiae: Vec<Minutia>,
    descriptors: Vec<Descriptor>,
}

impl TextureTemplate {
    pub fn new(minutiae: Vec<Minutia>, descriptors: Vec<Descriptor>) -> Result<Self> {
        if minutiae.len() != descriptors.len() {
            return Err(Error::LengthMismatch { expected: minutiae.len(), actual: descriptors.len() });
        }
        if minutiae.iter().any(|m| m.kind != MinutiaKind::Virtual) {
            return Err(invalid("texture template holds virtual minutiae only"));
        }
        if let Some(first) = descriptors.first() {
            let stage = first.stage();
            if stage == DescriptorStage::Raw {
                return Err(invalid("texture descriptors must be compressed or quantized"));
            }
            if descriptors.iter().any(|d| d.stage() != stage || d.len() != first.len()) {
                return Err(invalid("texture descriptors must share one stage and length"));
            }
        }
        Ok(TextureTemplate { minutiae, descriptors })
    }

    pub fn empty() -> Self {
        TextureTemplate { minutiae: Vec::new(), descriptors: Vec::new() }
    }

    pub fn minutiae(&self) -> &[Minutia] {
        &self.minutiae
    }

    pub fn descriptors(&self) -> &[Descriptor] {
        &self.descriptors
    }

    /// Stage of the descriptors, `None` when empty.
    pub fn stage(&self) -> Option<DescriptorStage> {
        self.descriptors.first().map(Descriptor::stage)
    }

    pub fn len(&self) -> usize {
        self.minutiae.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minutiae.is_empty()
    }
}

/// Per-component comparison scores for one reference.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentScores {
    pub minutiae: [f64; 3],
    pub texture: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub reference_id: String,
    pub fused_score: f64,
    pub scores: ComponentScores,
}

/// Total order used for candidate lists: score descending, then id ascending.
pub fn candidate_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.fused_score
        .total_cmp(&a.fused_score)
        .then_with(|| a.reference_id.cmp(&b.reference_id))
}

/// Ranked search result of bounded length.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CandidateList {
    entries: Vec<Candidate>,
}

impl CandidateList {
    /// Sorts the candidates and keeps the best `k`.
    pub fn from_unsorted(mut entries: Vec<Candidate>, k: usize) -> Self {
        entries.sort_by(candidate_order);
        entries.truncate(k);
        CandidateList { entries }
    }

    pub fn entries(&self) -> &[Candidate] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<Candidate> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
