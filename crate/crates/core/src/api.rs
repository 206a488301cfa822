//! JSON payloads exchanged between the HTTP service and its clients.

use serde::{Deserialize, Serialize};

use crate::model::{CandidateList, Minutia};
use crate::ridge::RidgeFields;
use crate::search::DetailedCandidate;

/// A minutia as the examiner sees it: position and direction only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinutiaPoint {
    pub x: f64,
    pub y: f64,
    /// Radians in `[0, 2π)`, y axis pointing down.
    pub theta: f64,
}

impl From<&Minutia> for MinutiaPoint {
    fn from(m: &Minutia) -> Self {
        MinutiaPoint { x: m.x, y: m.y, theta: m.theta }
    }
}

impl MinutiaPoint {
    pub fn to_minutia(self) -> Minutia {
        Minutia::real(self.x, self.y, self.theta)
    }
}

/// Block-wise ridge fields for drawing the overlay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldsView {
    pub rows: usize,
    pub cols: usize,
    pub block_size: usize,
    /// Row-major, radians in `[0, π)`.
    pub orientation: Vec<f64>,
    pub spacing: Vec<f64>,
    pub quality: Vec<f64>,
    pub roi: Vec<bool>,
}

impl From<&RidgeFields> for FieldsView {
    fn from(f: &RidgeFields) -> Self {
        FieldsView {
            rows: f.rows,
            cols: f.cols,
            block_size: f.block_size,
            orientation: f.orientation.clone(),
            spacing: f.spacing.clone(),
            quality: f.quality.clone(),
            roi: f.roi.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseView {
    pub id: String,
    /// Bumped on every accepted minutiae edit.
    pub version: u64,
    pub width: usize,
    pub height: usize,
    /// Binary PGM of the latent, base64.
    pub image_pgm: String,
    pub minutiae: Vec<MinutiaPoint>,
    pub fields: FieldsView,
}

/// Replacement minutiae list; `version` must equal the case's current version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinutiaeEdit {
    pub version: u64,
    pub minutiae: Vec<MinutiaPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub id: String,
    pub version: u64,
    pub minutiae: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSearchResponse {
    pub case_id: String,
    pub version: u64,
    pub candidates: Vec<DetailedCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub candidates: CandidateList,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrollResponse {
    pub id: String,
    pub minutiae: usize,
    pub virtual_minutiae: usize,
    pub gallery_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
