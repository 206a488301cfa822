//! HTTP/JSON service over a loaded gallery.
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | GET | `/health` | | `ok` |
//! | POST | `/cases?id=ID` | encoded image | `CaseSummary` |
//! | GET | `/cases/{id}` | | `CaseView` |
//! | PUT | `/cases/{id}/minutiae` | `MinutiaeEdit` | `CaseSummary` |
//! | POST | `/cases/{id}/search?topk=K` | | `CaseSearchResponse` |
//! | POST | `/search?topk=K` | encoded image | `SearchResponse` |
//! | PUT | `/references/{id}` | encoded image | `EnrollResponse` |
//! | GET | `/references/{id}/image` | | binary PGM |
//!
//! Errors reply with an `ErrorBody` and status 400, 404, 409 or 500.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use base64::Engine as _;
use serde::Deserialize;

use lfid_core::api::{CaseSearchResponse, CaseSummary, CaseView, EnrollResponse, ErrorBody, FieldsView, MinutiaPoint, MinutiaeEdit, SearchResponse};
use lfid_core::extract::{Extractor, LatentTemplates};
use lfid_core::gallery::GalleryIndex;
use lfid_core::image::Gray;
use lfid_core::model::{Minutia, SourceTag};
use lfid_core::ridge::RidgeFields;
use lfid_core::search::{search_gallery, search_gallery_detailed};

/// A latent under examination.
#[derive(Debug, Clone)]
pub struct Case {
    pub image: Gray,
    /// Image the descriptors of edited minutiae are taken from.
    pub enhanced: Gray,
    pub fields: RidgeFields,
    pub minutiae: Vec<Minutia>,
    pub templates: LatentTemplates,
    pub version: u64,
}

pub struct AppState {
    extractor: Extractor,
    gallery: RwLock<Arc<GalleryIndex>>,
    /// Where enrolled images and templates are persisted, if anywhere.
    gallery_dir: Option<PathBuf>,
    cases: RwLock<HashMap<String, Case>>,
    next_case: AtomicU64,
}

impl AppState {
    pub fn new(extractor: Extractor, gallery: GalleryIndex) -> Self {
        let gallery_dir = gallery.root().map(PathBuf::from);
        AppState {
            extractor,
            gallery: RwLock::new(Arc::new(gallery)),
            gallery_dir,
            cases: RwLock::new(HashMap::new()),
            next_case: AtomicU64::new(1),
        }
    }

    pub fn gallery(&self) -> Arc<GalleryIndex> {
        self.gallery.read().expect("gallery lock").clone()
    }
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    NotFound(String),
    Conflict(String),
    Internal(String),
}

impl From<lfid_core::Error> for ApiError {
    fn from(e: lfid_core::Error) -> Self {
        use lfid_core::Error as E;
        match e {
            E::NotFound(m) => ApiError::NotFound(m),
            E::Io(_) => ApiError::Internal(e.to_string()),
            other => ApiError::BadRequest(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, error) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (status, Json(ErrorBody { error })).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::Internal(e.to_string()))?
}

fn decode_image(body: &[u8]) -> ApiResult<Gray> {
    if body.is_empty() {
        return Err(ApiError::BadRequest("empty image body".into()));
    }
    Ok(Gray::from_encoded_bytes(body)?)
}

fn valid_id(id: &str) -> ApiResult<()> {
    if id.is_empty() || id.len() > 128 || !id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
        return Err(ApiError::BadRequest(format!("invalid id {id:?}")));
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct TopK {
    topk: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct NewCase {
    id: Option<String>,
}

fn summary(id: &str, case: &Case) -> CaseSummary {
    CaseSummary { id: id.to_string(), version: case.version, minutiae: case.minutiae.len() }
}

async fn create_case(State(st): State<Arc<AppState>>, Query(q): Query<NewCase>, body: Bytes) -> ApiResult<Json<CaseSummary>> {
    let id = match q.id {
        Some(id) => id,
        None => format!("case-{}", st.next_case.fetch_add(1, Ordering::Relaxed)),
    };
    valid_id(&id)?;
    let image = decode_image(&body)?;
    let st2 = st.clone();
    let case = blocking(move || {
        let (templates, art) = st2.extractor.latent_with_artifacts(&image)?;
        Ok(Case {
            minutiae: templates.minutiae[2].minutiae().to_vec(),
            image,
            enhanced: art.enhanced.pixels,
            fields: art.fields,
            templates,
            version: 1,
        })
    })
    .await?;
    let mut cases = st.cases.write().expect("cases lock");
    if cases.contains_key(&id) {
        return Err(ApiError::Conflict(format!("case {id} exists")));
    }
    let out = summary(&id, &case);
    cases.insert(id, case);
    Ok(Json(out))
}

fn case_of(st: &AppState, id: &str) -> ApiResult<Case> {
    st.cases.read().expect("cases lock").get(id).cloned().ok_or_else(|| ApiError::NotFound(format!("case {id}")))
}

async fn get_case(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<CaseView>> {
    let case = case_of(&st, &id)?;
    let pgm = case.image.to_pgm_bytes()?;
    Ok(Json(CaseView {
        id,
        version: case.version,
        width: case.image.width(),
        height: case.image.height(),
        image_pgm: base64::engine::general_purpose::STANDARD.encode(pgm),
        minutiae: case.minutiae.iter().map(MinutiaPoint::from).collect(),
        fields: FieldsView::from(&case.fields),
    }))
}

async fn put_minutiae(State(st): State<Arc<AppState>>, Path(id): Path<String>, Json(edit): Json<MinutiaeEdit>) -> ApiResult<Json<CaseSummary>> {
    let case = case_of(&st, &id)?;
    let (w, h) = (case.image.width() as f64, case.image.height() as f64);
    if let Some(p) = edit.minutiae.iter().find(|p| !(p.x >= 0.0 && p.y >= 0.0 && p.x < w && p.y < h && p.theta.is_finite())) {
        return Err(ApiError::BadRequest(format!("minutia ({}, {}) lies outside the image", p.x, p.y)));
    }
    if edit.version != case.version {
        return Err(ApiError::Conflict(format!("case {id} is at version {}, edit is against {}", case.version, edit.version)));
    }
    let minutiae: Vec<Minutia> = edit.minutiae.iter().map(|p| p.to_minutia()).collect();
    let st2 = st.clone();
    let enhanced = case.enhanced.clone();
    let ms = minutiae.clone();
    let manual = blocking(move || Ok(st2.extractor.minutiae_template(&enhanced, ms, SourceTag::Manual)?)).await?;
    let mut cases = st.cases.write().expect("cases lock");
    let current = cases.get_mut(&id).ok_or_else(|| ApiError::NotFound(format!("case {id}")))?;
    if current.version != edit.version {
        return Err(ApiError::Conflict(format!("case {id} changed during the edit")));
    }
    current.minutiae = minutiae;
    current.templates.minutiae[2] = manual;
    current.version += 1;
    Ok(Json(summary(&id, current)))
}

fn top_k(st: &AppState, q: &TopK) -> ApiResult<usize> {
    let k = q.topk.unwrap_or(st.extractor.config().search.top_k);
    if k == 0 || k > 10_000 {
        return Err(ApiError::BadRequest(format!("topk must be in 1..=10000, got {k}")));
    }
    Ok(k)
}

async fn search_case(State(st): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<TopK>) -> ApiResult<Json<CaseSearchResponse>> {
    let k = top_k(&st, &q)?;
    let case = case_of(&st, &id)?;
    let gallery = st.gallery();
    let config = *st.extractor.config();
    let version = case.version;
    let candidates = blocking(move || Ok(search_gallery_detailed(&case.templates, &gallery, k, &config)?)).await?;
    Ok(Json(CaseSearchResponse { case_id: id, version, candidates }))
}

async fn search_image(State(st): State<Arc<AppState>>, Query(q): Query<TopK>, body: Bytes) -> ApiResult<Json<SearchResponse>> {
    let k = top_k(&st, &q)?;
    let image = decode_image(&body)?;
    let st2 = st.clone();
    let candidates = blocking(move || {
        let probe = st2.extractor.latent(&image)?;
        Ok(search_gallery(&probe, &st2.gallery(), k, st2.extractor.config())?)
    })
    .await?;
    Ok(Json(SearchResponse { candidates }))
}

async fn enroll(State(st): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<EnrollResponse>> {
    valid_id(&id)?;
    let image = decode_image(&body)?;
    let st2 = st.clone();
    blocking(move || {
        let templates = st2.extractor.reference(&image)?;
        let (minutiae, virtual_minutiae) = (templates.minutiae.len(), templates.texture.len());
        // One writer at a time; searches keep using the snapshot they hold.
        let mut slot = st2.gallery.write().expect("gallery lock");
        let mut next = GalleryIndex::clone(&slot);
        if next.get(&id).is_some() {
            return Err(ApiError::Conflict(format!("reference {id} exists")));
        }
        let image_path = match &st2.gallery_dir {
            Some(dir) => {
                let rel = PathBuf::from("images").join(format!("{id}.pgm"));
                std::fs::create_dir_all(dir.join("images")).map_err(lfid_core::Error::from)?;
                image.save_pgm(&dir.join(&rel))?;
                Some(rel)
            }
            None => None,
        };
        next.insert(id.clone(), templates, image_path)?;
        if let Some(dir) = &st2.gallery_dir {
            next.save(dir)?;
        }
        let gallery_size = next.len();
        *slot = Arc::new(next);
        Ok(EnrollResponse { id, minutiae, virtual_minutiae, gallery_size })
    })
    .await
    .map(Json)
}

async fn reference_image(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let gallery = st.gallery();
    if gallery.get(&id).is_none() {
        return Err(ApiError::NotFound(format!("reference {id}")));
    }
    let path = gallery.image_path(&id).ok_or_else(|| ApiError::NotFound(format!("no image stored for reference {id}")))?;
    let bytes = blocking(move || Ok(Gray::load(&path)?.to_pgm_bytes()?)).await?;
    Ok(([(header::CONTENT_TYPE, "image/x-portable-graymap")], bytes).into_response())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/cases", post(create_case))
        .route("/cases/{id}", get(get_case))
        .route("/cases/{id}/minutiae", put(put_minutiae))
        .route("/cases/{id}/search", post(search_case))
        .route("/search", post(search_image))
        .route("/references/{id}", put(enroll))
        .route("/references/{id}/image", get(reference_image))
        .layer(axum::extract::DefaultBodyLimit::max(64 << 20))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr().ok(), "listening");
    axum::serve(listener, router(state)).await
}
