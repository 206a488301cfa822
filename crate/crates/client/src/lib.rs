//! Async client for the lfid HTTP service.

use reqwest::{Method, RequestBuilder};
pub use reqwest::StatusCode;
use serde::de::DeserializeOwned;

use lfid_core::api::{CaseSearchResponse, CaseSummary, CaseView, EnrollResponse, ErrorBody, MinutiaPoint, MinutiaeEdit, SearchResponse};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("server replied {status}: {message}")]
    Status { status: StatusCode, message: String },
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Status { status, .. } => Some(*status),
            ClientError::Transport(e) => e.status(),
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Client { base: base.into().trim_end_matches('/').to_string(), http: reqwest::Client::new() }
    }

    fn request(&self, method: Method, path: &str) -> RequestBuilder {
        self.http.request(method, format!("{}{}", self.base, path))
    }

    async fn send(&self, req: RequestBuilder) -> Result<reqwest::Response> {
        let resp = req.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().await.unwrap_or_default();
        let message = serde_json::from_str::<ErrorBody>(&text).map(|b| b.error).unwrap_or(text);
        Err(ClientError::Status { status, message })
    }

    async fn json<T: DeserializeOwned>(&self, req: RequestBuilder) -> Result<T> {
        Ok(self.send(req).await?.json().await?)
    }

    pub async fn health(&self) -> Result<()> {
        self.send(self.request(Method::GET, "/health")).await.map(drop)
    }

    /// Opens a case from an encoded image (PNG or PGM).
    pub async fn create_case(&self, image: Vec<u8>, id: Option<&str>) -> Result<CaseSummary> {
        let mut req = self.request(Method::POST, "/cases").body(image);
        if let Some(id) = id {
            req = req.query(&[("id", id)]);
        }
        self.json(req).await
    }

    pub async fn case(&self, id: &str) -> Result<CaseView> {
        self.json(self.request(Method::GET, &format!("/cases/{id}"))).await
    }

    pub async fn put_minutiae(&self, id: &str, version: u64, minutiae: Vec<MinutiaPoint>) -> Result<CaseSummary> {
        let req = self.request(Method::PUT, &format!("/cases/{id}/minutiae")).json(&MinutiaeEdit { version, minutiae });
        self.json(req).await
    }

    pub async fn search_case(&self, id: &str, topk: usize) -> Result<CaseSearchResponse> {
        self.json(self.request(Method::POST, &format!("/cases/{id}/search")).query(&[("topk", topk)])).await
    }

    pub async fn search_image(&self, image: Vec<u8>, topk: usize) -> Result<SearchResponse> {
        self.json(self.request(Method::POST, "/search").query(&[("topk", topk)]).body(image)).await
    }

    pub async fn enroll(&self, id: &str, image: Vec<u8>) -> Result<EnrollResponse> {
        self.json(self.request(Method::PUT, &format!("/references/{id}")).body(image)).await
    }

    /// Binary PGM of a reference print.
    pub async fn reference_image(&self, id: &str) -> Result<Vec<u8>> {
        Ok(self.send(self.request(Method::GET, &format!("/references/{id}/image"))).await?.bytes().await?.to_vec())
    }
}
