//! Latent fingerprint identification: template extraction, comparison and
//! gallery search.

pub mod api;
pub mod compressor;
pub mod config;
pub mod descriptor;
pub mod error;
pub mod extract;
pub mod gallery;
pub mod format;
pub mod image;
pub mod matcher;
pub mod minutiae_map;
pub mod model;
pub mod pq;
pub mod preprocess;
pub mod ridge;
pub mod search;
pub mod skeleton;
pub mod synthetic;

pub use error::{Error, Result};
