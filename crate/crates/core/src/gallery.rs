//! Persisted reference gallery: a manifest, one template file per reference
//! and the models the templates were built with.
//!
//! ```text
//! gallery/
//!   manifest.toml
//!   models/compressor.bin
//!   models/codebook.bin
//!   templates/<id>.lft
//! ```

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{format_err, invalid, Error, Result};
use crate::extract::{Models, ReferenceTemplates};
use crate::format::TemplateSet;
use crate::model::DescriptorStage;

pub const MANIFEST_FILE: &str = "manifest.toml";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Template file, relative to the gallery directory.
    pub template: PathBuf,
    /// Source image, if kept.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    /// Model directory, relative to the gallery directory.
    pub models: PathBuf,
    #[serde(default, rename = "reference")]
    pub references: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryEntry {
    pub id: String,
    pub templates: ReferenceTemplates,
    pub image: Option<PathBuf>,
}

/// In-memory gallery. Read-only once built; searches borrow it.
#[derive(Debug, Clone)]
pub struct GalleryIndex {
    entries: Vec<GalleryEntry>,
    by_id: HashMap<String, usize>,
    models: Arc<Models>,
    root: Option<PathBuf>,
}

fn file_stem_for(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' }).collect()
}

impl GalleryIndex {
    pub fn new(models: Arc<Models>) -> Self {
        GalleryIndex { entries: Vec::new(), by_id: HashMap::new(), models, root: None }
    }

    pub fn models(&self) -> &Arc<Models> {
        &self.models
    }

    pub fn entries(&self) -> &[GalleryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&GalleryEntry> {
        self.by_id.get(id).map(|&i| &self.entries[i])
    }

    /// Directory the gallery was loaded from or saved to.
    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    /// Absolute path of a reference's source image, if recorded.
    pub fn image_path(&self, id: &str) -> Option<PathBuf> {
        let img = self.get(id)?.image.as_ref()?;
        Some(match &self.root {
            Some(root) if img.is_relative() => root.join(img),
            _ => img.clone(),
        })
    }

    pub fn insert(&mut self, id: impl Into<String>, templates: ReferenceTemplates, image: Option<PathBuf>) -> Result<()> {
        let id = id.into();
        if id.is_empty() {
            return Err(invalid("reference id must not be empty"));
        }
        if self.by_id.contains_key(&id) {
            return Err(invalid(format!("duplicate reference id {id}")));
        }
        let m = self.models.codebook.subquantizers();
        for d in templates.texture.descriptors() {
            if d.stage() != DescriptorStage::Quantized || d.len() != m {
                return Err(invalid(format!("reference {id}: texture descriptors must be {m} codebook indices")));
            }
        }
        self.by_id.insert(id.clone(), self.entries.len());
        self.entries.push(GalleryEntry { id, templates, image });
        Ok(())
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            version: MANIFEST_VERSION,
            models: PathBuf::from("models"),
            references: self
                .entries
                .iter()
                .map(|e| ManifestEntry {
                    id: e.id.clone(),
                    template: PathBuf::from("templates").join(format!("{}.lft", file_stem_for(&e.id))),
                    image: e.image.clone(),
                })
                .collect(),
        }
    }

    /// Writes models, templates and manifest under `dir`.
    pub fn save(&mut self, dir: &Path) -> Result<()> {
        let manifest = self.manifest();
        self.models.save(&dir.join(&manifest.models))?;
        std::fs::create_dir_all(dir.join("templates"))?;
        let mut seen = HashMap::new();
        for (entry, rec) in self.entries.iter().zip(&manifest.references) {
            if let Some(other) = seen.insert(rec.template.clone(), &entry.id) {
                return Err(invalid(format!("ids {other} and {} map to the same file name", entry.id)));
            }
            entry.templates.to_set().save(&dir.join(&rec.template))?;
        }
        let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(dir.join(MANIFEST_FILE), text)?;
        self.root = Some(dir.to_path_buf());
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| format_err(e.to_string()))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(format_err(format!("unsupported manifest version {}", manifest.version)));
        }
        let models = Arc::new(Models::load(&dir.join(&manifest.models))?);
        let mut index = GalleryIndex::new(models);
        for rec in manifest.references {
            let set = TemplateSet::load(&dir.join(&rec.template))?;
            let templates = ReferenceTemplates::from_set(set)?;
            index.insert(rec.id, templates, rec.image)?;
        }
        index.root = Some(dir.to_path_buf());
        Ok(index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Descriptor, Minutia, MinutiaeTemplate, SourceTag, TextureTemplate};
    use std::sync::OnceLock;

    fn models() -> Arc<Models> {
        static M: OnceLock<Arc<Models>> = OnceLock::new();
        M.get_or_init(|| Arc::new(Models::untrained(5).unwrap())).clone()
    }

    fn reference(seed: u8, m: usize) -> ReferenceTemplates {
        let minutiae = MinutiaeTemplate::new(
            vec![Minutia::real(10.0 + f64::from(seed), 20.0, 1.0)],
            vec![Descriptor::compressed(vec![0.1; 96]).unwrap()],
            SourceTag::Reference,
        )
        .unwrap();
        let texture = TextureTemplate::new(vec![Minutia::virtual_at(32.0, 32.0, 0.5)], vec![Descriptor::quantized(vec![seed; m]).unwrap()]).unwrap();
        ReferenceTemplates { minutiae, texture }
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = GalleryIndex::new(models());
        g.insert("a/1", reference(1, 16), Some(PathBuf::from("img/a.png"))).unwrap();
        g.insert("b", reference(2, 16), None).unwrap();
        g.save(dir.path()).unwrap();
        let back = GalleryIndex::load(dir.path()).unwrap();
        assert_eq!(back.entries(), g.entries());
        assert_eq!(back.image_path("a/1").unwrap(), dir.path().join("img/a.png"));
        assert!(back.image_path("b").is_none());
        assert_eq!(back.models().as_ref(), models().as_ref());
    }

    #[test]
    fn rejects_duplicates_and_wrong_code_length() {
        let mut g = GalleryIndex::new(models());
        g.insert("x", reference(1, 16), None).unwrap();
        assert!(g.insert("x", reference(2, 16), None).is_err());
        assert!(g.insert("y", reference(2, 8), None).is_err());
        assert!(g.insert("", reference(2, 16), None).is_err());
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn colliding_file_names_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = GalleryIndex::new(models());
        g.insert("a b", reference(1, 16), None).unwrap();
        g.insert("a_b", reference(2, 16), None).unwrap();
        assert!(g.save(dir.path()).is_err());
    }
}
