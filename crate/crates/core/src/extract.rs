//! Latent and reference template construction.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;

use crate::compressor::{compress_descriptor, train_compressor, CompressorModel, TrainConfig, TrainReport};
use crate::config::Config;
use crate::descriptor::{extract_descriptors, PatchSpec};
use crate::error::Result;
use crate::format::TemplateSet;
use crate::image::Gray;
use crate::minutiae_map::vote_common_minutiae;
use crate::model::{flow_to_orientation, Descriptor, Minutia, MinutiaeTemplate, SourceTag, TextureTemplate};
use crate::pq::{quantize_descriptor, train_pq, PqCodebook, PqTrainReport};
use crate::preprocess::{contrast_gabor, contrast_stft, decomposed_gabor, enhance, stft_enhance, ProcessedImage};
use crate::ridge::{estimate_ridge_fields, gradient_fields, segment_roi, RidgeDictionary, RidgeFields};
use crate::skeleton::detect_minutiae_with;

pub const COMPRESSOR_FILE: &str = "compressor.bin";
pub const CODEBOOK_FILE: &str = "codebook.bin";

/// Trained descriptor compressor and texture codebook.
#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub compressor: CompressorModel,
    pub codebook: PqCodebook,
}

impl Models {
    pub fn load(dir: &Path) -> Result<Self> {
        let compressor = CompressorModel::read_from(BufReader::new(File::open(dir.join(COMPRESSOR_FILE))?))?;
        let codebook = PqCodebook::read_from(BufReader::new(File::open(dir.join(CODEBOOK_FILE))?))?;
        Ok(Models { compressor, codebook })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.compressor.write_to(BufWriter::new(File::create(dir.join(COMPRESSOR_FILE))?))?;
        self.codebook.write_to(BufWriter::new(File::create(dir.join(CODEBOOK_FILE))?))?;
        Ok(())
    }

    /// Randomly initialised compressor with a codebook fitted to its outputs
    /// on random inputs. Good enough for plumbing and tests.
    pub fn untrained(seed: u64) -> Result<Self> {
        let compressor = CompressorModel::random(seed);
        let mut rng = crate::synthetic::rng(seed);
        let corpus = (0..2 * crate::model::PQ_CENTROIDS)
            .map(|_| compressor.compress_values(&crate::synthetic::random_unit(crate::model::RAW_LEN, &mut rng)))
            .collect::<Result<Vec<_>>>()?;
        let (codebook, _) = crate::pq::train_pq(&corpus, crate::pq::DEFAULT_SUBQUANTIZERS, seed)?;
        Ok(Models { compressor, codebook })
    }

    /// Texture distance threshold: the config override, else the calibrated value.
    pub fn d0(&self, config: &Config) -> f64 {
        config.texture.d0.unwrap_or(f64::from(self.codebook.d0()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VirtualMinutiaGrid {
    pub stride: usize,
    pub border_margin: usize,
}

impl Default for VirtualMinutiaGrid {
    fn default() -> Self {
        VirtualMinutiaGrid { stride: 32, border_margin: 16 }
    }
}

/// Lattice points whose whole `±border_margin` square lies in the ROI,
/// oriented along the flow of their block.
pub fn extract_virtual_minutiae(fields: &RidgeFields, grid: VirtualMinutiaGrid) -> Vec<Minutia> {
    let b = fields.block_size;
    if fields.roi_count() == 0 || grid.stride == 0 || b == 0 {
        return Vec::new();
    }
    let (w, h) = (fields.cols * b, fields.rows * b);
    let m = grid.border_margin;
    let inside = |x: usize, y: usize| {
        if x < m || y < m {
            return false;
        }
        let (c0, c1, r0, r1) = ((x - m) / b, (x + m) / b, (y - m) / b, (y + m) / b);
        if c1 >= fields.cols || r1 >= fields.rows {
            return false;
        }
        (r0..=r1).all(|r| (c0..=c1).all(|c| fields.roi[fields.index(r, c)]))
    };
    let mut out = Vec::new();
    for y in (0..h).step_by(grid.stride) {
        for x in (0..w).step_by(grid.stride) {
            if inside(x, y) {
                let flow = fields.orientation[fields.index(y / b, x / b)];
                out.push(Minutia::virtual_at(x as f64, y as f64, flow_to_orientation(flow)));
            }
        }
    }
    out
}

/// The three minutiae templates and one texture template of a latent.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTemplates {
    pub minutiae: [MinutiaeTemplate; 3],
    pub texture: TextureTemplate,
}

impl LatentTemplates {
    pub fn empty() -> Self {
        LatentTemplates {
            minutiae: [
                MinutiaeTemplate::empty(SourceTag::LatentStft),
                MinutiaeTemplate::empty(SourceTag::LatentEnhanced),
                MinutiaeTemplate::empty(SourceTag::LatentCommon),
            ],
            texture: TextureTemplate::empty(),
        }
    }

    pub fn to_set(&self) -> TemplateSet {
        TemplateSet { minutiae: self.minutiae.to_vec(), texture: Some(self.texture.clone()) }
    }

    pub fn from_set(set: TemplateSet) -> Result<Self> {
        let texture = set.texture.unwrap_or_else(TextureTemplate::empty);
        let minutiae: [MinutiaeTemplate; 3] = set
            .minutiae
            .try_into()
            .map_err(|v: Vec<_>| crate::error::format_err(format!("latent file has {} minutiae templates, expected 3", v.len())))?;
        Ok(LatentTemplates { minutiae, texture })
    }
}

/// Intermediate images and minutiae sets, kept for inspection.
#[derive(Debug, Clone)]
pub struct LatentArtifacts {
    pub enhanced: ProcessedImage,
    pub fields: RidgeFields,
    /// Processed images 1 to 5, in detection order.
    pub processed: Vec<ProcessedImage>,
    /// Minutiae sets 1 to 6.
    pub sets: Vec<Vec<Minutia>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTemplates {
    pub minutiae: MinutiaeTemplate,
    pub texture: TextureTemplate,
}

impl ReferenceTemplates {
    pub fn to_set(&self) -> TemplateSet {
        TemplateSet::reference(self.minutiae.clone(), self.texture.clone())
    }

    pub fn from_set(set: TemplateSet) -> Result<Self> {
        let TemplateSet { minutiae, texture } = set;
        match (<[MinutiaeTemplate; 1]>::try_from(minutiae), texture) {
            (Ok([m]), Some(t)) => Ok(ReferenceTemplates { minutiae: m, texture: t }),
            _ => Err(crate::error::format_err("reference file must hold one minutiae and one texture template")),
        }
    }
}

/// Builds templates with fixed models and configuration.
#[derive(Debug, Clone)]
pub struct Extractor {
    config: Config,
    models: std::sync::Arc<Models>,
    dict: RidgeDictionary,
    patches: PatchSpec,
}

impl Extractor {
    pub fn new(config: Config, models: std::sync::Arc<Models>) -> Self {
        Extractor { config, models, dict: RidgeDictionary::standard(), patches: PatchSpec::default() }
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn models(&self) -> &Models {
        &self.models
    }

    pub fn grid(&self) -> VirtualMinutiaGrid {
        VirtualMinutiaGrid { stride: self.config.texture.stride, border_margin: self.config.texture.border_margin }
    }

    fn compressed(&self, image: &Gray, ms: &[Minutia]) -> Result<Vec<Descriptor>> {
        extract_descriptors(image, ms, &self.patches)
            .iter()
            .map(|d| compress_descriptor(&self.models.compressor, d))
            .collect()
    }

    /// Descriptors for a minutiae list on the given image, as a template.
    pub fn minutiae_template(&self, image: &Gray, ms: Vec<Minutia>, source: SourceTag) -> Result<MinutiaeTemplate> {
        let ds = self.compressed(image, &ms)?;
        MinutiaeTemplate::new(ms, ds, source)
    }

    pub fn latent(&self, image: &Gray) -> Result<LatentTemplates> {
        Ok(self.latent_with_artifacts(image)?.0)
    }

    pub fn latent_with_artifacts(&self, raw: &Gray) -> Result<(LatentTemplates, LatentArtifacts)> {
        let cfg = &self.config;
        let enhanced = enhance(raw);
        let fields = segment_roi(&estimate_ridge_fields(&enhanced.pixels, raw, &self.dict, cfg.ridge.alpha)?, cfg.ridge.roi_threshold);
        let processed = vec![
            stft_enhance(raw),
            contrast_stft(raw),
            enhanced.clone(),
            decomposed_gabor(raw, &fields),
            contrast_gabor(raw, &fields),
        ];
        let params = cfg.encoder.params()?;
        let mut sets: Vec<Vec<Minutia>> = processed
            .iter()
            .map(|p| detect_minutiae_with(&p.pixels, &fields, params, cfg.encoder.threshold))
            .collect();
        sets.push(vote_common_minutiae(&sets)?);
        let img = &enhanced.pixels;
        let tags = [SourceTag::LatentStft, SourceTag::LatentEnhanced, SourceTag::LatentCommon];
        let kept = [0, 2, 5];
        let mut minutiae = Vec::with_capacity(3);
        for (k, tag) in kept.into_iter().zip(tags) {
            minutiae.push(self.minutiae_template(img, sets[k].clone(), tag)?);
        }
        let virt = extract_virtual_minutiae(&fields, self.grid());
        let texture = TextureTemplate::new(virt.clone(), self.compressed(img, &virt)?)?;
        let templates = LatentTemplates { minutiae: minutiae.try_into().expect("three templates"), texture };
        Ok((templates, LatentArtifacts { enhanced, fields, processed, sets }))
    }

    /// Raw descriptors for training: detected minutiae plus `extra` random
    /// points inside the ROI.
    pub fn training_descriptors(&self, raw: &Gray, extra: usize, seed: u64) -> Result<Vec<Vec<f32>>> {
        let cfg = &self.config;
        let fields = gradient_fields(raw, &self.dict);
        let mut ms = detect_minutiae_with(raw, &fields, cfg.encoder.params()?, cfg.encoder.threshold);
        let roi: Vec<usize> = (0..fields.roi.len()).filter(|&i| fields.roi[i]).collect();
        if !roi.is_empty() {
            let mut rng = crate::synthetic::rng(seed);
            let b = fields.block_size as f64;
            for _ in 0..extra {
                let i = roi[rng.random_range(0..roi.len())];
                let (r, c) = (i / fields.cols, i % fields.cols);
                let x = (c as f64 + rng.random::<f64>()) * b;
                let y = (r as f64 + rng.random::<f64>()) * b;
                ms.push(Minutia::real(x, y, rng.random_range(0.0..std::f64::consts::TAU)));
            }
        }
        Ok(extract_descriptors(raw, &ms, &self.patches).into_iter().filter_map(|d| d.values().map(<[f32]>::to_vec)).collect())
    }

    pub fn reference(&self, raw: &Gray) -> Result<ReferenceTemplates> {
        let cfg = &self.config;
        let fields = gradient_fields(raw, &self.dict);
        let ms = detect_minutiae_with(raw, &fields, cfg.encoder.params()?, cfg.encoder.threshold);
        let minutiae = self.minutiae_template(raw, ms, SourceTag::Reference)?;
        let virt = extract_virtual_minutiae(&fields, self.grid());
        let codes = self
            .compressed(raw, &virt)?
            .iter()
            .map(|d| quantize_descriptor(&self.models.codebook, d))
            .collect::<Result<Vec<_>>>()?;
        Ok(ReferenceTemplates { minutiae, texture: TextureTemplate::new(virt, codes)? })
    }
}

/// Trains the compressor on raw descriptors, then the codebook on their
/// compressed forms.
pub fn train_models(corpus: &[Vec<f32>], train: &TrainConfig, subquantizers: usize) -> Result<(Models, TrainReport, PqTrainReport)> {
    let (compressor, report) = train_compressor(corpus, train)?;
    let compressed = corpus.iter().map(|v| compressor.compress_values(v)).collect::<Result<Vec<_>>>()?;
    let (codebook, pq_report) = train_pq(&compressed, subquantizers, train.seed)?;
    Ok((Models { compressor, codebook }, report, pq_report))
}

pub fn build_latent_templates(image: &Gray, extractor: &Extractor) -> Result<LatentTemplates> {
    extractor.latent(image)
}

pub fn build_reference_template(image: &Gray, extractor: &Extractor) -> Result<ReferenceTemplates> {
    extractor.reference(image)
}
