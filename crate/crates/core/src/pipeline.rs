//! End-to-end training and the persisted artifact set.
//!
//! Each grid order gets its own artifact directory holding the autoencoder,
//! the error histogram, the SVM model, the feature index and the effective
//! configuration they were trained with.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{
    block_samples, error_histogram_from_images, init_autoencoder, train_autoencoder, Autoencoder, ErrorHistogram,
    TrainConfig,
};
use crate::dataset::{load_image, mix_seed, DatasetManifest, GrayImage, Split};
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureRecord};
use crate::relevance::validate_reduction;
use crate::retrieval::{QueryOptions, RetrievalIndex, SearchScope, Similarity};
use crate::svm::{train_multiclass_detailed, MulticlassSvmModel, PairTraining, SvmParams};

pub const AUTOENCODER_FILE: &str = "autoencoder.bin";
pub const HISTOGRAM_FILE: &str = "histogram.bin";
pub const SVM_FILE: &str = "svm.bin";
pub const INDEX_FILE: &str = "index.bin";
pub const CONFIG_FILE: &str = "config.toml";

pub const MIN_GRID: usize = 2;
pub const MAX_GRID: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Grid order.
    pub k: usize,
    /// Reduction fraction used by `query`.
    pub d: f64,
    /// Side of the resampled autoencoder input block; `n = s^2`.
    pub s: usize,
    /// Hidden width.
    pub p: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub init_scale: f64,
    pub svm_c: f64,
    /// `None` means `1 / feature length`.
    pub svm_gamma: Option<f64>,
    pub svm_tol: f64,
    pub svm_max_passes: usize,
    pub seed: u64,
    /// Scoring threads per query.
    pub workers: usize,
    pub similarity: Similarity,
    pub scope: SearchScope,
    pub manifest: Option<PathBuf>,
    pub artifacts: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let ae = TrainConfig::default();
        Self {
            k: 4,
            d: 0.0,
            s: 16,
            p: 64,
            epochs: ae.epochs,
            learning_rate: ae.learning_rate,
            batch_size: ae.batch_size,
            init_scale: ae.init_scale,
            svm_c: 10.0,
            svm_gamma: None,
            svm_tol: 1e-3,
            svm_max_passes: 100,
            seed: 1,
            workers: 1,
            similarity: Similarity::Pearson,
            scope: SearchScope::All,
            manifest: None,
            artifacts: PathBuf::from("artifacts"),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(MIN_GRID..=MAX_GRID).contains(&self.k) {
            return Err(Error::InvalidParameter(format!(
                "k = {} outside {MIN_GRID}..={MAX_GRID}",
                self.k
            )));
        }
        validate_reduction(self.d)?;
        if self.s < 2 {
            return Err(Error::InvalidParameter(format!("block side s = {} must be >= 2", self.s)));
        }
        if self.p == 0 {
            return Err(Error::InvalidParameter("hidden width p must be >= 1".into()));
        }
        if self.p >= self.s * self.s {
            return Err(Error::NoCompression {
                n: self.s * self.s,
                p: self.p,
            });
        }
        if self.workers == 0 {
            return Err(Error::InvalidParameter("workers must be >= 1".into()));
        }
        self.train_config().validate()?;
        self.svm_params(1).validate()
    }

    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config fields are always representable in TOML")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed: mix_seed(self.seed, 1),
            init_scale: self.init_scale,
        }
    }

    pub fn svm_params(&self, dim: usize) -> SvmParams {
        SvmParams {
            c: self.svm_c,
            gamma: self.svm_gamma.unwrap_or(1.0 / dim.max(1) as f64),
            tol: self.svm_tol,
            max_passes: self.svm_max_passes,
        }
    }

    pub fn query_options(&self, m: usize) -> QueryOptions {
        QueryOptions {
            d: self.d,
            m,
            similarity: self.similarity,
            scope: self.scope,
        }
    }

    /// `<artifacts>/k<k>`.
    pub fn artifact_dir(&self, k: usize) -> PathBuf {
        self.artifacts.join(format!("k{k}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedArtifacts {
    pub autoencoder: Autoencoder,
    pub histogram: ErrorHistogram,
    pub svm: MulticlassSvmModel,
    pub index: RetrievalIndex,
}

impl TrainedArtifacts {
    pub fn k(&self) -> usize {
        self.index.k()
    }

    /// Writes the four artifact files plus `config` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, config: &PipelineConfig) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.autoencoder.save(dir.join(AUTOENCODER_FILE))?;
        self.histogram.save(dir.join(HISTOGRAM_FILE))?;
        self.svm.save(dir.join(SVM_FILE))?;
        self.index.save(dir.join(INDEX_FILE))?;
        config.save(dir.join(CONFIG_FILE))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let autoencoder = Autoencoder::load(dir.join(AUTOENCODER_FILE))?;
        let histogram = ErrorHistogram::load(dir.join(HISTOGRAM_FILE))?;
        let svm = MulticlassSvmModel::load(dir.join(SVM_FILE))?;
        let index = RetrievalIndex::load(dir.join(INDEX_FILE))?;
        if histogram.k() != index.k() {
            return Err(Error::Format(format!(
                "{}: histogram k = {} but index k = {}",
                dir.display(),
                histogram.k(),
                index.k()
            )));
        }
        Ok(Self {
            autoencoder,
            histogram,
            svm,
            index,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainingSummary {
    pub epoch_losses: Vec<f64>,
    pub class_counts: Vec<usize>,
    pub autoencoder_samples: usize,
    pub pairs: Vec<PairTraining>,
}

/// Loads every training image of `manifest`, keeping manifest positions.
pub fn load_training_images(manifest: &DatasetManifest) -> Result<Vec<(usize, usize, GrayImage)>> {
    let entries: Vec<_> = manifest.split(Split::Train).collect();
    if entries.is_empty() {
        return Err(Error::InvalidParameter("training split is empty".into()));
    }
    entries
        .par_iter()
        .map(|(id, e)| Ok((*id, e.class, load_image(manifest.resolve(e))?)))
        .collect()
}

/// Trains all artifacts for grid order `cfg.k`.
pub fn train_pipeline(manifest: &DatasetManifest, cfg: &PipelineConfig) -> Result<(TrainedArtifacts, TrainingSummary)> {
    cfg.validate()?;
    let k = cfg.k;
    let images = load_training_images(manifest).map_err(|e| e.in_stage("load"))?;
    let num_classes = manifest.num_classes();

    let (autoencoder, epoch_losses, autoencoder_samples) = (|| {
        let per_image: Vec<Vec<Vec<f64>>> = images
            .par_iter()
            .map(|(_, _, img)| block_samples(img, k, cfg.s))
            .collect::<Result<_>>()?;
        let samples: Vec<Vec<f64>> = per_image.into_iter().flatten().collect();
        let ae = init_autoencoder(cfg.s * cfg.s, cfg.p, mix_seed(cfg.seed, 0), cfg.init_scale)?;
        let (ae, losses) = train_autoencoder(ae, &samples, &cfg.train_config())?;
        Ok((ae, losses, samples.len()))
    })()
    .map_err(|e: Error| e.in_stage("autoencoder"))?;

    let refs: Vec<(usize, &GrayImage)> = images.iter().map(|(_, c, img)| (*c, img)).collect();
    let histogram = error_histogram_from_images(&autoencoder, &refs, num_classes, k, cfg.s)
        .map_err(|e| e.in_stage("histogram"))?;

    let records: Vec<FeatureRecord> = images
        .par_iter()
        .map(|(id, class, img)| {
            Ok(FeatureRecord {
                image_id: *id as u64,
                class: *class,
                features: extract_features(img, k)?,
            })
        })
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("features"))?;
    let index = RetrievalIndex::new(k, num_classes, records).map_err(|e| e.in_stage("features"))?;

    let xs: Vec<&[f64]> = index.records().iter().map(|r| r.features.values()).collect();
    let ys: Vec<usize> = index.records().iter().map(|r| r.class).collect();
    let dim = xs.first().map_or(1, |x| x.len());
    let (svm, pairs) = train_multiclass_detailed(&xs, &ys, num_classes, &cfg.svm_params(dim), mix_seed(cfg.seed, 2))
        .map_err(|e| e.in_stage("svm"))?;

    Ok((
        TrainedArtifacts {
            autoencoder,
            histogram,
            svm,
            index,
        },
        TrainingSummary {
            epoch_losses,
            class_counts: manifest.class_counts(Split::Train),
            autoencoder_samples,
            pairs,
        },
    ))
}
