//! Feature index and top-m similarity search over mask-reduced vectors.
//!
//! A query is classified on its full feature vector; the predicted class
//! selects the block mask; the same mask is then applied to the query and to
//! every indexed record before scoring. The scan is linear over the index.

use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoencoder::ErrorHistogram;
use crate::dataset::{load_image, DatasetManifest, GrayImage, Split};
use crate::error::{Error, Result};
use crate::features::{extract_features, BlockFeatureVector, FeatureRecord, FeatureStore, LBP_BINS};
use crate::relevance::{relevance_mask, BlockMask};
use crate::svm::MulticlassSvmModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Similarity {
    /// Pearson correlation of the concatenated histograms.
    #[default]
    Pearson,
    /// Plain dot product.
    InnerProduct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchScope {
    #[default]
    All,
    /// Only records of the predicted class are scored.
    Class,
}

impl std::str::FromStr for Similarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pearson" => Ok(Self::Pearson),
            "inner-product" => Ok(Self::InnerProduct),
            other => Err(Error::InvalidParameter(format!(
                "unknown similarity {other:?} (expected pearson or inner-product)"
            ))),
        }
    }
}

impl std::str::FromStr for SearchScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "class" => Ok(Self::Class),
            other => Err(Error::InvalidParameter(format!(
                "unknown scope {other:?} (expected all or class)"
            ))),
        }
    }
}

/// Half-open `(start, len)` ranges of a flat vector taking part in scoring.
fn segments_for(mask: &BlockMask) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for j in mask.kept_blocks() {
        let start = j * LBP_BINS;
        match out.last_mut() {
            Some((s, len)) if *s + *len == start => *len += LBP_BINS,
            _ => out.push((start, LBP_BINS)),
        }
    }
    out
}

/// Pearson correlation over the given segments of `a` and `b`, summing
/// element by element in segment order.
fn pearson_segments(a: &[f64], b: &[f64], segments: &[(usize, usize)]) -> f64 {
    let mut sum_a = 0.0;
    let mut sum_b = 0.0;
    let mut count = 0usize;
    for &(start, len) in segments {
        for i in start..start + len {
            sum_a += a[i];
            sum_b += b[i];
        }
        count += len;
    }
    let mean_a = sum_a / count as f64;
    let mean_b = sum_b / count as f64;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for &(start, len) in segments {
        for i in start..start + len {
            let da = a[i] - mean_a;
            let db = b[i] - mean_b;
            cov += da * db;
            var_a += da * da;
            var_b += db * db;
        }
    }
    match (var_a == 0.0, var_b == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (cov / (var_a * var_b).sqrt()).clamp(-1.0, 1.0),
    }
}

fn dot_segments(a: &[f64], b: &[f64], segments: &[(usize, usize)]) -> f64 {
    let mut acc = 0.0;
    for &(start, len) in segments {
        for i in start..start + len {
            acc += a[i] * b[i];
        }
    }
    acc
}

/// Pearson correlation in `[-1, 1]`. One constant input gives 0, two give 1.
pub fn cross_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "correlation needs at least 2 values, got {}",
            a.len()
        )));
    }
    Ok(pearson_segments(a, b, &[(0, a.len())]))
}

/// Similarity of the kept blocks of two feature vectors. Equal to scoring
/// `apply_mask(a, mask)` against `apply_mask(b, mask)` without copying.
pub fn masked_similarity(
    a: &BlockFeatureVector,
    b: &BlockFeatureVector,
    mask: &BlockMask,
    similarity: Similarity,
) -> Result<f64> {
    if a.k() != mask.k() || b.k() != mask.k() {
        return Err(Error::InvalidParameter("feature and mask grids differ".into()));
    }
    let segments = segments_for(mask);
    if segments.is_empty() {
        return Err(Error::InvalidParameter("mask keeps no blocks".into()));
    }
    Ok(score(a.values(), b.values(), &segments, similarity))
}

fn score(a: &[f64], b: &[f64], segments: &[(usize, usize)], similarity: Similarity) -> f64 {
    match similarity {
        Similarity::Pearson => pearson_segments(a, b, segments),
        Similarity::InnerProduct => dot_segments(a, b, segments),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    k: usize,
    num_classes: usize,
    records: Vec<FeatureRecord>,
}

impl RetrievalIndex {
    pub fn new(k: usize, num_classes: usize, records: Vec<FeatureRecord>) -> Result<Self> {
        let mut ids = std::collections::HashSet::new();
        for r in &records {
            if r.features.k() != k {
                return Err(Error::InvalidParameter(format!(
                    "record {} has grid k = {}, index k = {k}",
                    r.image_id,
                    r.features.k()
                )));
            }
            if r.class >= num_classes {
                return Err(Error::ClassOutOfRange {
                    class: r.class,
                    classes: num_classes,
                });
            }
            if !ids.insert(r.image_id) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate image id {}",
                    r.image_id
                )));
            }
        }
        Ok(Self {
            k,
            num_classes,
            records,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn records(&self) -> &[FeatureRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of indexed images of each class.
    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_classes];
        for r in &self.records {
            sizes[r.class] += 1;
        }
        sizes
    }

    pub fn to_store(&self) -> FeatureStore {
        FeatureStore {
            k: self.k,
            num_classes: self.num_classes,
            records: self.records.clone(),
        }
    }

    pub fn from_store(store: FeatureStore) -> Result<Self> {
        Self::new(store.k, store.num_classes, store.records)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_store().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_store(FeatureStore::load(path)?)
    }
}

/// Extracts features of every training image, in manifest order. The image
/// id of a record is its manifest position.
pub fn build_index(manifest: &DatasetManifest, k: usize) -> Result<RetrievalIndex> {
    let train: Vec<(usize, &crate::dataset::ManifestEntry)> = manifest.split(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::InvalidParameter("training split is empty".into()));
    }
    let records = train
        .par_iter()
        .map(|(id, entry)| {
            let path = manifest.resolve(entry);
            let image = load_image(&path)?;
            let features = extract_features(&image, k).map_err(|e| match e {
                Error::ImageTooSmall { .. } => Error::InvalidImage(format!("{}: {e}", path.display())),
                other => other,
            })?;
            Ok(FeatureRecord {
                image_id: *id as u64,
                class: entry.class,
                features,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    RetrievalIndex::new(k, manifest.num_classes(), records)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub image_id: u64,
    pub class: usize,
    pub score: f64,
}

/// Hits in descending score order, ties by ascending image id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedHits {
    hits: Vec<Hit>,
}

impl RankedHits {
    /// Sorts `scored` and keeps the best `m`.
    pub fn from_scored(mut scored: Vec<Hit>, m: usize) -> Self {
        scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.image_id.cmp(&b.image_id)));
        scored.truncate(m);
        Self { hits: scored }
    }

    pub fn hits(&self) -> &[Hit] {
        &self.hits
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryOptions {
    /// Reduction fraction in `[0, 1)`.
    pub d: f64,
    /// Number of hits returned.
    pub m: usize,
    pub similarity: Similarity,
    pub scope: SearchScope,
}

impl Default for QueryOptions {
    fn default() -> Self {
        Self {
            d: 0.0,
            m: 10,
            similarity: Similarity::Pearson,
            scope: SearchScope::All,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QueryResult {
    pub hits: RankedHits,
    pub predicted_class: usize,
    pub mask: BlockMask,
    /// Length of the vectors compared for each candidate.
    pub scored_length: usize,
    /// Wall time of the similarity scan only.
    pub scoring_time: Duration,
}

/// Query front end over immutable trained artifacts.
pub struct Searcher<'a> {
    index: &'a RetrievalIndex,
    svm: &'a MulticlassSvmModel,
    histogram: &'a ErrorHistogram,
    pool: Option<rayon::ThreadPool>,
    workers: usize,
}

impl<'a> Searcher<'a> {
    /// `workers <= 1` scores candidates on the calling thread.
    pub fn new(
        index: &'a RetrievalIndex,
        svm: &'a MulticlassSvmModel,
        histogram: &'a ErrorHistogram,
        workers: usize,
    ) -> Result<Self> {
        if index.is_empty() {
            return Err(Error::InvalidParameter("retrieval index is empty".into()));
        }
        if histogram.k() != index.k() {
            return Err(Error::InvalidParameter(format!(
                "error histogram k = {} but index k = {}",
                histogram.k(),
                index.k()
            )));
        }
        let pool = if workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self {
            index,
            svm,
            histogram,
            pool,
            workers: workers.max(1),
        })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn index(&self) -> &RetrievalIndex {
        self.index
    }

    pub fn query(&self, image: &GrayImage, opts: &QueryOptions) -> Result<QueryResult> {
        let features = extract_features(image, self.index.k())?;
        self.query_features(&features, opts)
    }

    /// Runs the query pipeline on precomputed full features.
    pub fn query_features(&self, features: &BlockFeatureVector, opts: &QueryOptions) -> Result<QueryResult> {
        if features.k() != self.index.k() {
            return Err(Error::InvalidParameter(format!(
                "query grid k = {} but index k = {}",
                features.k(),
                self.index.k()
            )));
        }
        if opts.m == 0 {
            return Err(Error::InvalidParameter("m must be >= 1".into()));
        }
        let predicted_class = self.svm.classify(features.values())?;
        let mask = relevance_mask(self.histogram, predicted_class, opts.d, self.index.k())?;
        let segments = segments_for(&mask);
        if segments.is_empty() {
            return Err(Error::InvalidParameter("mask keeps no blocks".into()));
        }
        let scored_length = LBP_BINS * mask.kept_count();
        let query = features.values();
        let score_record = |r: &FeatureRecord| Hit {
            image_id: r.image_id,
            class: r.class,
            score: score(query, r.features.values(), &segments, opts.similarity),
        };
        let in_scope = |r: &&FeatureRecord| match opts.scope {
            SearchScope::All => true,
            SearchScope::Class => r.class == predicted_class,
        };

        let start = Instant::now();
        let scored: Vec<Hit> = match &self.pool {
            Some(pool) => pool.install(|| {
                self.index
                    .records()
                    .par_iter()
                    .filter(|r| in_scope(r))
                    .map(score_record)
                    .collect()
            }),
            None => self
                .index
                .records()
                .iter()
                .filter(in_scope)
                .map(score_record)
                .collect(),
        };
        let scoring_time = start.elapsed();

        Ok(QueryResult {
            hits: RankedHits::from_scored(scored, opts.m),
            predicted_class,
            mask,
            scored_length,
            scoring_time,
        })
    }
}

/// Single-threaded convenience wrapper around [`Searcher::query`].
pub fn query(
    index: &RetrievalIndex,
    image: &GrayImage,
    svm: &MulticlassSvmModel,
    histogram: &ErrorHistogram,
    opts: &QueryOptions,
) -> Result<QueryResult> {
    Searcher::new(index, svm, histogram, 1)?.query(image, opts)
}
