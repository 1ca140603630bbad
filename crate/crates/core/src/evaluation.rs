//! IRMA code error, precision/recall at m, and the benchmark sweep.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{load_image, DatasetManifest, IrmaCode, Split, AXIS_LENGTHS, CODE_LENGTH};
use crate::error::{Error, Result};
use crate::features::{extract_features, BlockFeatureVector};
use crate::pipeline::TrainedArtifacts;
use crate::relevance::{dropped_count, relevance_mask};
use crate::retrieval::{QueryOptions, RankedHits, SearchScope, Searcher, Similarity};
use crate::svm::MulticlassSvmModel;

pub const BENCHMARK_CSV: &str = "benchmark.csv";
pub const BENCHMARK_TXT: &str = "benchmark.txt";

/// Number of possible labels at each of the 13 code positions.
#[derive(Debug, Clone, PartialEq)]
pub struct IrmaErrorConfig {
    branching: [u32; CODE_LENGTH],
}

impl Default for IrmaErrorConfig {
    fn default() -> Self {
        Self { branching: [36; CODE_LENGTH] }
    }
}

impl IrmaErrorConfig {
    pub fn new(branching: [u32; CODE_LENGTH]) -> Result<Self> {
        if let Some(i) = branching.iter().position(|&b| b < 2) {
            return Err(Error::InvalidParameter(format!(
                "branching at position {i} is {}, must be >= 2",
                branching[i]
            )));
        }
        Ok(Self { branching })
    }

    pub fn branching(&self) -> &[u32; CODE_LENGTH] {
        &self.branching
    }
}

/// Weighted mismatch score in `[0, 1]`. Within an axis, position `i`
/// (1-based) weighs `1 / (b_i * i)`; each axis is normalised so that a
/// fully wrong axis contributes 0.25.
pub fn irma_error(pred: &IrmaCode, truth: &IrmaCode, cfg: &IrmaErrorConfig) -> f64 {
    let (p, t) = (pred.chars(), truth.chars());
    let mut total = 0.0;
    let mut offset = 0;
    for len in AXIS_LENGTHS {
        let mut raw = 0.0;
        let mut max = 0.0;
        for i in 0..len {
            let pos = offset + i;
            let w = 1.0 / (cfg.branching[pos] as f64 * (i + 1) as f64);
            max += w;
            if p[pos] != t[pos] {
                raw += w;
            }
        }
        total += 0.25 * raw / max;
        offset += len;
    }
    total
}

/// `(precision, recall)` over the first `m` hits. Precision divides by
/// `min(m, hits)`, recall by `class_size`.
pub fn precision_recall_at_m(hits: &RankedHits, query_class: usize, class_size: usize, m: usize) -> Result<(f64, f64)> {
    if hits.is_empty() {
        return Err(Error::InvalidParameter("empty hit list".into()));
    }
    if m == 0 || class_size == 0 {
        return Err(Error::InvalidParameter("m and class size must be >= 1".into()));
    }
    let considered = m.min(hits.len());
    let tp = hits.hits()[..considered].iter().filter(|h| h.class == query_class).count();
    Ok((tp as f64 / considered as f64, tp as f64 / class_size as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationSummary {
    pub test_count: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Sum of per-image IRMA errors, when scoring was requested.
    pub summed_irma_error: Option<f64>,
}

impl ClassificationSummary {
    pub fn mean_irma_error(&self) -> Option<f64> {
        self.summed_irma_error.map(|e| e / self.test_count as f64)
    }
}

/// Classifies every test image of `manifest` on its grid-`k` features.
///
/// With `irma` set, each prediction is scored with the representative code
/// of the predicted class against the image's own code.
pub fn classification_accuracy(
    model: &MulticlassSvmModel,
    manifest: &DatasetManifest,
    k: usize,
    irma: Option<&IrmaErrorConfig>,
) -> Result<ClassificationSummary> {
    let test: Vec<_> = manifest.split(Split::Test).collect();
    if test.is_empty() {
        return Err(Error::InvalidParameter("test split is empty".into()));
    }
    let predictions: Vec<usize> = test
        .par_iter()
        .map(|(_, e)| {
            let image = load_image(manifest.resolve(e))?;
            model.classify(extract_features(&image, k)?.values())
        })
        .collect::<Result<_>>()?;
    let correct = test.iter().zip(&predictions).filter(|((_, e), &p)| e.class == p).count();

    let summed_irma_error = match irma {
        None => None,
        Some(cfg) => {
            let reps = manifest.representative_codes();
            let mut sum = 0.0;
            for ((id, e), &p) in test.iter().zip(&predictions) {
                let missing = || Error::InvalidParameter(format!("manifest entry {id} has no IRMA code"));
                let truth = e.code.ok_or_else(missing)?;
                let pred = reps[p].ok_or_else(|| {
                    Error::InvalidParameter(format!("class {p} has no training code to score with"))
                })?;
                sum += irma_error(&pred, &truth, cfg);
            }
            Some(sum)
        }
    };
    Ok(ClassificationSummary {
        test_count: test.len(),
        correct,
        accuracy: correct as f64 / test.len() as f64,
        summed_irma_error,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSettings {
    pub ks: Vec<usize>,
    pub ds: Vec<f64>,
    pub ms: Vec<usize>,
    pub queries: usize,
    pub seed: u64,
    pub workers: usize,
    pub similarity: Similarity,
    pub scope: SearchScope,
    pub irma: IrmaErrorConfig,
}

impl Default for BenchmarkSettings {
    fn default() -> Self {
        Self {
            ks: vec![4, 5, 6],
            ds: vec![0.0, 0.125, 0.25, 0.5],
            ms: vec![10, 20, 30],
            queries: 100,
            seed: 1,
            workers: 1,
            similarity: Similarity::Pearson,
            scope: SearchScope::All,
            irma: IrmaErrorConfig::default(),
        }
    }
}

impl BenchmarkSettings {
    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ds.is_empty() || self.ms.is_empty() {
            return Err(Error::InvalidParameter("k, d and m lists must be non-empty".into()));
        }
        for &d in &self.ds {
            crate::relevance::validate_reduction(d)?;
        }
        if self.ms.contains(&0) {
            return Err(Error::InvalidParameter("m values must be >= 1".into()));
        }
        if self.queries == 0 {
            return Err(Error::InvalidParameter("query count must be >= 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidParameter("workers must be >= 1".into()));
        }
        Ok(())
    }
}

/// Relative change against the `d = 0` row of the same grid, in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct RowDeltas {
    pub precision_pct: Vec<f64>,
    pub recall_pct: Vec<f64>,
    /// Negative when scoring got faster.
    pub time_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub k: usize,
    pub d: f64,
    pub dropped_blocks: usize,
    pub scored_length: usize,
    /// One entry per requested m, in settings order.
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub mean_time_secs: f64,
    pub queries: usize,
    pub seed: u64,
    pub workers: usize,
    pub deltas: Option<RowDeltas>,
    /// Dropped block indices of each class's mask at this `(k, d)`.
    pub dropped_by_class: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub settings: BenchmarkSettings,
    pub rows: Vec<BenchmarkRow>,
    pub classification: BTreeMap<usize, ClassificationSummary>,
    /// Extra `key = value` lines echoed into both report files.
    pub header: Vec<String>,
    pub audit_failures: Vec<String>,
}

fn pct_change(value: f64, base: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        (value - base) / base * 100.0
    }
}

/// Seeded draw, with replacement, of `count` test-split manifest positions.
pub fn draw_queries(manifest: &DatasetManifest, count: usize, seed: u64) -> Result<Vec<usize>> {
    let test: Vec<usize> = manifest.split(Split::Test).map(|(id, _)| id).collect();
    if test.is_empty() {
        return Err(Error::InvalidParameter("test split is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count).map(|_| test[rng.gen_range(0..test.len())]).collect())
}

/// Runs every `(k, d)` configuration over the same seeded query draw.
pub fn run_benchmark(
    manifest: &DatasetManifest,
    artifacts: &BTreeMap<usize, TrainedArtifacts>,
    settings: &BenchmarkSettings,
) -> Result<BenchmarkReport> {
    settings.validate()?;
    for k in &settings.ks {
        match artifacts.get(k) {
            None => return Err(Error::InvalidParameter(format!("missing artifacts for k = {k}"))),
            Some(a) if a.k() != *k => {
                return Err(Error::InvalidParameter(format!(
                    "artifacts registered for k = {k} were built for k = {}",
                    a.k()
                )))
            }
            Some(_) => {}
        }
    }
    let drawn = draw_queries(manifest, settings.queries, settings.seed)?;
    let mut unique = drawn.clone();
    unique.sort_unstable();
    unique.dedup();
    let images: BTreeMap<usize, _> = unique
        .par_iter()
        .map(|&id| Ok((id, load_image(manifest.resolve(&manifest.entries()[id]))?)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .collect();

    let max_m = *settings.ms.iter().max().expect("validated non-empty");
    let mut rows = Vec::new();
    let mut classification = BTreeMap::new();
    let mut audit_failures = Vec::new();

    for &k in &settings.ks {
        let art = &artifacts[&k];
        let class_sizes = art.index.class_sizes();
        let features: BTreeMap<usize, BlockFeatureVector> = images
            .iter()
            .map(|(&id, img)| Ok((id, extract_features(img, k)?)))
            .collect::<Result<_>>()?;
        let searcher = Searcher::new(&art.index, &art.svm, &art.histogram, settings.workers)?;

        let mut k_rows: Vec<BenchmarkRow> = Vec::new();
        for &d in &settings.ds {
            let opts = QueryOptions {
                d,
                m: max_m,
                similarity: settings.similarity,
                scope: settings.scope,
            };
            // warm-up, discarded
            searcher.query_features(&features[&drawn[0]], &opts)?;

            let mut p_sum = vec![0.0; settings.ms.len()];
            let mut r_sum = vec![0.0; settings.ms.len()];
            let mut time_sum = 0.0;
            let mut scored_length = 0;
            for (qi, &id) in drawn.iter().enumerate() {
                let truth = manifest.entries()[id].class;
                let res = searcher.query_features(&features[&id], &opts)?;
                scored_length = res.scored_length;
                time_sum += res.scoring_time.as_secs_f64();
                for (mi, &m) in settings.ms.iter().enumerate() {
                    let (p, r) = precision_recall_at_m(&res.hits, truth, class_sizes[truth], m)?;
                    let tp = res.hits.hits().iter().take(m).filter(|h| h.class == truth).count();
                    let denom = m.min(res.hits.len());
                    if p != tp as f64 / denom as f64 || r != tp as f64 / class_sizes[truth] as f64 {
                        audit_failures.push(format!("k={k} d={d} query {qi}: recount disagrees at m={m}"));
                    }
                    p_sum[mi] += p;
                    r_sum[mi] += r;
                }
                let scores: Vec<f64> = res.hits.hits().iter().map(|h| h.score).collect();
                if scores.windows(2).any(|w| w[0] < w[1]) {
                    audit_failures.push(format!("k={k} d={d} query {qi}: scores not sorted"));
                }
            }
            let n = drawn.len() as f64;
            let row = BenchmarkRow {
                k,
                d,
                dropped_blocks: dropped_count(d, k),
                scored_length,
                precision: p_sum.iter().map(|s| s / n).collect(),
                recall: r_sum.iter().map(|s| s / n).collect(),
                mean_time_secs: time_sum / n,
                queries: drawn.len(),
                seed: settings.seed,
                workers: searcher.workers(),
                deltas: None,
                dropped_by_class: (0..art.histogram.num_classes())
                    .map(|c| Ok(relevance_mask(&art.histogram, c, d, k)?.dropped_blocks()))
                    .collect::<Result<_>>()?,
            };
            for (name, values) in [("precision", &row.precision), ("recall", &row.recall)] {
                if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    audit_failures.push(format!("k={k} d={d}: {name} outside [0, 1]"));
                }
            }
            if row.mean_time_secs.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
                audit_failures.push(format!("k={k} d={d}: non-positive mean time"));
            }
            k_rows.push(row);
        }

        if let Some(base) = k_rows.iter().find(|r| r.d == 0.0).cloned() {
            for row in &mut k_rows {
                row.deltas = Some(RowDeltas {
                    precision_pct: row.precision.iter().zip(&base.precision).map(|(v, b)| pct_change(*v, *b)).collect(),
                    recall_pct: row.recall.iter().zip(&base.recall).map(|(v, b)| pct_change(*v, *b)).collect(),
                    time_pct: pct_change(row.mean_time_secs, base.mean_time_secs),
                });
            }
        }
        rows.extend(k_rows);

        let has_codes = manifest.entries().iter().all(|e| e.code.is_some());
        let irma = has_codes.then_some(&settings.irma);
        classification.insert(k, classification_accuracy(&art.svm, manifest, k, irma)?);
    }

    Ok(BenchmarkReport {
        settings: settings.clone(),
        rows,
        classification,
        header: Vec::new(),
        audit_failures,
    })
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

impl BenchmarkReport {
    pub fn audit_passed(&self) -> bool {
        self.audit_failures.is_empty()
    }

    fn header_lines(&self) -> Vec<String> {
        let s = &self.settings;
        let mut lines = vec![
            format!("k = {}", join(&s.ks)),
            format!("d = {}", join(&s.ds)),
            format!("m = {}", join(&s.ms)),
            format!("queries = {}", s.queries),
            format!("seed = {}", s.seed),
            format!("workers = {}", s.workers),
            format!("similarity = {:?}", s.similarity),
            format!("scope = {:?}", s.scope),
            format!("irma_branching = {}", join(s.irma.branching())),
        ];
        lines.extend(self.header.iter().cloned());
        lines
    }

    fn mask_lines(&self) -> Vec<String> {
        let mut lines = Vec::new();
        for row in self.rows.iter().filter(|r| r.dropped_blocks > 0) {
            for (class, dropped) in row.dropped_by_class.iter().enumerate() {
                lines.push(format!("dropped k={} d={} class {class}: {}", row.k, row.d, join(dropped)));
            }
        }
        lines
    }

    /// One row per `(k, d, m)`, preceded by `#` configuration and mask lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for line in self.header_lines().into_iter().chain(self.mask_lines()) {
            let _ = writeln!(out, "# {line}");
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "k",
            "d",
            "dropped_blocks",
            "scored_length",
            "m",
            "precision",
            "recall",
            "mean_time_us",
            "queries",
            "seed",
            "workers",
            "precision_delta_pct",
            "recall_delta_pct",
            "time_delta_pct",
            "accuracy",
            "mean_irma_error",
        ])
        .expect("writing to memory");
        for row in &self.rows {
            let cls = self.classification.get(&row.k);
            for (mi, m) in self.settings.ms.iter().enumerate() {
                let delta = |f: &dyn Fn(&RowDeltas) -> f64| row.deltas.as_ref().map_or(String::new(), |d| f(d).to_string());
                w.write_record([
                    row.k.to_string(),
                    row.d.to_string(),
                    row.dropped_blocks.to_string(),
                    row.scored_length.to_string(),
                    m.to_string(),
                    row.precision[mi].to_string(),
                    row.recall[mi].to_string(),
                    (row.mean_time_secs * 1e6).to_string(),
                    row.queries.to_string(),
                    row.seed.to_string(),
                    row.workers.to_string(),
                    delta(&|d| d.precision_pct[mi]),
                    delta(&|d| d.recall_pct[mi]),
                    delta(&|d| d.time_pct),
                    cls.map_or(String::new(), |c| c.accuracy.to_string()),
                    cls.and_then(|c| c.mean_irma_error()).map_or(String::new(), |e| e.to_string()),
                ])
                .expect("writing to memory");
            }
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8"));
        out
    }

    /// Human-readable rendering: retrieval table, deltas, classification.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for line in self.header_lines() {
            let _ = writeln!(out, "{line}");
        }
        out.push('\n');
        let _ = write!(out, "{:>3} {:>6} {:>5}", "k", "d", "drop");
        for m in &self.settings.ms {
            let _ = write!(out, " {:>8} {:>8}", format!("P@{m}"), format!("R@{m}"));
        }
        let _ = writeln!(out, " {:>12}", "time (us)");
        for row in &self.rows {
            let _ = write!(out, "{:>3} {:>6.3} {:>5}", row.k, row.d, row.dropped_blocks);
            for (p, r) in row.precision.iter().zip(&row.recall) {
                let _ = write!(out, " {p:>8.4} {r:>8.4}");
            }
            let _ = writeln!(out, " {:>12.2}", row.mean_time_secs * 1e6);
        }

        out.push_str("\nchange vs d = 0 (%)\n");
        let _ = write!(out, "{:>3} {:>6}", "k", "d");
        for m in &self.settings.ms {
            let _ = write!(out, " {:>8} {:>8}", format!("P@{m}"), format!("R@{m}"));
        }
        let _ = writeln!(out, " {:>12}", "time");
        for row in &self.rows {
            let _ = write!(out, "{:>3} {:>6.3}", row.k, row.d);
            match &row.deltas {
                Some(d) => {
                    for (p, r) in d.precision_pct.iter().zip(&d.recall_pct) {
                        let _ = write!(out, " {p:>8.2} {r:>8.2}");
                    }
                    let _ = writeln!(out, " {:>12.2}", d.time_pct);
                }
                None => out.push_str("  (no d = 0 baseline)\n"),
            }
        }

        out.push_str("\nclassification\n");
        let _ = writeln!(out, "{:>3} {:>9} {:>12} {:>12}", "k", "accuracy", "summed IRMA", "mean IRMA");
        for (k, c) in &self.classification {
            let fmt_opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
            let _ = writeln!(
                out,
                "{k:>3} {:>9.4} {:>12} {:>12}",
                c.accuracy,
                fmt_opt(c.summed_irma_error),
                fmt_opt(c.mean_irma_error())
            );
        }
        let masks = self.mask_lines();
        if !masks.is_empty() {
            out.push_str("\nmasks\n");
            for line in masks {
                let _ = writeln!(out, "{line}");
            }
        }
        if !self.audit_passed() {
            out.push_str("\naudit failures\n");
            for f in &self.audit_failures {
                let _ = writeln!(out, "{f}");
            }
        }
        out
    }

    /// Writes `benchmark.csv` and `benchmark.txt` into `dir`.
    pub fn write_files(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [(BENCHMARK_CSV, self.to_csv()), (BENCHMARK_TXT, self.to_table())] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
