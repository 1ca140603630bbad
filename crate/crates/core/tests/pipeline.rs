mod common;

use std::collections::BTreeMap;

use aecbir::dataset::{generate_synthetic_corpus, load_image, DatasetManifest, Split, SyntheticSpec};
use aecbir::evaluation::{classification_accuracy, draw_queries, precision_recall_at_m, run_benchmark, BenchmarkSettings};
use aecbir::features::extract_features;
use aecbir::pipeline::{train_pipeline, PipelineConfig, TrainedArtifacts};
use aecbir::retrieval::{build_index, query, QueryOptions, RetrievalIndex, SearchScope, Searcher};

struct Fixture {
    _dir: tempfile::TempDir,
    manifest: DatasetManifest,
    artifacts: TrainedArtifacts,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_synthetic_corpus(&SyntheticSpec::default(), dir.path()).unwrap();
    let (artifacts, summary) = train_pipeline(&manifest, &PipelineConfig::default()).unwrap();
    for pair in &summary.pairs {
        assert!(pair.converged, "pair {}-{}", pair.a, pair.b);
        assert!(pair.kkt.satisfied(1e-2), "pair {}-{}: {:?}", pair.a, pair.b, pair.kkt);
    }
    Fixture {
        _dir: dir,
        manifest,
        artifacts,
    }
}

#[test]
fn end_to_end_on_synthetic_corpus() {
    let fx = fixture();
    let Fixture { manifest, artifacts, .. } = &fx;

    // ROI positions are the hardest to encode for every class
    let spec = SyntheticSpec::default();
    for class in 0..spec.num_classes {
        let means = artifacts.histogram.mean_errors(class).unwrap();
        let roi = spec.designated_blocks(class);
        let roi_min = roi.iter().map(|&j| means[j]).fold(f64::INFINITY, f64::min);
        let bg_max = (0..16).filter(|j| !roi.contains(j)).map(|j| means[j]).fold(0.0, f64::max);
        assert!(roi_min > bg_max, "class {class}");
    }

    // index: one record per training image, matching recomputed features
    let train: Vec<_> = manifest.split(Split::Train).collect();
    assert_eq!(artifacts.index.len(), train.len());
    for (record, (id, entry)) in artifacts.index.records().iter().zip(&train) {
        assert_eq!(record.image_id, *id as u64);
        let image = load_image(manifest.resolve(entry)).unwrap();
        assert_eq!(record.features, extract_features(&image, 4).unwrap());
    }
    assert_eq!(build_index(manifest, 4).unwrap(), artifacts.index);

    // self-retrieval and vector lengths
    let (first_id, first) = train[0];
    let image = load_image(manifest.resolve(first)).unwrap();
    let searcher = Searcher::new(&artifacts.index, &artifacts.svm, &artifacts.histogram, 1).unwrap();
    let full = searcher.query(&image, &QueryOptions::default()).unwrap();
    assert_eq!(full.hits.hits()[0].image_id, first_id as u64);
    assert!((full.hits.hits()[0].score - 1.0).abs() < 1e-12);
    assert_eq!(full.scored_length, 256 * 16);
    let half = searcher.query(&image, &QueryOptions { d: 0.5, ..Default::default() }).unwrap();
    assert_eq!(half.scored_length, 256 * 8);
    assert_eq!(half.mask.dropped_blocks().len(), 8);

    // scores bounded and ordered, for both scopes and a threaded scan
    let threaded = Searcher::new(&artifacts.index, &artifacts.svm, &artifacts.histogram, 4).unwrap();
    for scope in [SearchScope::All, SearchScope::Class] {
        let opts = QueryOptions { d: 0.25, m: 30, scope, ..Default::default() };
        let a = searcher.query(&image, &opts).unwrap();
        let b = threaded.query(&image, &opts).unwrap();
        assert_eq!(a.hits, b.hits);
        let scores: Vec<f64> = a.hits.hits().iter().map(|h| h.score).collect();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]));
        assert!(scores.iter().all(|s| (-1.0..=1.0).contains(s)));
        if scope == SearchScope::Class {
            assert!(a.hits.hits().iter().all(|h| h.class == a.predicted_class));
        }
    }

    // precision@10 over 50 seeded test queries
    let sizes = artifacts.index.class_sizes();
    let ids = draw_queries(manifest, 50, 11).unwrap();
    let mut precision = 0.0;
    for &id in &ids {
        let entry = &manifest.entries()[id];
        let img = load_image(manifest.resolve(entry)).unwrap();
        let res = query(&artifacts.index, &img, &artifacts.svm, &artifacts.histogram, &QueryOptions::default()).unwrap();
        precision += precision_recall_at_m(&res.hits, entry.class, sizes[entry.class], 10).unwrap().0;
    }
    precision /= ids.len() as f64;
    println!("precision@10 over 50 queries: {precision:.4}");
    assert!(precision >= 0.9);

    let acc = classification_accuracy(&artifacts.svm, manifest, 4, Some(&Default::default())).unwrap();
    println!("test accuracy {:.4}, summed IRMA error {:?}", acc.accuracy, acc.summed_irma_error);
    assert!(acc.accuracy >= 0.9);

    // persistence
    let dir = tempfile::tempdir().unwrap();
    artifacts.save(dir.path(), &PipelineConfig::default()).unwrap();
    assert_eq!(&TrainedArtifacts::load(dir.path()).unwrap(), artifacts);
    let index_bytes = std::fs::read(dir.path().join("index.bin")).unwrap();
    assert_eq!(RetrievalIndex::load(dir.path().join("index.bin")).unwrap().to_store().to_bytes(), index_bytes);

    // benchmark: a d = 0 only sweep has zero deltas; reruns agree
    let settings = BenchmarkSettings {
        ks: vec![4],
        ds: vec![0.0],
        queries: 10,
        ..Default::default()
    };
    let arts = BTreeMap::from([(4, artifacts.clone())]);
    let a = run_benchmark(manifest, &arts, &settings).unwrap();
    let b = run_benchmark(manifest, &arts, &settings).unwrap();
    assert!(a.audit_passed());
    assert_eq!(a.rows.len(), 1);
    let deltas = a.rows[0].deltas.as_ref().unwrap();
    assert!(deltas.precision_pct.iter().chain(&deltas.recall_pct).all(|d| *d == 0.0));
    assert_eq!(deltas.time_pct, 0.0);
    assert_eq!(a.rows[0].precision, b.rows[0].precision);
    assert_eq!(a.rows[0].recall, b.rows[0].recall);
    assert_eq!(a.classification, b.classification);
    let csv = a.to_csv();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + 3);
    assert!(run_benchmark(manifest, &arts, &BenchmarkSettings { ks: vec![5], ..settings.clone() }).is_err());

    let halved = run_benchmark(manifest, &arts, &BenchmarkSettings { ds: vec![0.5], ..settings }).unwrap();
    assert!(halved.rows[0].deltas.is_none());
    assert!(halved.rows[0].dropped_by_class.iter().all(|d| d.len() == 8));
    assert!(halved.to_csv().contains("# dropped k=4 d=0.5 class 0: "));
}
