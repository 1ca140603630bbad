use std::path::Path;
use std::process::{Command, Output};

fn aecbir(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aecbir"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_is_deterministic_and_counts_images() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        ok(&aecbir(tmp.path(), &["gen", "--seed", "1", "--classes", "8", "--per-class", "40", "--out", out]));
    }
    let a = tree_bytes(&tmp.path().join("a"));
    assert_eq!(a.iter().filter(|(p, _)| p.ends_with(".pgm")).count(), 320);
    assert!(a.iter().any(|(p, _)| p == "manifest.csv"));
    assert_eq!(a, tree_bytes(&tmp.path().join("b")));
}

#[test]
fn gen_rejects_more_classes_than_blocks() {
    let tmp = tempfile::tempdir().unwrap();
    let out = aecbir(tmp.path(), &["gen", "--classes", "30", "--k", "4"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("classes exceed grid"));
}

#[test]
fn train_rejects_hidden_layer_without_compression() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&aecbir(tmp.path(), &["gen", "--per-class", "5"]));
    let out = aecbir(tmp.path(), &["train", "--manifest", "corpus/manifest.csv", "--p", "256", "--s", "16"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("p must be < n"));
}

fn hit_lines(stdout: &str) -> Vec<String> {
    stdout
        .lines()
        .filter(|l| !l.starts_with("scoring time"))
        .map(str::to_string)
        .collect()
}

#[test]
fn train_query_benchmark_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&aecbir(dir, &["gen", "--per-class", "10"]));
    for artifacts in ["run1", "run2"] {
        let out = ok(&aecbir(dir, &["train", "--manifest", "corpus/manifest.csv", "--artifacts", artifacts]));
        assert!(out.contains("epoch losses"));
    }
    // config.toml echoes the artifact directory, which differs here
    for file in ["autoencoder.bin", "histogram.bin", "svm.bin", "index.bin"] {
        let a = std::fs::read(dir.join("run1/k4").join(file)).unwrap();
        let b = std::fs::read(dir.join("run2/k4").join(file)).unwrap();
        assert!(a == b, "{file} differs between runs");
    }

    // first training image of class 1 sits at manifest position 0
    let query = |artifacts: &str, d: &str| {
        ok(&aecbir(
            dir,
            &["query", "--artifacts", artifacts, "--image", "corpus/images/c01_000.pgm", "--d", d, "--m", "5"],
        ))
    };
    let full = query("run1", "0");
    assert!(full.contains("dropped blocks: []"));
    let first_hit = full.lines().find(|l| l.starts_with("1 ")).unwrap();
    assert!(first_hit.starts_with("1 0 "), "{first_hit}");
    assert!(first_hit.ends_with("1.000000000000"), "{first_hit}");
    assert_eq!(hit_lines(&full), hit_lines(&query("run2", "0")));

    let half = query("run1", "0.5");
    let dropped = half.lines().find(|l| l.starts_with("dropped blocks")).unwrap();
    assert_eq!(dropped.matches(',').count() + 1, 8, "{dropped}");
    assert!(half.contains("scored length: 2048"));

    let eval = ok(&aecbir(dir, &["eval-classify", "--manifest", "corpus/manifest.csv", "--artifacts", "run1"]));
    assert!(eval.contains("accuracy:"));

    ok(&aecbir(
        dir,
        &[
            "benchmark", "--manifest", "corpus/manifest.csv", "--artifacts", "run1", "--k", "4", "--reductions", "0",
            "--m", "10", "--queries", "5", "--out", "report",
        ],
    ));
    let csv = std::fs::read_to_string(dir.join("report/benchmark.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 2, "{csv}");
    assert!(rows[0].starts_with("k,d,"));
    assert!(csv.contains("# seed = 1"));
    assert!(dir.join("report/benchmark.txt").exists());

    let missing = aecbir(dir, &["benchmark", "--manifest", "corpus/manifest.csv", "--artifacts", "run1", "--k", "5"]);
    assert!(!missing.status.success());
    assert!(stderr(&missing).contains("k5"), "{}", stderr(&missing));
}

#[test]
fn config_file_with_flag_override() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&aecbir(dir, &["gen", "--per-class", "5"]));
    std::fs::write(dir.join("cfg.toml"), "manifest = \"corpus/manifest.csv\"\nartifacts = \"arts\"\np = 300\nepochs = 1\n").unwrap();
    let bad = aecbir(dir, &["train", "--config", "cfg.toml"]);
    assert!(stderr(&bad).contains("p must be < n"));
    ok(&aecbir(dir, &["train", "--config", "cfg.toml", "--p", "32"]));
    let written = std::fs::read_to_string(dir.join("arts/k4/config.toml")).unwrap();
    assert!(written.contains("p = 32"));
    assert!(written.contains("epochs = 1"));
}
