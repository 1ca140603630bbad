//! Class manifests: one `path,split,class[,irma_code]` record per line.
//!
//! Class labels are arbitrary strings in the file and are re-indexed densely
//! to `0..C`. Labels that parse as integers sort numerically and come before
//! non-numeric labels, which sort lexicographically; the dense index is the
//! position in that order. Relative image paths resolve against the
//! manifest's directory.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::irma::{parse_irma_code, IrmaCode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// A manifest line before class re-indexing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub path: PathBuf,
    pub split: Split,
    pub label: String,
    pub code: Option<IrmaCode>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Path as written in the manifest.
    pub path: PathBuf,
    pub split: Split,
    /// Dense class index in `0..num_classes`.
    pub class: usize,
    pub code: Option<IrmaCode>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    base_dir: PathBuf,
    labels: Vec<String>,
    entries: Vec<ManifestEntry>,
}

fn label_order(a: &str, b: &str) -> Ordering {
    match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

impl DatasetManifest {
    pub fn from_records(base_dir: impl Into<PathBuf>, records: Vec<ManifestRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            if !seen.insert(&r.path) {
                return Err(Error::Manifest {
                    line: i + 1,
                    reason: format!("duplicate path {}", r.path.display()),
                });
            }
            if r.label.is_empty() {
                return Err(Error::Manifest {
                    line: i + 1,
                    reason: "empty class label".into(),
                });
            }
        }
        let mut labels: Vec<String> = records.iter().map(|r| r.label.clone()).collect();
        labels.sort_by(|a, b| label_order(a, b));
        labels.dedup();
        let index: BTreeMap<&str, usize> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        let entries = records
            .iter()
            .map(|r| ManifestEntry {
                path: r.path.clone(),
                split: r.split,
                class: index[r.label.as_str()],
                code: r.code,
            })
            .collect();
        Ok(Self {
            base_dir: base_dir.into(),
            labels,
            entries,
        })
    }

    /// Parses manifest text; `base_dir` anchors relative image paths.
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| Error::Manifest {
                line: line_no,
                reason,
            };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if !(3..=4).contains(&fields.len()) {
                return Err(err(format!(
                    "expected path,split,class[,irma_code], found {} fields",
                    fields.len()
                )));
            }
            if fields[0].is_empty() {
                return Err(err("empty path".into()));
            }
            let path = PathBuf::from(fields[0]);
            if !seen.insert(path.clone()) {
                return Err(err(format!("duplicate path {}", path.display())));
            }
            let split = fields[1].parse::<Split>().map_err(err)?;
            let code = match fields.get(3) {
                Some(t) if !t.is_empty() => {
                    Some(parse_irma_code(t).map_err(|e| err(e.to_string()))?)
                }
                _ => None,
            };
            records.push(ManifestRecord {
                path,
                split,
                label: fields[2].to_string(),
                code,
            });
        }
        if records.is_empty() {
            return Err(Error::Manifest {
                line: 0,
                reason: "manifest has no entries".into(),
            });
        }
        Self::from_records(base_dir, records)
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    /// Original label of each dense class index.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn class_of_label(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Location of an entry's image on disk.
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    /// `(image id, entry)` pairs of one split, in manifest order. The image
    /// id is the entry's position in the manifest.
    pub fn split(&self, split: Split) -> impl Iterator<Item = (usize, &ManifestEntry)> {
        self.entries
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.split == split)
    }

    /// Entries per class within one split.
    pub fn class_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for (_, e) in self.split(split) {
            counts[e.class] += 1;
        }
        counts
    }

    /// Smallest IRMA code seen for each class among training entries.
    pub fn representative_codes(&self) -> Vec<Option<IrmaCode>> {
        let mut reps: Vec<Option<IrmaCode>> = vec![None; self.num_classes()];
        for (_, e) in self.split(Split::Train) {
            if let Some(code) = e.code {
                let slot = &mut reps[e.class];
                *slot = Some(slot.map_or(code, |c| c.min(code)));
            }
        }
        reps
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# path,split,class,irma_code\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{}",
                e.path.display(),
                e.split,
                self.labels[e.class]
            ));
            if let Some(code) = e.code {
                out.push_str(&format!(",{code}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    DatasetManifest::parse(&text, base)
}
