//! Deterministic synthetic corpus with known regions of interest.
//!
//! Every class owns one block position of a `grid_k x grid_k` grid. Images of
//! that class carry a noisy 2-pixel-period checkerboard in that block; all
//! other blocks are a flat background with at most +-2 levels of noise.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::{GrayImage, Rect};
use super::irma::{alphabet_char, IrmaCode, ALPHABET_SIZE, CODE_LENGTH};
use super::manifest::{DatasetManifest, ManifestRecord, Split};
use crate::error::{Error, Result};

pub const BACKGROUND_LEVEL: i32 = 128;
pub const BACKGROUND_NOISE: i32 = 2;
pub const CHECKER_LOW: i32 = 78;
pub const CHECKER_HIGH: i32 = 178;
pub const TEXTURE_NOISE: i32 = 20;

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub num_classes: usize,
    pub per_class: usize,
    pub image_size: usize,
    pub grid_k: usize,
    /// Fraction of each class assigned to the test split (rounded up).
    pub test_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            num_classes: 8,
            per_class: 40,
            image_size: 64,
            grid_k: 4,
            test_fraction: 0.2,
        }
    }
}

/// SplitMix64 finalizer; derives independent per-item seeds.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let blocks = self.grid_k * self.grid_k;
        if self.grid_k == 0 {
            return Err(Error::InvalidParameter("grid_k must be positive".into()));
        }
        if self.num_classes == 0 || self.per_class == 0 {
            return Err(Error::InvalidParameter(
                "num_classes and per_class must be positive".into(),
            ));
        }
        if self.num_classes > blocks {
            return Err(Error::ClassesExceedGrid {
                classes: self.num_classes,
                blocks,
            });
        }
        if !self.image_size.is_multiple_of(self.grid_k) {
            return Err(Error::InvalidParameter(format!(
                "image size {} not divisible by grid_k {}",
                self.image_size, self.grid_k
            )));
        }
        if self.image_size / self.grid_k < 3 {
            return Err(Error::ImageTooSmall {
                width: self.image_size,
                height: self.image_size,
                k: self.grid_k,
            });
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::InvalidParameter(format!(
                "test fraction {} outside [0, 1)",
                self.test_fraction
            )));
        }
        Ok(())
    }

    /// Block positions (row-major, 0-based) textured for `class`.
    pub fn designated_blocks(&self, class: usize) -> Vec<usize> {
        vec![class * self.grid_k * self.grid_k / self.num_classes]
    }

    pub fn block_rect(&self, block: usize) -> Rect {
        let side = self.image_size / self.grid_k;
        Rect {
            x: (block % self.grid_k) * side,
            y: (block / self.grid_k) * side,
            width: side,
            height: side,
        }
    }

    fn test_count(&self) -> usize {
        ((self.per_class as f64) * self.test_fraction).ceil() as usize
    }

    pub fn split_of(&self, index_in_class: usize) -> Split {
        if index_in_class >= self.per_class - self.test_count() {
            Split::Test
        } else {
            Split::Train
        }
    }

    /// Per-class IRMA code, derived from the seed.
    pub fn class_code(&self, class: usize) -> IrmaCode {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed ^ 0x1A3A, class as u64));
        let mut chars = [0u8; CODE_LENGTH];
        for c in chars.iter_mut() {
            *c = alphabet_char(rng.gen_range(0..ALPHABET_SIZE));
        }
        IrmaCode::from_chars(chars).expect("alphabet characters")
    }

    /// Renders image `index_in_class` of `class`.
    pub fn render(&self, class: usize, index_in_class: usize) -> GrayImage {
        let image_index = (class * self.per_class + index_in_class) as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, image_index));
        let size = self.image_size;
        let mut data: Vec<u8> = (0..size * size)
            .map(|_| {
                let noise = rng.gen_range(-BACKGROUND_NOISE..=BACKGROUND_NOISE);
                (BACKGROUND_LEVEL + noise) as u8
            })
            .collect();
        for block in self.designated_blocks(class) {
            let rect = self.block_rect(block);
            for y in rect.y..rect.y + rect.height {
                for x in rect.x..rect.x + rect.width {
                    let base = if (x + y) % 2 == 0 { CHECKER_HIGH } else { CHECKER_LOW };
                    let noise = rng.gen_range(-TEXTURE_NOISE..=TEXTURE_NOISE);
                    data[y * size + x] = (base + noise).clamp(0, 255) as u8;
                }
            }
        }
        GrayImage::new(size, size, data).expect("validated dimensions")
    }

    fn relative_path(&self, class: usize, index_in_class: usize) -> PathBuf {
        PathBuf::from(format!("images/c{:02}_{:03}.pgm", class + 1, index_in_class))
    }

    /// Manifest of the corpus without touching the filesystem.
    pub fn manifest(&self, base_dir: impl Into<PathBuf>) -> Result<DatasetManifest> {
        self.validate()?;
        let mut records = Vec::with_capacity(self.num_classes * self.per_class);
        for class in 0..self.num_classes {
            let code = self.class_code(class);
            for i in 0..self.per_class {
                records.push(ManifestRecord {
                    path: self.relative_path(class, i),
                    split: self.split_of(i),
                    label: (class + 1).to_string(),
                    code: Some(code),
                });
            }
        }
        DatasetManifest::from_records(base_dir, records)
    }
}

/// Writes all images plus `manifest.csv` under `out_dir`.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    let manifest = spec.manifest(out_dir)?;
    let images_dir = out_dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    for class in 0..spec.num_classes {
        for i in 0..spec.per_class {
            spec.render(class, i)
                .save_pgm(out_dir.join(spec.relative_path(class, i)))?;
        }
    }
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::image::load_image;
    use crate::dataset::manifest::load_manifest;

    fn variance(pixels: &[u8]) -> f64 {
        let n = pixels.len() as f64;
        let mean = pixels.iter().map(|&p| p as f64).sum::<f64>() / n;
        pixels.iter().map(|&p| (p as f64 - mean).powi(2)).sum::<f64>() / n
    }

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            seed: 1,
            num_classes: 4,
            per_class: 10,
            image_size: 64,
            grid_k: 4,
            test_fraction: 0.2,
        }
    }

    #[test]
    fn too_many_classes() {
        let s = SyntheticSpec {
            num_classes: 17,
            ..spec()
        };
        let err = s.validate().unwrap_err();
        assert!(err.to_string().contains("classes exceed grid"));
    }

    #[test]
    fn only_designated_blocks_are_textured() {
        let s = spec();
        for class in 0..s.num_classes {
            let designated = s.designated_blocks(class);
            for i in 0..s.per_class {
                let img = s.render(class, i);
                let variances: Vec<f64> = (0..16)
                    .map(|b| variance(&img.crop_pixels(s.block_rect(b))))
                    .collect();
                let max_bg = (0..16)
                    .filter(|b| !designated.contains(b))
                    .map(|b| variances[b])
                    .fold(0.0, f64::max);
                // uniform integer noise in [-2, 2] has variance 2
                assert!(max_bg <= 4.0, "background variance {max_bg}");
                for &b in &designated {
                    assert!(variances[b] > 10.0 * max_bg, "block {b}: {}", variances[b]);
                    assert!(variances[b] > 1000.0);
                }
            }
        }
    }

    #[test]
    fn designated_positions_are_distinct() {
        let s = SyntheticSpec {
            num_classes: 16,
            ..spec()
        };
        let mut all: Vec<usize> = (0..16).flat_map(|c| s.designated_blocks(c)).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 16);
    }

    #[test]
    fn corpus_on_disk_is_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let s = spec();
        let ma = generate_synthetic_corpus(&s, a.path()).unwrap();
        generate_synthetic_corpus(&s, b.path()).unwrap();
        assert_eq!(ma.entries().len(), 40);
        assert_eq!(ma.class_counts(Split::Train), vec![8; 4]);
        assert_eq!(ma.class_counts(Split::Test), vec![2; 4]);
        for e in ma.entries() {
            let fa = fs::read(a.path().join(&e.path)).unwrap();
            let fb = fs::read(b.path().join(&e.path)).unwrap();
            assert_eq!(fa, fb);
        }
        assert_eq!(
            fs::read(a.path().join(MANIFEST_FILE)).unwrap(),
            fs::read(b.path().join(MANIFEST_FILE)).unwrap()
        );
        let reloaded = load_manifest(a.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(reloaded.entries(), ma.entries());
    }

    #[test]
    fn written_images_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = spec();
        let m = generate_synthetic_corpus(&s, dir.path()).unwrap();
        let e = &m.entries()[13];
        let loaded = load_image(m.resolve(e)).unwrap();
        let rendered = s.render(e.class, 13 % s.per_class);
        assert_eq!(loaded.to_pgm_bytes(), rendered.to_pgm_bytes());
        assert_eq!(loaded, rendered);
    }
}
