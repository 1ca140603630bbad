//! Image ingestion, class manifests, IRMA codes and the synthetic corpus.

mod image;
mod irma;
mod manifest;
mod synthetic;

pub use image::{decode_pgm, load_image, GrayImage, Rect, MIN_SIDE};
pub use irma::{
    alphabet_char, is_code_char, parse_irma_code, IrmaCode, ALPHABET_SIZE, AXIS_LENGTHS, CODE_LENGTH,
};
pub use manifest::{load_manifest, DatasetManifest, ManifestEntry, ManifestRecord, Split};
pub use synthetic::{generate_synthetic_corpus, mix_seed, SyntheticSpec, MANIFEST_FILE};
