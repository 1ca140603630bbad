//! Block grids and per-block local binary pattern histograms.
//!
//! Codes use the 3x3 neighbourhood of each interior pixel. Neighbours are
//! visited clockwise from the top-left corner and neighbour `i` sets bit `i`
//! (weight `2^i`) when its intensity is `>=` the centre:
//!
//! ```text
//! 0 1 2
//! 7 c 3
//! 6 5 4
//! ```
//!
//! Block border pixels produce no code; histograms are normalized by the
//! number of interior pixels.

use std::path::Path;

use crate::codec::{read_file, write_file, Decoder, Encoder};
use crate::dataset::{GrayImage, Rect};
use crate::error::{Error, Result};

pub const LBP_BINS: usize = 256;

/// Offsets `(dx, dy)` of the eight neighbours in bit order.
pub const NEIGHBOR_OFFSETS: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
];

/// A `k x k` partition of an image into equal blocks, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockGrid {
    k: usize,
    rects: Vec<Rect>,
}

impl BlockGrid {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rects(&self) -> &[Rect] {
        &self.rects
    }

    pub fn block_width(&self) -> usize {
        self.rects[0].width
    }

    pub fn block_height(&self) -> usize {
        self.rects[0].height
    }
}

/// Splits `image` into `k x k` blocks of `floor(w/k) x floor(h/k)` pixels.
/// Remainder columns and rows on the right and bottom are discarded.
pub fn block_grid(image: &GrayImage, k: usize) -> Result<BlockGrid> {
    grid_for_size(image.width(), image.height(), k)
}

pub fn grid_for_size(width: usize, height: usize, k: usize) -> Result<BlockGrid> {
    if k == 0 {
        return Err(Error::InvalidParameter("grid order k must be positive".into()));
    }
    let (bw, bh) = (width / k, height / k);
    if bw < 3 || bh < 3 {
        return Err(Error::ImageTooSmall { width, height, k });
    }
    let rects = (0..k * k)
        .map(|j| Rect {
            x: (j % k) * bw,
            y: (j / k) * bh,
            width: bw,
            height: bh,
        })
        .collect();
    Ok(BlockGrid { k, rects })
}

/// LBP code of a 3x3 window given as rows.
pub fn lbp_code(window: &[[u8; 3]; 3]) -> u8 {
    let center = window[1][1];
    let mut code = 0u8;
    for (bit, (dx, dy)) in NEIGHBOR_OFFSETS.iter().enumerate() {
        let neighbor = window[(1 + dy) as usize][(1 + dx) as usize];
        if neighbor >= center {
            code |= 1 << bit;
        }
    }
    code
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbpHistogram {
    bins: Vec<f64>,
}

impl LbpHistogram {
    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn into_bins(self) -> Vec<f64> {
        self.bins
    }
}

/// Histogram of a row-major `width x height` block. Blocks smaller than 3x3
/// yield an all-zero histogram.
pub fn lbp_histogram(pixels: &[u8], width: usize, height: usize) -> LbpHistogram {
    assert_eq!(pixels.len(), width * height, "block buffer size");
    let mut bins = vec![0.0; LBP_BINS];
    accumulate_histogram(pixels, width, Rect { x: 0, y: 0, width, height }, &mut bins);
    LbpHistogram { bins }
}

/// Histogram of the block `rect` of `image`.
pub fn lbp_histogram_in(image: &GrayImage, rect: Rect) -> LbpHistogram {
    let mut bins = vec![0.0; LBP_BINS];
    accumulate_histogram(image.data(), image.width(), rect, &mut bins);
    LbpHistogram { bins }
}

fn accumulate_histogram(data: &[u8], stride: usize, rect: Rect, out: &mut [f64]) {
    debug_assert_eq!(out.len(), LBP_BINS);
    if rect.width < 3 || rect.height < 3 {
        out.fill(0.0);
        return;
    }
    let mut counts = [0u32; LBP_BINS];
    for y in rect.y + 1..rect.y + rect.height - 1 {
        let above = &data[(y - 1) * stride..y * stride];
        let row = &data[y * stride..(y + 1) * stride];
        let below = &data[(y + 1) * stride..(y + 2) * stride];
        for x in rect.x + 1..rect.x + rect.width - 1 {
            let c = row[x];
            let code = (above[x - 1] >= c) as u8
                | ((above[x] >= c) as u8) << 1
                | ((above[x + 1] >= c) as u8) << 2
                | ((row[x + 1] >= c) as u8) << 3
                | ((below[x + 1] >= c) as u8) << 4
                | ((below[x] >= c) as u8) << 5
                | ((below[x - 1] >= c) as u8) << 6
                | ((row[x - 1] >= c) as u8) << 7;
            counts[code as usize] += 1;
        }
    }
    let total = ((rect.width - 2) * (rect.height - 2)) as f64;
    for (o, &c) in out.iter_mut().zip(counts.iter()) {
        *o = c as f64 / total;
    }
}

/// `k^2` LBP histograms in block order, stored flat (`256 * k^2` values).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockFeatureVector {
    k: usize,
    values: Vec<f64>,
}

impl BlockFeatureVector {
    pub fn from_values(k: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != LBP_BINS * k * k {
            return Err(Error::DimensionMismatch {
                expected: LBP_BINS * k * k,
                actual: values.len(),
            });
        }
        Ok(Self { k, values })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_blocks(&self) -> usize {
        self.k * self.k
    }

    /// Concatenated histograms.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Histogram of block `j` (0-based, row-major).
    pub fn slot(&self, j: usize) -> &[f64] {
        &self.values[j * LBP_BINS..(j + 1) * LBP_BINS]
    }

    pub fn slots(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.values.chunks_exact(LBP_BINS)
    }
}

pub fn extract_features(image: &GrayImage, k: usize) -> Result<BlockFeatureVector> {
    let grid = block_grid(image, k)?;
    let mut values = vec![0.0; LBP_BINS * k * k];
    for (rect, out) in grid.rects().iter().zip(values.chunks_exact_mut(LBP_BINS)) {
        accumulate_histogram(image.data(), image.width(), *rect, out);
    }
    Ok(BlockFeatureVector { k, values })
}

/// One image's entry in a feature store.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub image_id: u64,
    pub class: usize,
    pub features: BlockFeatureVector,
}

const STORE_MAGIC: &[u8; 4] = b"LBPF";
const STORE_VERSION: u32 = 1;

/// Contents of a feature-store file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    pub k: usize,
    pub num_classes: usize,
    pub records: Vec<FeatureRecord>,
}

impl FeatureStore {
    /// Layout: magic `LBPF`, version, `k: u32`, `count: u64`,
    /// `classes: u32`, then per record `id: u64`, `class: u32` and
    /// `256 k^2` f64 values, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::with_header(STORE_MAGIC, STORE_VERSION);
        enc.u32(self.k as u32);
        enc.u64(self.records.len() as u64);
        enc.u32(self.num_classes as u32);
        for r in &self.records {
            enc.u64(r.image_id);
            enc.u32(r.class as u32);
            enc.f64s(r.features.values());
        }
        enc.finish()
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut dec = Decoder::new(bytes, path, STORE_MAGIC, STORE_VERSION)?;
        let k = dec.u32()? as usize;
        let count = dec.u64()? as usize;
        let num_classes = dec.u32()? as usize;
        if k == 0 || k > 64 {
            return Err(dec.error(&format!("implausible grid order {k}")));
        }
        let mut records = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let image_id = dec.u64()?;
            let class = dec.u32()? as usize;
            if class >= num_classes {
                return Err(dec.error(&format!("class {class} out of range")));
            }
            let values = dec.f64s(LBP_BINS * k * k)?;
            records.push(FeatureRecord {
                image_id,
                class,
                features: BlockFeatureVector { k, values },
            });
        }
        dec.finish()?;
        Ok(Self {
            k,
            num_classes,
            records,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&read_file(path)?, path)
    }
}
