//! Block masks: which grid positions take part in similarity search.
//!
//! For a class and reduction fraction `d`, the `floor(d * k^2)` positions
//! with the lowest mean reconstruction error are dropped. Selection is by
//! rank, so scaling a class's error row never changes its mask. Ties drop
//! the lower block index first.

use crate::autoencoder::ErrorHistogram;
use crate::error::{Error, Result};
use crate::features::{BlockFeatureVector, LBP_BINS};

/// Number of positions dropped for reduction `d` on a `k x k` grid.
///
/// A small tolerance absorbs representation error so that e.g. `0.29` on a
/// 10x10 grid drops 29 blocks rather than 28.
pub fn dropped_count(d: f64, k: usize) -> usize {
    let blocks = (k * k) as f64;
    ((d * blocks) + 1e-9).floor().min(blocks) as usize
}

pub fn validate_reduction(d: f64) -> Result<()> {
    if !(0.0..1.0).contains(&d) {
        return Err(Error::InvalidParameter(format!(
            "reduction fraction {d} outside [0, 1)"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BlockMask {
    k: usize,
    keep: Vec<bool>,
}

impl BlockMask {
    pub fn all(k: usize) -> Self {
        Self {
            k,
            keep: vec![true; k * k],
        }
    }

    pub fn from_keep(k: usize, keep: Vec<bool>) -> Result<Self> {
        if keep.len() != k * k {
            return Err(Error::DimensionMismatch {
                expected: k * k,
                actual: keep.len(),
            });
        }
        Ok(Self { k, keep })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn kept_count(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn kept_blocks(&self) -> impl Iterator<Item = usize> + '_ {
        self.keep.iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i)
    }

    pub fn dropped_blocks(&self) -> Vec<usize> {
        self.keep
            .iter()
            .enumerate()
            .filter(|(_, &k)| !k)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Mask from raw per-position mean errors.
pub fn mask_from_errors(mean_errors: &[f64], d: f64, k: usize) -> Result<BlockMask> {
    validate_reduction(d)?;
    if mean_errors.len() != k * k {
        return Err(Error::DimensionMismatch {
            expected: k * k,
            actual: mean_errors.len(),
        });
    }
    let mut order: Vec<usize> = (0..k * k).collect();
    order.sort_by(|&a, &b| mean_errors[a].total_cmp(&mean_errors[b]).then(a.cmp(&b)));
    let mut keep = vec![true; k * k];
    for &j in order.iter().take(dropped_count(d, k)) {
        keep[j] = false;
    }
    Ok(BlockMask { k, keep })
}

/// Mask for `class` from its error-histogram row.
pub fn relevance_mask(hist: &ErrorHistogram, class: usize, d: f64, k: usize) -> Result<BlockMask> {
    if hist.k() != k {
        return Err(Error::InvalidParameter(format!(
            "error histogram built for k = {}, requested k = {k}",
            hist.k()
        )));
    }
    let means = hist.mean_errors(class)?;
    mask_from_errors(&means, d, k)
}

/// Concatenation of the kept slots, in block order.
pub fn apply_mask(features: &BlockFeatureVector, mask: &BlockMask) -> Result<Vec<f64>> {
    if features.k() != mask.k() {
        return Err(Error::InvalidParameter(format!(
            "feature grid k = {} does not match mask k = {}",
            features.k(),
            mask.k()
        )));
    }
    let mut out = Vec::with_capacity(LBP_BINS * mask.kept_count());
    for j in mask.kept_blocks() {
        out.extend_from_slice(features.slot(j));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quarter_of_sixteen() {
        let m = mask_from_errors(&(0..16).map(|i| i as f64).collect::<Vec<_>>(), 0.25, 4).unwrap();
        assert_eq!(m.dropped_blocks(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn eighth_of_twenty_five() {
        assert_eq!(dropped_count(1.0 / 8.0, 5), 3);
        let m = mask_from_errors(&[1.0; 25], 0.125, 5).unwrap();
        assert_eq!(m.kept_count(), 22);
        // all tied: lowest indices go first
        assert_eq!(m.dropped_blocks(), vec![0, 1, 2]);
    }

    #[test]
    fn sort_oracle_example() {
        let m = mask_from_errors(&[0.9, 0.1, 0.5, 0.1], 0.5, 2).unwrap();
        assert_eq!(m.dropped_blocks(), vec![1, 3]);
    }

    #[test]
    fn zero_reduction_keeps_all() {
        let m = mask_from_errors(&[0.3, 0.1, 0.2, 0.0], 0.0, 2).unwrap();
        assert_eq!(m, BlockMask::all(2));
    }

    #[test]
    fn reduction_out_of_range() {
        assert!(mask_from_errors(&[0.0; 4], 1.0, 2).is_err());
        assert!(mask_from_errors(&[0.0; 4], -0.1, 2).is_err());
    }

    #[test]
    fn cardinality_table() {
        for k in [4usize, 5, 6] {
            for d in [0.0, 0.125, 0.25, 0.5] {
                let errors: Vec<f64> = (0..k * k).map(|i| ((i * 37) % 11) as f64).collect();
                let m = mask_from_errors(&errors, d, k).unwrap();
                let expected_drop = (d * (k * k) as f64).floor() as usize;
                assert_eq!(m.kept_count(), k * k - expected_drop, "k={k} d={d}");
            }
        }
    }

    #[test]
    fn masked_lengths() {
        let f = BlockFeatureVector::from_values(4, (0..4096).map(|i| i as f64).collect()).unwrap();
        assert_eq!(apply_mask(&f, &BlockMask::all(4)).unwrap(), f.values());
        let m = mask_from_errors(&[0.0; 16], 0.5, 4).unwrap();
        assert_eq!(apply_mask(&f, &m).unwrap().len(), 256 * 8);
        assert!(apply_mask(&f, &BlockMask::all(3)).is_err());
    }

    #[test]
    fn masked_equals_index_slice() {
        let f = BlockFeatureVector::from_values(3, (0..2304).map(|i| (i as f64).sin()).collect()).unwrap();
        let m = BlockMask::from_keep(3, vec![true, false, true, false, false, true, true, false, true]).unwrap();
        let kept = [0usize, 2, 5, 6, 8];
        let oracle: Vec<f64> = kept
            .iter()
            .flat_map(|&j| f.values()[j * 256..(j + 1) * 256].iter().copied())
            .collect();
        assert_eq!(apply_mask(&f, &m).unwrap(), oracle);
    }

    proptest! {
        #[test]
        fn order_consistency(errors in proptest::collection::vec(0.0f64..1.0, 25), d in 0.0f64..0.99) {
            let m = mask_from_errors(&errors, d, 5).unwrap();
            let max_dropped = m.dropped_blocks().iter().map(|&j| errors[j]).fold(f64::MIN, f64::max);
            let min_kept = m.kept_blocks().map(|j| errors[j]).fold(f64::MAX, f64::min);
            prop_assert!(max_dropped <= min_kept);
            prop_assert_eq!(m.kept_count(), 25 - dropped_count(d, 5));
        }

        #[test]
        fn scaling_invariance(errors in proptest::collection::vec(0.0f64..1.0, 16), scale in 1e-3f64..1e3, d in 0.0f64..0.99) {
            let scaled: Vec<f64> = errors.iter().map(|e| e * scale).collect();
            prop_assert_eq!(mask_from_errors(&errors, d, 4).unwrap(), mask_from_errors(&scaled, d, 4).unwrap());
        }
    }
}
