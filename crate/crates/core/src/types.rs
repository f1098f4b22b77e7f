//! Shared domain vocabulary: entity ids, the dimension schedule and
//! training tuples.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! dense_id {
    ($name:ident, $label:literal) => {
        #[doc = concat!("Dense index of a ", $label, ".")]
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl From<usize> for $name {
            #[inline]
            fn from(index: usize) -> Self {
                $name(u32::try_from(index).expect(concat!($label, " index overflows u32")))
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

dense_id!(UserId, "user");
dense_id!(ItemId, "item");

/// Nested dimension sizes `d_1 < d_2 < ... < d_L = d` with one loss weight
/// per level.
///
/// Levels are 1-based throughout the public API; `bound(0)` is defined as 0
/// so that block `(x, y)` always spans `[bound(x), bound(y))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSchedule {
    sizes: Vec<usize>,
    weights: Vec<f64>,
}

impl DimensionSchedule {
    /// Validates `sizes` against `full_dim` and attaches uniform weights `1/L`.
    pub fn new(sizes: &[usize], full_dim: usize) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::EmptySchedule);
        }
        if full_dim == 0 || sizes.contains(&0) {
            return Err(Error::NonPositiveSize);
        }
        if sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::NotStrictlyIncreasing(sizes.to_vec()));
        }
        let last = *sizes.last().unwrap();
        if last != full_dim {
            return Err(Error::LastSizeMismatch { last, full_dim });
        }
        let w = 1.0 / sizes.len() as f64;
        Ok(Self {
            sizes: sizes.to_vec(),
            weights: vec![w; sizes.len()],
        })
    }

    /// Schedule with a single level covering the full dimension.
    pub fn single(full_dim: usize) -> Result<Self> {
        Self::new(&[full_dim], full_dim)
    }

    /// Replaces the uniform weights.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.sizes.len() {
            return Err(Error::InvalidWeights(format!(
                "{} weights for {} levels",
                weights.len(),
                self.sizes.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidWeights(format!(
                "weights must be finite and non-negative: {weights:?}"
            )));
        }
        self.weights = weights;
        Ok(self)
    }

    /// Number of levels `L`.
    #[inline]
    pub fn levels(&self) -> usize {
        self.sizes.len()
    }

    #[inline]
    pub fn full_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `d_l` for `l` in `0..=L`, with `d_0 = 0`.
    #[inline]
    pub fn bound(&self, l: usize) -> usize {
        if l == 0 {
            0
        } else {
            self.sizes[l - 1]
        }
    }

    /// `d_l` for a 1-based level.
    pub fn size(&self, level: usize) -> Result<usize> {
        self.check_level(level)?;
        Ok(self.sizes[level - 1])
    }

    /// `w_l` for a 1-based level.
    pub fn weight(&self, level: usize) -> Result<f64> {
        self.check_level(level)?;
        Ok(self.weights[level - 1])
    }

    pub fn check_level(&self, level: usize) -> Result<()> {
        if level == 0 || level > self.levels() {
            Err(Error::LevelOutOfRange {
                level,
                levels: self.levels(),
            })
        } else {
            Ok(())
        }
    }

    /// Dimension range `[d_x, d_y)` of block `(x, y)`.
    pub fn block(&self, x: usize, y: usize) -> Result<std::ops::Range<usize>> {
        if x >= y || y > self.levels() {
            return Err(Error::InvalidBlockRange {
                x,
                y,
                levels: self.levels(),
            });
        }
        Ok(self.bound(x)..self.bound(y))
    }

    /// The `L` sizes of the default geometric schedule `{d/2^(L-1), ..., d/2, d}`.
    pub fn geometric(full_dim: usize, levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::EmptySchedule);
        }
        let sizes: Vec<usize> = (0..levels)
            .rev()
            .map(|shift| full_dim.checked_shr(shift as u32).unwrap_or(0))
            .collect();
        Self::new(&sizes, full_dim)
    }
}

/// `(u, i, j_1, ..., j_L)`: one observed pair plus one negative per level.
/// With a single negative it is a classic BPR triplet.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrainingTuple {
    pub user: UserId,
    pub positive: ItemId,
    pub negatives: Vec<ItemId>,
}

impl TrainingTuple {
    pub fn triplet(user: UserId, positive: ItemId, negative: ItemId) -> Self {
        Self {
            user,
            positive,
            negatives: vec![negative],
        }
    }

    pub fn new(user: UserId, positive: ItemId, negatives: Vec<ItemId>) -> Self {
        Self {
            user,
            positive,
            negatives,
        }
    }

    /// Number of distinct negatives minus one, i.e. how many levels reused a
    /// negative already chosen at another level.
    pub fn repeated_negatives(&self) -> usize {
        let mut seen = self.negatives.clone();
        seen.sort_unstable();
        seen.dedup();
        self.negatives.len() - seen.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_protocol_schedule() {
        let s = DimensionSchedule::new(&[4, 8, 16, 32, 64], 64).unwrap();
        assert_eq!(s.levels(), 5);
        assert_eq!(s.weights(), &[0.2; 5]);
        assert_eq!(s.full_dim(), 64);
        assert_eq!(s.bound(0), 0);
        assert_eq!(s.bound(3), 16);
    }

    #[test]
    fn single_level_has_unit_weight() {
        let s = DimensionSchedule::new(&[64], 64).unwrap();
        assert_eq!(s.levels(), 1);
        assert_eq!(s.weights(), &[1.0]);
    }

    #[test]
    fn rejects_invalid_schedules() {
        assert!(matches!(
            DimensionSchedule::new(&[8, 8, 64], 64),
            Err(Error::NotStrictlyIncreasing(_))
        ));
        assert!(matches!(
            DimensionSchedule::new(&[4, 8], 16),
            Err(Error::LastSizeMismatch { last: 8, full_dim: 16 })
        ));
        assert!(matches!(
            DimensionSchedule::new(&[0, 8], 8),
            Err(Error::NonPositiveSize)
        ));
        assert!(matches!(
            DimensionSchedule::new(&[], 8),
            Err(Error::EmptySchedule)
        ));
        assert!(matches!(
            DimensionSchedule::new(&[8], 0),
            Err(Error::NonPositiveSize)
        ));
    }

    #[test]
    fn weights_validated() {
        let s = DimensionSchedule::new(&[2, 4], 4).unwrap();
        assert!(s.clone().with_weights(vec![0.3]).is_err());
        assert!(s.clone().with_weights(vec![0.3, -0.1]).is_err());
        let s = s.with_weights(vec![0.0, 2.0]).unwrap();
        assert_eq!(s.weight(2).unwrap(), 2.0);
    }

    #[test]
    fn blocks_follow_zero_based_bounds() {
        let s = DimensionSchedule::new(&[2, 4, 8], 8).unwrap();
        assert_eq!(s.block(1, 2).unwrap(), 2..4);
        assert_eq!(s.block(0, 2).unwrap(), 0..4);
        assert!(matches!(
            s.block(2, 1),
            Err(Error::InvalidBlockRange { .. })
        ));
        assert!(s.block(0, 4).is_err());
    }

    #[test]
    fn geometric_schedule() {
        let s = DimensionSchedule::geometric(64, 5).unwrap();
        assert_eq!(s.sizes(), &[4, 8, 16, 32, 64]);
        let s = DimensionSchedule::geometric(64, 2).unwrap();
        assert_eq!(s.sizes(), &[32, 64]);
        assert!(DimensionSchedule::geometric(4, 4).is_err());
    }

    #[test]
    fn repeat_count() {
        let t = TrainingTuple::new(UserId(0), ItemId(1), vec![ItemId(2), ItemId(2), ItemId(3)]);
        assert_eq!(t.repeated_negatives(), 1);
        let t = TrainingTuple::triplet(UserId(0), ItemId(1), ItemId(2));
        assert_eq!(t.repeated_negatives(), 0);
    }

    proptest::proptest! {
        #[test]
        fn default_weights_sum_to_one(mut sizes in proptest::collection::btree_set(1usize..512, 1..12)) {
            let sizes: Vec<usize> = std::mem::take(&mut sizes).into_iter().collect();
            let full = *sizes.last().unwrap();
            let s = DimensionSchedule::new(&sizes, full).unwrap();
            let total: f64 = s.weights().iter().sum();
            proptest::prop_assert!((total - 1.0).abs() < 1e-12);
            proptest::prop_assert!(s.sizes().windows(2).all(|w| w[0] < w[1]));
        }
    }
}
