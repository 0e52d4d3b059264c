//! Seeded train/validation/test partitions.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ebac::LabeledPoint;
use crate::features::N_FEATURES;

pub const MIN_POINTS: usize = 10;
pub const MAX_RESHUFFLES: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("{0} points, at least {MIN_POINTS} required")]
    TooFewPoints(usize),
    #[error("no shuffle in {MAX_RESHUFFLES} attempts put a positive eBAC point in every split")]
    ReshuffleExhausted,
    #[error("split fractions must be positive and sum to 1")]
    BadFractions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.70,
            val_frac: 0.15,
            test_frac: 0.15,
            seed: 20_180_401,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let fr = [self.train_frac, self.val_frac, self.test_frac];
        if fr.iter().any(|f| f.is_nan() || *f <= 0.0) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DatasetError::BadFractions);
        }
        Ok(())
    }

    /// `(train, val, test)` sizes for `n` points; train takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let val = (n as f64 * self.val_frac).round() as usize;
        let test = (n as f64 * self.test_frac).round() as usize;
        (n - val - test, val, test)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<LabeledPoint>,
    pub val: Vec<LabeledPoint>,
    pub test: Vec<LabeledPoint>,
}

/// Index form of a split, as persisted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles indices with a generator seeded only by `spec.seed`, reshuffling
/// until every part holds a positive-eBAC point (when the data has any).
pub fn split_indices(labels: &[f64], spec: &SplitSpec) -> Result<SplitIndices, DatasetError> {
    let n = labels.len();
    if n < MIN_POINTS {
        return Err(DatasetError::TooFewPoints(n));
    }
    spec.validate()?;
    let (n_train, n_val, _) = spec.sizes(n);
    let any_positive = labels.iter().any(|&y| y > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..MAX_RESHUFFLES {
        order.shuffle(&mut rng);
        let (train, rest) = order.split_at(n_train);
        let (val, test) = rest.split_at(n_val);
        let has_pos = |part: &[usize]| part.iter().any(|&i| labels[i] > 0.0);
        if !any_positive || (has_pos(train) && has_pos(val) && has_pos(test)) {
            return Ok(SplitIndices {
                train: train.to_vec(),
                val: val.to_vec(),
                test: test.to_vec(),
            });
        }
    }
    Err(DatasetError::ReshuffleExhausted)
}

pub fn split(points: &[LabeledPoint], spec: &SplitSpec) -> Result<Split, DatasetError> {
    let labels: Vec<f64> = points.iter().map(|p| p.label.ebac).collect();
    let idx = split_indices(&labels, spec)?;
    Ok(apply_indices(points, &idx))
}

pub fn apply_indices(points: &[LabeledPoint], idx: &SplitIndices) -> Split {
    let pick = |ix: &[usize]| ix.iter().map(|&i| points[i].clone()).collect();
    Split {
        train: pick(&idx.train),
        val: pick(&idx.val),
        test: pick(&idx.test),
    }
}

/// Feature matrix (one row per point) and eBAC target vector.
pub fn design(points: &[LabeledPoint]) -> (DMatrix<f64>, DVector<f64>) {
    let x = DMatrix::from_fn(points.len(), N_FEATURES, |i, j| points[i].features.values[j]);
    let y = DVector::from_iterator(points.len(), points.iter().map(|p| p.label.ebac));
    (x, y)
}

/// Split manifest: recording ids per part plus the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn new(split: &Split, seed: u64) -> Self {
        let ids = |v: &[LabeledPoint]| v.iter().map(|p| p.features.recording_id.clone()).collect();
        Self {
            seed,
            train: ids(&split.train),
            val: ids(&split.val),
            test: ids(&split.test),
        }
    }

    /// Rebuilds the split from joined points by recording id.
    pub fn resolve(&self, points: &[LabeledPoint]) -> Option<Split> {
        let lookup = |ids: &[String]| -> Option<Vec<LabeledPoint>> {
            ids.iter()
                .map(|id| points.iter().find(|p| &p.features.recording_id == id).cloned())
                .collect()
        };
        Some(Split {
            train: lookup(&self.train)?,
            val: lookup(&self.val)?,
            test: lookup(&self.test)?,
        })
    }
}
