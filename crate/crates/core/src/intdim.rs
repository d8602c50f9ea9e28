//! Maximum-likelihood intrinsic dimensionality from k-nearest-neighbor distances.
//!
//! For a sample x with sorted neighbor distances T_1(x) <= ... <= T_k(x):
//!
//! ```text
//! m_k(x) = [ 1/(k-1) * sum_{j=1}^{k-1} ln(T_k(x) / T_j(x)) ]^-1
//! ```
//!
//! The dataset estimate for each k is the mean of m_k(x) over samples, and the pooled
//! estimate is the mean over a range of k.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entropy::{self, EntropyError};
use crate::ingest::{self, GrayImage, IngestError};

#[derive(Debug, Error)]
pub enum IdError {
    #[error("no samples to build features from")]
    NoSamples,
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("k_max = {k_max} must be below the sample count {n}")]
    KTooLarge { k_max: usize, n: usize },
    #[error("invalid k range [{k1}, {k2}] for k_max = {k_max}")]
    BadKRange { k1: usize, k2: usize, k_max: usize },
    #[error("k = {k} is invalid for a row of length {len}")]
    BadK { k: usize, len: usize },
    #[error("point is degenerate: its neighbor distances do not determine a dimension")]
    DegeneratePoint,
    #[error("every sample is degenerate at k = {k}")]
    AllDegenerate { k: usize },
    #[error("feature vector {index} has dimension {got}, expected {expected}")]
    DimensionMismatch { index: usize, got: usize, expected: usize },
    #[error("feature vector {0} has a non-finite component")]
    NonFinite(usize),
    #[error("invalid feature mode: {0}")]
    BadMode(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
}

/// How each image is mapped to a point in feature space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FeatureMode {
    /// Box-downsample to `side x side`, scale to [0, 1] and flatten.
    FlatPixels { side: usize },
    /// Flattened symmetric GLCM at the default offset, quantized to `levels`.
    GlcmFlat { levels: usize },
}

impl Default for FeatureMode {
    fn default() -> Self {
        FeatureMode::FlatPixels { side: 32 }
    }
}

impl FeatureMode {
    pub fn dimension(&self) -> usize {
        match *self {
            FeatureMode::FlatPixels { side } => side * side,
            FeatureMode::GlcmFlat { levels } => levels * levels,
        }
    }

    pub fn validate(&self) -> Result<(), IdError> {
        match *self {
            FeatureMode::FlatPixels { side } if side < 2 => {
                Err(IdError::BadMode(format!("flat_pixels side must be >= 2, got {side}")))
            }
            FeatureMode::GlcmFlat { levels } if !(2..=64).contains(&levels) => {
                Err(IdError::BadMode(format!("glcm_flat levels must lie in 2..=64, got {levels}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub sample_id: usize,
    pub values: Vec<f64>,
}

/// Dense row-major matrix of feature vectors sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    dim: usize,
    ids: Vec<usize>,
    data: Vec<f64>,
}

impl FeatureSet {
    pub fn from_vectors(vectors: Vec<FeatureVector>) -> Result<Self, IdError> {
        let dim = vectors.first().ok_or(IdError::NoSamples)?.values.len();
        let mut ids = Vec::with_capacity(vectors.len());
        let mut data = Vec::with_capacity(vectors.len() * dim);
        for (index, v) in vectors.into_iter().enumerate() {
            if v.values.len() != dim {
                return Err(IdError::DimensionMismatch {
                    index,
                    got: v.values.len(),
                    expected: dim,
                });
            }
            if v.values.iter().any(|x| !x.is_finite()) {
                return Err(IdError::NonFinite(index));
            }
            ids.push(v.sample_id);
            data.extend_from_slice(&v.values);
        }
        Ok(Self { dim, ids, data })
    }

    /// Rows are given in order; sample ids are their positions.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, IdError> {
        Self::from_vectors(
            rows.into_iter()
                .enumerate()
                .map(|(sample_id, values)| FeatureVector { sample_id, values })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample_ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn scaled(&self, s: f64) -> FeatureSet {
        FeatureSet {
            dim: self.dim,
            ids: self.ids.clone(),
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }
}

pub fn feature_vector(image: &GrayImage, mode: FeatureMode) -> Result<Vec<f64>, IdError> {
    mode.validate()?;
    match mode {
        FeatureMode::FlatPixels { side } => {
            let small = ingest::downsample_raw(image, side, side)?;
            Ok(small.into_iter().map(|v| v as f64 / 255.0).collect())
        }
        FeatureMode::GlcmFlat { levels } => {
            let glcm = entropy::compute_glcm(image, levels, (1, 0), true)?;
            Ok(glcm.into_probs())
        }
    }
}

/// Maps each image to its feature vector; sample ids are positions in `images`.
pub fn build_features(images: &[GrayImage], mode: FeatureMode) -> Result<FeatureSet, IdError> {
    if images.is_empty() {
        return Err(IdError::NoSamples);
    }
    mode.validate()?;
    let rows = images
        .par_iter()
        .map(|im| feature_vector(im, mode))
        .collect::<Result<Vec<_>, _>>()?;
    FeatureSet::from_rows(rows)
}

/// Sorted nearest-neighbor distances and ids for every sample, self excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnTable {
    n: usize,
    k_max: usize,
    dists: Vec<f64>,
    indices: Vec<usize>,
}

impl KnnTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn dists(&self, i: usize) -> &[f64] {
        &self.dists[i * self.k_max..(i + 1) * self.k_max]
    }

    pub fn indices(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k_max..(i + 1) * self.k_max]
    }
}

#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Exact brute-force Euclidean k-NN; ties go to the lower sample index.
pub fn knn_table(features: &FeatureSet, k_max: usize) -> Result<KnnTable, IdError> {
    let n = features.len();
    if n < 2 {
        return Err(IdError::TooFewSamples(n));
    }
    if k_max >= n {
        return Err(IdError::KTooLarge { k_max, n });
    }
    if k_max == 0 {
        return Err(IdError::BadK { k: 0, len: n - 1 });
    }
    let rows: Vec<Vec<(f64, usize)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let q = features.row(i);
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (euclidean(q, features.row(j)), j))
                .collect();
            if k_max < cand.len() {
                cand.select_nth_unstable_by(k_max - 1, by_distance_then_index);
                cand.truncate(k_max);
            }
            cand.sort_unstable_by(by_distance_then_index);
            cand
        })
        .collect();
    let mut dists = Vec::with_capacity(n * k_max);
    let mut indices = Vec::with_capacity(n * k_max);
    for row in rows {
        for (d, j) in row {
            dists.push(d);
            indices.push(j);
        }
    }
    Ok(KnnTable {
        n,
        k_max,
        dists,
        indices,
    })
}

/// Estimator for one sample from its sorted neighbor distances, using the first `k`.
///
/// Zero distances T_j (duplicates) are dropped from the sum and the normalizer shrinks
/// accordingly. A zero T_k, or a zero log-sum, makes the point degenerate.
pub fn mle_id_point(row: &[f64], k: usize) -> Result<f64, IdError> {
    if k < 2 || k > row.len() {
        return Err(IdError::BadK { k, len: row.len() });
    }
    let tk = row[k - 1];
    if tk.is_nan() || tk <= 0.0 {
        return Err(IdError::DegeneratePoint);
    }
    let mut sum = 0.0;
    let mut terms = 0usize;
    for &tj in &row[..k - 1] {
        if tj > 0.0 {
            sum += (tk / tj).ln();
            terms += 1;
        }
    }
    if terms == 0 || sum.is_nan() || sum <= 0.0 {
        return Err(IdError::DegeneratePoint);
    }
    Ok(terms as f64 / sum)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdEstimate {
    pub k_range: (usize, usize),
    /// Dataset-mean estimate for each k.
    pub per_k: BTreeMap<usize, f64>,
    /// Sample standard deviation of the per-point estimates for each k.
    pub per_k_spread: BTreeMap<usize, f64>,
    pub pooled: f64,
    pub n: usize,
    /// Samples that were degenerate for at least one k in the range.
    pub degenerate: usize,
}

impl IdEstimate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("estimate serializes")
    }
}

pub fn mle_id_dataset(table: &KnnTable, k1: usize, k2: usize) -> Result<IdEstimate, IdError> {
    if k1 < 2 || k1 > k2 || k2 > table.k_max {
        return Err(IdError::BadKRange {
            k1,
            k2,
            k_max: table.k_max,
        });
    }
    let mut per_k = BTreeMap::new();
    let mut per_k_spread = BTreeMap::new();
    let mut degenerate = vec![false; table.n];
    for k in k1..=k2 {
        let mut values = Vec::with_capacity(table.n);
        for (i, flag) in degenerate.iter_mut().enumerate() {
            match mle_id_point(table.dists(i), k) {
                Ok(m) => values.push(m),
                Err(_) => *flag = true,
            }
        }
        if values.is_empty() {
            return Err(IdError::AllDegenerate { k });
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let spread = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        per_k.insert(k, mean);
        per_k_spread.insert(k, spread);
    }
    let pooled = per_k.values().sum::<f64>() / per_k.len() as f64;
    let degenerate = degenerate.iter().filter(|&&d| d).count();
    if degenerate > 0 {
        log::warn!("event=id_degenerate samples={degenerate} n={}", table.n);
    }
    Ok(IdEstimate {
        k_range: (k1, k2),
        per_k,
        per_k_spread,
        pooled,
        n: table.n,
        degenerate,
    })
}

/// Convenience: k-NN table up to `k2` followed by the pooled estimate over `[k1, k2]`.
pub fn estimate_id(features: &FeatureSet, k1: usize, k2: usize) -> Result<IdEstimate, IdError> {
    let table = knn_table(features, k2)?;
    mle_id_dataset(&table, k1, k2)
}
