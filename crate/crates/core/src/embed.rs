//! Two-dimensional UMAP embedding of a feature set.
//!
//! Pipeline: exact k-NN table, per-point smooth-kNN normalization, fuzzy-union
//! symmetrization, fit of the low-dimensional similarity curve `1 / (1 + a d^(2b))`,
//! spectral (or random) initialization, then epoch-scheduled SGD on the fuzzy
//! cross-entropy with negative sampling.
//!
//! Optimization is sequential and driven by a seeded ChaCha RNG, so a fixed
//! configuration reproduces the same embedding bit for bit regardless of the
//! rayon thread count used by the graph stages.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intdim::{self, FeatureSet, IdError, KnnTable};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("curve fit did not converge; best so far a={a}, b={b}")]
    AbFit { a: f64, b: f64 },
    #[error("optimization produced a non-finite coordinate at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("need more than n_neighbors = {n_neighbors} samples, got {n}")]
    TooFewSamples { n: usize, n_neighbors: usize },
    #[error("invalid embedding config: {0}")]
    BadConfig(String),
    #[error("{points} points supplied for a graph of {n} vertices")]
    PointCount { points: usize, n: usize },
    #[error(transparent)]
    Knn(#[from] IdError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Spectral,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub spread: f64,
    pub n_epochs: usize,
    pub negative_samples: usize,
    pub learning_rate: f64,
    pub init: InitMode,
    pub seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            n_neighbors: 15,
            min_dist: 0.1,
            spread: 1.0,
            n_epochs: 200,
            negative_samples: 5,
            learning_rate: 1.0,
            init: InitMode::Spectral,
            seed: 42,
        }
    }
}

/// Above this sample count the default epoch budget grows from 200 to 500.
pub const LARGE_DATASET: usize = 10_000;

pub fn default_epochs(n: usize) -> usize {
    if n <= LARGE_DATASET {
        200
    } else {
        500
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.n_neighbors < 2 {
            return Err(EmbedError::BadConfig(format!("n_neighbors must be >= 2, got {}", self.n_neighbors)));
        }
        if !(self.min_dist > 0.0 && self.min_dist <= self.spread) {
            return Err(EmbedError::BadConfig(format!(
                "need 0 < min_dist <= spread, got min_dist={} spread={}",
                self.min_dist, self.spread
            )));
        }
        if self.n_epochs == 0 {
            return Err(EmbedError::BadConfig("n_epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(EmbedError::BadConfig(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

const SIGMA_MIN: f64 = 1e-12;
const SIGMA_MAX: f64 = 1e12;
const SIGMA_ITERATIONS: usize = 64;

fn membership_sum(row: &[f64], rho: f64, sigma: f64) -> f64 {
    row.iter().map(|&d| (-(d - rho).max(0.0) / sigma).exp()).sum()
}

/// Local distance normalization for one sample's first `n_neighbors` sorted distances.
///
/// `rho` is the smallest positive distance (0 if none); `sigma` is found by bisection in
/// log-space on `[1e-12, 1e12]` so that the memberships sum to `log2(n_neighbors)`.
pub fn smooth_knn_row(row: &[f64], n_neighbors: usize) -> (f64, f64) {
    let row = &row[..n_neighbors.min(row.len())];
    let rho = row.iter().copied().find(|&d| d > 0.0).unwrap_or(0.0);
    let target = (n_neighbors as f64).log2();
    let (mut lo, mut hi) = (SIGMA_MIN, SIGMA_MAX);
    let mut best = (f64::INFINITY, 1.0);
    for _ in 0..SIGMA_ITERATIONS {
        let mid = (lo * hi).sqrt();
        let sum = membership_sum(row, rho, mid);
        let err = (sum - target).abs();
        if err < best.0 {
            best = (err, mid);
        }
        // the sum increases with sigma
        if sum > target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (rho, best.1)
}

/// Undirected weighted graph, edges stored once with `i < j`, sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyGraph {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl FuzzyGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Probabilistic union `a + b - ab` of two directed membership sets.
    ///
    /// `directed` holds `(from, to, weight)`; duplicates of the same direction keep the
    /// larger weight. Self-loops and zero weights are dropped.
    pub fn from_directed(n: usize, directed: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut pairs: HashMap<(usize, usize), (f64, f64)> = HashMap::new();
        for (from, to, w) in directed {
            if from == to || w.is_nan() || w <= 0.0 {
                continue;
            }
            let w = w.min(1.0);
            if from < to {
                let e = pairs.entry((from, to)).or_insert((0.0, 0.0));
                e.0 = e.0.max(w);
            } else {
                let e = pairs.entry((to, from)).or_insert((0.0, 0.0));
                e.1 = e.1.max(w);
            }
        }
        let mut edges: Vec<(usize, usize, f64)> = pairs
            .into_iter()
            .map(|((i, j), (a, b))| (i, j, a + b - a * b))
            .filter(|&(_, _, w)| w > 0.0)
            .collect();
        edges.sort_unstable_by_key(|e| (e.0, e.1));
        Self { n, edges }
    }

    /// Feeds the stored (already symmetrized) edge list back through the union.
    ///
    /// Each undirected edge enters once, as `i -> j` with no reverse membership, so the
    /// union returns it unchanged.
    pub fn resymmetrize(&self) -> Self {
        Self::from_directed(self.n, self.edges.iter().copied())
    }

    fn weight_map(&self) -> HashMap<(usize, usize), f64> {
        self.edges.iter().map(|&(i, j, w)| ((i, j), w)).collect()
    }
}

pub fn fuzzy_graph(table: &KnnTable, n_neighbors: usize) -> Result<FuzzyGraph, EmbedError> {
    if n_neighbors > table.k_max() {
        return Err(EmbedError::BadConfig(format!(
            "n_neighbors = {n_neighbors} exceeds the k-NN table width {}",
            table.k_max()
        )));
    }
    let directed: Vec<(usize, usize, f64)> = (0..table.n())
        .into_par_iter()
        .flat_map_iter(|i| {
            let dists = &table.dists(i)[..n_neighbors];
            let idx = &table.indices(i)[..n_neighbors];
            let (rho, sigma) = smooth_knn_row(dists, n_neighbors);
            dists
                .iter()
                .zip(idx)
                .map(move |(&d, &j)| (i, j, (-(d - rho).max(0.0) / sigma).exp()))
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(FuzzyGraph::from_directed(table.n(), directed))
}

/// Low-dimensional membership curve `1 / (1 + a d^(2b))`.
#[inline]
pub fn phi(d: f64, a: f64, b: f64) -> f64 {
    1.0 / (1.0 + a * d.powf(2.0 * b))
}

/// Number of samples on `[0, 3 * spread]` for the curve fit.
pub const AB_FIT_SAMPLES: usize = 300;
const AB_MAX_ITERATIONS: usize = 500;
const AB_TOLERANCE: f64 = 1e-6;

fn ab_targets(min_dist: f64, spread: f64) -> (Vec<f64>, Vec<f64>) {
    let xs: Vec<f64> = (0..AB_FIT_SAMPLES)
        .map(|i| 3.0 * spread * i as f64 / (AB_FIT_SAMPLES - 1) as f64)
        .collect();
    let ys = xs
        .iter()
        .map(|&x| if x <= min_dist { 1.0 } else { (-(x - min_dist) / spread).exp() })
        .collect();
    (xs, ys)
}

fn ab_sse(xs: &[f64], ys: &[f64], a: f64, b: f64) -> f64 {
    xs.iter().zip(ys).map(|(&x, &y)| (phi(x, a, b) - y).powi(2)).sum()
}

/// Levenberg-Marquardt least-squares fit of `(a, b)` to the offset-exponential target.
pub fn fit_ab(min_dist: f64, spread: f64) -> Result<(f64, f64), EmbedError> {
    if !(min_dist > 0.0 && min_dist <= spread) {
        return Err(EmbedError::BadConfig(format!(
            "need 0 < min_dist <= spread, got min_dist={min_dist} spread={spread}"
        )));
    }
    let (xs, ys) = ab_targets(min_dist, spread);
    let (mut a, mut b) = (1.0, 1.0);
    let mut sse = ab_sse(&xs, &ys, a, b);
    let mut lambda = 1e-3;
    for _ in 0..AB_MAX_ITERATIONS {
        // normal equations J^T J and J^T r
        let (mut jaa, mut jab, mut jbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(&ys) {
            if x == 0.0 {
                // f(0) = 1 for every (a, b): zero derivative
                continue;
            }
            let u = x.powf(2.0 * b);
            let denom = 1.0 + a * u;
            let f = 1.0 / denom;
            let r = f - y;
            let da = -u / (denom * denom);
            let db = -a * u * 2.0 * x.ln() / (denom * denom);
            jaa += da * da;
            jab += da * db;
            jbb += db * db;
            ga += da * r;
            gb += db * r;
        }
        loop {
            let (m11, m22) = (jaa * (1.0 + lambda), jbb * (1.0 + lambda));
            let det = m11 * m22 - jab * jab;
            if det == 0.0 || !det.is_finite() {
                lambda *= 10.0;
                if lambda > 1e16 {
                    return Err(EmbedError::AbFit { a, b });
                }
                continue;
            }
            let step_a = -(m22 * ga - jab * gb) / det;
            let step_b = -(m11 * gb - jab * ga) / det;
            let (na, nb) = (a + step_a, b + step_b);
            let new_sse = if na > 0.0 && nb > 0.0 { ab_sse(&xs, &ys, na, nb) } else { f64::INFINITY };
            if new_sse <= sse {
                let converged = step_a.abs() <= AB_TOLERANCE * a.abs().max(1.0)
                    && step_b.abs() <= AB_TOLERANCE * b.abs().max(1.0);
                a = na;
                b = nb;
                sse = new_sse;
                lambda = (lambda / 10.0).max(1e-12);
                if converged {
                    return Ok((a, b));
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                // no descent direction left: at a (numerical) minimum
                return Ok((a, b));
            }
        }
    }
    Err(EmbedError::AbFit { a, b })
}

pub type Point = [f64; 2];

/// Coordinates are scaled jointly so the largest magnitude is this value.
pub const INIT_EXTENT: f64 = 10.0;
const SPECTRAL_MAX_ITERATIONS: usize = 2000;
const SPECTRAL_TOLERANCE: f64 = 1e-7;

fn random_points(n: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    (0..n)
        .map(|_| {
            [
                rng.random_range(-INIT_EXTENT..=INIT_EXTENT),
                rng.random_range(-INIT_EXTENT..=INIT_EXTENT),
            ]
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> bool {
    let norm = dot(v, v).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for u in basis {
        let c = dot(v, u);
        v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
    }
}

/// Eigenvectors 2 and 3 of the symmetric normalized Laplacian `I - D^-1/2 W D^-1/2`.
///
/// Power iteration runs on `(I + D^-1/2 W D^-1/2) / 2`, whose spectrum lies in [0, 1] with the
/// Laplacian's smallest eigenvalues on top; the trivial vector `sqrt(d)` is deflated exactly.
/// Returns `None` if either vector fails to converge.
pub fn spectral_vectors(graph: &FuzzyGraph, rng: &mut ChaCha8Rng) -> Option<[Vec<f64>; 2]> {
    let n = graph.n;
    if n < 3 {
        return None;
    }
    let mut degree = vec![0.0; n];
    for &(i, j, w) in &graph.edges {
        degree[i] += w;
        degree[j] += w;
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
    let apply = |x: &[f64], out: &mut [f64]| {
        out.iter_mut().zip(x).for_each(|(o, v)| *o = 0.5 * v);
        for &(i, j, w) in &graph.edges {
            let s = 0.5 * w * inv_sqrt[i] * inv_sqrt[j];
            out[i] += s * x[j];
            out[j] += s * x[i];
        }
    };

    let mut trivial: Vec<f64> = degree.iter().map(|d| d.sqrt()).collect();
    if !normalize(&mut trivial) {
        return None;
    }
    let mut basis = vec![trivial];
    let mut found = Vec::with_capacity(2);
    for _ in 0..2 {
        let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        orthogonalize(&mut x, &basis);
        if !normalize(&mut x) {
            return None;
        }
        let mut next = vec![0.0; n];
        let mut converged = false;
        for _ in 0..SPECTRAL_MAX_ITERATIONS {
            apply(&x, &mut next);
            orthogonalize(&mut next, &basis);
            if !normalize(&mut next) {
                return None;
            }
            let delta = x.iter().zip(&next).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            std::mem::swap(&mut x, &mut next);
            if delta < SPECTRAL_TOLERANCE {
                converged = true;
                break;
            }
        }
        if !converged {
            return None;
        }
        basis.push(x.clone());
        found.push(x);
    }
    let second = found.pop()?;
    let first = found.pop()?;
    Some([first, second])
}

pub fn init_embedding(graph: &FuzzyGraph, config: &EmbedConfig) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    if config.init == InitMode::Spectral {
        if let Some([v1, v2]) = spectral_vectors(graph, &mut rng) {
            let max_abs = v1.iter().chain(&v2).fold(0.0f64, |m, v| m.max(v.abs()));
            if max_abs > 0.0 && max_abs.is_finite() {
                let s = INIT_EXTENT / max_abs;
                return v1.iter().zip(&v2).map(|(x, y)| [x * s, y * s]).collect();
            }
        }
        log::warn!("event=spectral_init_failed n={} fallback=random", graph.n);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        return random_points(graph.n, &mut rng);
    }
    random_points(graph.n, &mut rng)
}

/// Probability clamp used by [`cross_entropy`].
pub const PHI_CLAMP: f64 = 1e-4;

/// Fuzzy-set cross-entropy between the graph memberships and the embedding, over all pairs.
pub fn cross_entropy(graph: &FuzzyGraph, points: &[Point], a: f64, b: f64) -> f64 {
    let weights = graph.weight_map();
    let n = points.len();
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            for j in i + 1..n {
                let w = weights.get(&(i, j)).copied().unwrap_or(0.0);
                let dx = points[i][0] - points[j][0];
                let dy = points[i][1] - points[j][1];
                let d2 = dx * dx + dy * dy;
                let p = (1.0 / (1.0 + a * d2.powf(b))).clamp(PHI_CLAMP, 1.0 - PHI_CLAMP);
                if w > 0.0 {
                    acc += w * (w / p).ln();
                }
                if w < 1.0 {
                    acc += (1.0 - w) * ((1.0 - w) / (1.0 - p)).ln();
                }
            }
            acc
        })
        .collect();
    // fixed summation order keeps the value independent of the thread count
    rows.iter().sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding2D {
    pub points: Vec<Point>,
    pub config: EmbedConfig,
    pub a: f64,
    pub b: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
}

impl Embedding2D {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `sample_id,x,y` rows using the given sample ids.
    pub fn to_csv(&self, sample_ids: &[usize]) -> String {
        let mut out = String::from("sample_id,x,y\n");
        for (id, p) in sample_ids.iter().zip(&self.points) {
            out.push_str(&format!("{id},{},{}\n", p[0], p[1]));
        }
        out
    }
}

#[inline]
fn clip(v: f64) -> f64 {
    v.clamp(-4.0, 4.0)
}

/// Epoch-scheduled SGD on the fuzzy cross-entropy.
///
/// Each edge is sampled every `max_w / w` epochs. An attraction moves both endpoints; each
/// attraction is followed by `negative_samples` repulsions of the head from uniformly drawn
/// vertices. The learning rate decays linearly to zero.
pub fn optimize_embedding(graph: &FuzzyGraph, points: Vec<Point>, config: &EmbedConfig) -> Result<Embedding2D, EmbedError> {
    config.validate()?;
    if points.len() != graph.n {
        return Err(EmbedError::PointCount {
            points: points.len(),
            n: graph.n,
        });
    }
    let (a, b) = fit_ab(config.min_dist, config.spread)?;
    let initial_loss = cross_entropy(graph, &points, a, b);
    let mut pts = points;
    let n = graph.n;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);

    let max_w = graph.edges.iter().map(|e| e.2).fold(0.0f64, f64::max);
    let epochs_per_sample: Vec<f64> = graph.edges.iter().map(|e| max_w / e.2).collect();
    let mut next_sample = epochs_per_sample.clone();

    for epoch in 0..config.n_epochs {
        let alpha = config.learning_rate * (1.0 - epoch as f64 / config.n_epochs as f64);
        let now = (epoch + 1) as f64;
        for (e, &(i, j, _)) in graph.edges.iter().enumerate() {
            if next_sample[e] > now {
                continue;
            }
            next_sample[e] += epochs_per_sample[e];

            let (dx, dy) = (pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]);
            let d2 = dx * dx + dy * dy;
            if d2 > 0.0 {
                let coeff = -2.0 * a * b * d2.powf(b - 1.0) / (a * d2.powf(b) + 1.0);
                let gx = clip(coeff * dx) * alpha;
                let gy = clip(coeff * dy) * alpha;
                pts[i][0] += gx;
                pts[i][1] += gy;
                pts[j][0] -= gx;
                pts[j][1] -= gy;
            }

            for _ in 0..config.negative_samples {
                let k = rng.random_range(0..n);
                if k == i {
                    continue;
                }
                let (dx, dy) = (pts[i][0] - pts[k][0], pts[i][1] - pts[k][1]);
                let d2 = dx * dx + dy * dy;
                let (gx, gy) = if d2 > 0.0 {
                    let coeff = 2.0 * b / ((0.001 + d2) * (a * d2.powf(b) + 1.0));
                    (clip(coeff * dx), clip(coeff * dy))
                } else {
                    (4.0, 4.0)
                };
                pts[i][0] += gx * alpha;
                pts[i][1] += gy * alpha;
            }
        }
        if pts.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(EmbedError::Diverged { epoch });
        }
    }

    let final_loss = cross_entropy(graph, &pts, a, b);
    Ok(Embedding2D {
        points: pts,
        config: config.clone(),
        a,
        b,
        initial_loss,
        final_loss,
    })
}

/// Full pipeline: k-NN, fuzzy graph, initialization and optimization.
pub fn embed_dataset(features: &FeatureSet, config: &EmbedConfig) -> Result<Embedding2D, EmbedError> {
    config.validate()?;
    let n = features.len();
    if n <= config.n_neighbors {
        return Err(EmbedError::TooFewSamples {
            n,
            n_neighbors: config.n_neighbors,
        });
    }
    let table = intdim::knn_table(features, config.n_neighbors)?;
    let graph = fuzzy_graph(&table, config.n_neighbors)?;
    let init = init_embedding(&graph, config);
    optimize_embedding(&graph, init, config)
}
