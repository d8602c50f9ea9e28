//! Per-image entropy measures: pixel Shannon entropy, GLCM (texture) entropy and
//! delentropy over the gradient-vector density.
//!
//! All entropies are in bits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::GrayImage;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EntropyError {
    #[error("histogram has no samples")]
    EmptyHistogram,
    #[error("offset ({dx},{dy}) leaves no in-bounds pixel pair in a {width}x{height} image")]
    NoPairs { dx: i32, dy: i32, width: usize, height: usize },
    #[error("GLCM levels must lie in 2..=256, got {0}")]
    BadLevels(usize),
    #[error("GLCM offset must be non-zero")]
    ZeroOffset,
    #[error("deldensity bin count must be odd and >= 3, got {0}")]
    BadBins(usize),
    #[error("{path}: {source}")]
    InImage {
        path: String,
        #[source]
        source: Box<EntropyError>,
    },
}

/// Shannon entropy of a discrete distribution given as probabilities; zero cells contribute 0.
fn entropy_bits<'a>(probs: impl IntoIterator<Item = &'a f64>) -> f64 {
    let h: f64 = probs
        .into_iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum();
    // -0.0 from a single p == 1 cell
    h.max(0.0)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram256 {
    pub counts: [u64; 256],
    pub total: u64,
}

impl Histogram256 {
    pub fn from_counts(counts: [u64; 256]) -> Self {
        let total = counts.iter().sum();
        Self { counts, total }
    }
}

pub fn pixel_histogram(image: &GrayImage) -> Histogram256 {
    let mut counts = [0u64; 256];
    for &v in image.data() {
        counts[v as usize] += 1;
    }
    Histogram256 {
        counts,
        total: image.data().len() as u64,
    }
}

pub fn shannon_entropy(hist: &Histogram256) -> Result<f64, EntropyError> {
    if hist.total == 0 {
        return Err(EntropyError::EmptyHistogram);
    }
    let total = hist.total as f64;
    let probs: Vec<f64> = hist.counts.iter().map(|&c| c as f64 / total).collect();
    Ok(entropy_bits(&probs))
}

/// Normalized gray-level co-occurrence distribution at one offset.
#[derive(Debug, Clone, PartialEq)]
pub struct GlcmMatrix {
    levels: usize,
    offset: (i32, i32),
    symmetric: bool,
    /// Row-major `levels x levels`; `probs[i * levels + j]` = p(i, j).
    probs: Vec<f64>,
}

impl GlcmMatrix {
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn offset(&self) -> (i32, i32) {
        self.offset
    }

    pub fn symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.probs[i * self.levels + j]
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }
}

/// Quantizes an 8-bit value onto `levels` gray levels: `floor(v * levels / 256)`.
#[inline]
pub fn quantize(v: u8, levels: usize) -> usize {
    v as usize * levels / 256
}

pub fn compute_glcm(
    image: &GrayImage,
    levels: usize,
    offset: (i32, i32),
    symmetric: bool,
) -> Result<GlcmMatrix, EntropyError> {
    if !(2..=256).contains(&levels) {
        return Err(EntropyError::BadLevels(levels));
    }
    let (dx, dy) = offset;
    if dx == 0 && dy == 0 {
        return Err(EntropyError::ZeroOffset);
    }
    let (w, h) = (image.width() as i64, image.height() as i64);
    let (dx64, dy64) = (dx as i64, dy as i64);
    // Source positions whose partner (x+dx, y+dy) stays in bounds.
    let x_range = (0i64.max(-dx64), w.min(w - dx64));
    let y_range = (0i64.max(-dy64), h.min(h - dy64));
    if x_range.0 >= x_range.1 || y_range.0 >= y_range.1 {
        return Err(EntropyError::NoPairs {
            dx,
            dy,
            width: image.width(),
            height: image.height(),
        });
    }

    let q: Vec<usize> = image.data().iter().map(|&v| quantize(v, levels)).collect();
    let wu = image.width();
    let mut counts = vec![0u64; levels * levels];
    let mut total = 0u64;
    for y in y_range.0..y_range.1 {
        let row = y as usize * wu;
        let prow = (y + dy64) as usize * wu;
        for x in x_range.0..x_range.1 {
            let a = q[row + x as usize];
            let b = q[prow + (x + dx64) as usize];
            counts[a * levels + b] += 1;
            total += 1;
            if symmetric {
                counts[b * levels + a] += 1;
                total += 1;
            }
        }
    }
    let total = total as f64;
    Ok(GlcmMatrix {
        levels,
        offset,
        symmetric,
        probs: counts.into_iter().map(|c| c as f64 / total).collect(),
    })
}

pub fn glcm_entropy(glcm: &GlcmMatrix) -> f64 {
    entropy_bits(&glcm.probs)
}

/// Per-pixel partial derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub fx: Vec<f64>,
    pub fy: Vec<f64>,
}

/// Central differences with edge-replicating padding, so border pixels get the
/// one-sided difference at half weight.
pub fn gradient_field(image: &GrayImage) -> GradientField {
    let (w, h) = (image.width(), image.height());
    let px = |x: usize, y: usize| image.get(x, y) as f64;
    let mut fx = Vec::with_capacity(w * h);
    let mut fy = Vec::with_capacity(w * h);
    for y in 0..h {
        let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            fx.push((px(xr, y) - px(xl, y)) / 2.0);
            fy.push((px(x, yd) - px(x, yu)) / 2.0);
        }
    }
    GradientField {
        width: w,
        height: h,
        fx,
        fy,
    }
}

/// Largest gradient magnitude per axis for 8-bit input: 255 / 2.
pub const GRADIENT_LIMIT: f64 = 127.5;

/// Normalized joint histogram of gradient vectors (fx, fy).
#[derive(Debug, Clone, PartialEq)]
pub struct DelDensity {
    bins: usize,
    range: f64,
    /// Row-major `bins x bins`, indexed `[fy_bin * bins + fx_bin]`.
    probs: Vec<f64>,
}

impl DelDensity {
    /// Builds a density directly from normalized cell probabilities.
    pub fn from_probs(bins: usize, range: f64, probs: Vec<f64>) -> Result<Self, EntropyError> {
        if bins < 3 || bins.is_multiple_of(2) {
            return Err(EntropyError::BadBins(bins));
        }
        assert_eq!(probs.len(), bins * bins);
        Ok(Self { bins, range, probs })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, fx_bin: usize, fy_bin: usize) -> f64 {
        self.probs[fy_bin * self.bins + fx_bin]
    }
}

/// Maps a gradient value in `[-range, range]` linearly onto `bins` cells, clamping outliers.
#[inline]
pub fn gradient_bin(v: f64, range: f64, bins: usize) -> usize {
    let t = ((v + range) * bins as f64 / (2.0 * range)).floor();
    if t <= 0.0 {
        0
    } else {
        (t as usize).min(bins - 1)
    }
}

pub fn deldensity(field: &GradientField, bins: usize) -> Result<DelDensity, EntropyError> {
    if bins < 3 || bins.is_multiple_of(2) {
        return Err(EntropyError::BadBins(bins));
    }
    let mut counts = vec![0u64; bins * bins];
    for (&gx, &gy) in field.fx.iter().zip(&field.fy) {
        let bx = gradient_bin(gx, GRADIENT_LIMIT, bins);
        let by = gradient_bin(gy, GRADIENT_LIMIT, bins);
        counts[by * bins + bx] += 1;
    }
    let total = field.fx.len() as f64;
    Ok(DelDensity {
        bins,
        range: GRADIENT_LIMIT,
        probs: counts.into_iter().map(|c| c as f64 / total).collect(),
    })
}

/// Entropy of the deldensity; `half_factor` applies the conventional 1/2 scaling.
pub fn delentropy(density: &DelDensity, half_factor: bool) -> f64 {
    let h = entropy_bits(&density.probs);
    if half_factor {
        h / 2.0
    } else {
        h
    }
}

fn default_levels() -> usize {
    256
}
fn default_offset() -> (i32, i32) {
    (1, 0)
}
fn default_true() -> bool {
    true
}
fn default_bins() -> usize {
    255
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropyConfig {
    #[serde(default = "default_levels")]
    pub glcm_levels: usize,
    #[serde(default = "default_offset")]
    pub glcm_offset: (i32, i32),
    #[serde(default = "default_true")]
    pub glcm_symmetric: bool,
    #[serde(default = "default_bins")]
    pub deldensity_bins: usize,
    #[serde(default = "default_true")]
    pub half_factor: bool,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        Self {
            glcm_levels: default_levels(),
            glcm_offset: default_offset(),
            glcm_symmetric: true,
            deldensity_bins: default_bins(),
            half_factor: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyRecord {
    pub path: String,
    pub width: usize,
    pub height: usize,
    pub shannon: f64,
    pub glcm_entropy: f64,
    pub delentropy: f64,
}

pub fn analyze_image(image: &GrayImage, path: &str, config: &EntropyConfig) -> Result<EntropyRecord, EntropyError> {
    let wrap = |e: EntropyError| EntropyError::InImage {
        path: path.to_string(),
        source: Box::new(e),
    };
    let shannon = shannon_entropy(&pixel_histogram(image)).map_err(wrap)?;
    let glcm = compute_glcm(image, config.glcm_levels, config.glcm_offset, config.glcm_symmetric).map_err(wrap)?;
    let density = deldensity(&gradient_field(image), config.deldensity_bins).map_err(wrap)?;
    Ok(EntropyRecord {
        path: path.to_string(),
        width: image.width(),
        height: image.height(),
        shannon,
        glcm_entropy: glcm_entropy(&glcm),
        delentropy: delentropy(&density, config.half_factor),
    })
}
