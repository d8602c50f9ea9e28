//! Run configuration and the command drivers: `analyze`, `intdim`, `embed`, `report`.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! <dataset>/manifest.json
//! <dataset>/entropy.csv            path,width,height,shannon,glcm_entropy,delentropy
//! <dataset>/entropy_cache.json     per-image cache keyed by (path, bytes, config hash)
//! <dataset>/intdim.json
//! <dataset>/embed/k<N>.{csv,json,svg}
//! <dataset>/{shannon,glcm,delentropy}_hist.svg
//! summary.json, table1.csv, table2.csv, table3.csv
//! ```

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embed::{self, default_epochs, EmbedConfig, EmbedError, InitMode};
use crate::entropy::{analyze_image, EntropyConfig, EntropyRecord};
use crate::ingest::{load_grayscale, scan_dataset, DatasetManifest, IngestError};
use crate::intdim::{self, FeatureMode, FeatureSet, FeatureVector, IdError, IdEstimate};
use crate::report::{self, fmt_sig9, DatasetSummary, IdSummary, ReportError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing {path}; run `{command}` first")]
    MissingPrerequisite { path: PathBuf, command: &'static str },
    #[error("dataset {dataset}: {failed} of {total} images failed")]
    DatasetFailed { dataset: String, failed: usize, total: usize },
    #[error("dataset {dataset}: {source}")]
    Dataset {
        dataset: String,
        #[source]
        source: Box<PipelineError>,
    },
    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Id(#[from] IdError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub id: String,
    pub root: PathBuf,
}

fn default_k1() -> usize {
    10
}
fn default_k2() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntdimSettings {
    #[serde(flatten)]
    pub features: FeatureMode,
    #[serde(default = "default_k1")]
    pub k1: usize,
    #[serde(default = "default_k2")]
    pub k2: usize,
}

impl Default for IntdimSettings {
    fn default() -> Self {
        Self {
            features: FeatureMode::default(),
            k1: default_k1(),
            k2: default_k2(),
        }
    }
}

/// Neighbor counts swept by `embed` when none are configured.
pub const DEFAULT_NEIGHBOR_SWEEP: [usize; 4] = [2, 20, 100, 500];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedSettings {
    pub neighbors: Vec<usize>,
    pub glcm_levels: usize,
    pub min_dist: f64,
    pub spread: f64,
    /// `None` picks the default for the dataset size.
    pub n_epochs: Option<usize>,
    pub negative_samples: usize,
    pub learning_rate: f64,
    pub init: InitMode,
    pub seed: u64,
}

impl Default for EmbedSettings {
    fn default() -> Self {
        let base = EmbedConfig::default();
        Self {
            neighbors: DEFAULT_NEIGHBOR_SWEEP.to_vec(),
            glcm_levels: 32,
            min_dist: base.min_dist,
            spread: base.spread,
            n_epochs: None,
            negative_samples: base.negative_samples,
            learning_rate: base.learning_rate,
            init: base.init,
            seed: base.seed,
        }
    }
}

impl EmbedSettings {
    pub fn config_for(&self, n_neighbors: usize, n_samples: usize) -> EmbedConfig {
        EmbedConfig {
            n_neighbors,
            min_dist: self.min_dist,
            spread: self.spread,
            n_epochs: self.n_epochs.unwrap_or_else(|| default_epochs(n_samples)),
            negative_samples: self.negative_samples,
            learning_rate: self.learning_rate,
            init: self.init,
            seed: self.seed,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("dscomplex-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub datasets: Vec<DatasetSpec>,
    #[serde(default)]
    pub entropy: EntropyConfig,
    #[serde(default)]
    pub intdim: IntdimSettings,
    #[serde(default)]
    pub embed: EmbedSettings,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Worker threads; 0 lets rayon decide.
    #[serde(default)]
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            datasets: Vec::new(),
            entropy: EntropyConfig::default(),
            intdim: IntdimSettings::default(),
            embed: EmbedSettings::default(),
            output_dir: default_output_dir(),
            threads: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut seen = BTreeSet::new();
        for d in &self.datasets {
            if d.id.is_empty() || !d.id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) || d.id.starts_with('.') {
                return Err(PipelineError::Config(format!(
                    "dataset id {:?} must be non-empty and use only [A-Za-z0-9._-]",
                    d.id
                )));
            }
            if !seen.insert(d.id.as_str()) {
                return Err(PipelineError::Config(format!("duplicate dataset id {:?}", d.id)));
            }
        }
        self.intdim.features.validate()?;
        if self.intdim.k1 < 2 || self.intdim.k1 > self.intdim.k2 {
            return Err(PipelineError::Config(format!(
                "k range [{}, {}] must satisfy 2 <= k1 <= k2",
                self.intdim.k1, self.intdim.k2
            )));
        }
        if self.embed.neighbors.iter().any(|&k| k < 2) {
            return Err(PipelineError::Config("embed neighbors must all be >= 2".into()));
        }
        FeatureMode::GlcmFlat {
            levels: self.embed.glcm_levels,
        }
        .validate()?;
        self.embed.config_for(2, 0).validate()?;
        Ok(())
    }

    pub fn dataset_dir(&self, id: &str) -> PathBuf {
        self.output_dir.join(id)
    }

    /// Short digest of the entropy settings; keys the per-image cache.
    pub fn entropy_hash(&self) -> String {
        config_hash(&self.entropy)
    }

    /// Digest of the whole analysis configuration, embedded in reports for provenance.
    pub fn run_hash(&self) -> String {
        let v = serde_json::json!({
            "entropy": self.entropy,
            "intdim": self.intdim,
            "embed": self.embed,
        });
        hex16(v.to_string().as_bytes())
    }
}

fn hex16(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub fn config_hash(config: &EntropyConfig) -> String {
    hex16(serde_json::to_string(config).expect("config serializes").as_bytes())
}

/// Runs `f` on a rayon pool bounded to `threads` workers (0 = rayon default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheEntry {
    path: String,
    bytes: u64,
    config_hash: String,
    record: EntropyRecord,
}

type CacheKey = (String, u64, String);

fn load_cache(path: &Path) -> HashMap<CacheKey, EntropyRecord> {
    let Ok(text) = std::fs::read_to_string(path) else {
        return HashMap::new();
    };
    match serde_json::from_str::<Vec<CacheEntry>>(&text) {
        Ok(entries) => entries
            .into_iter()
            .map(|e| ((e.path, e.bytes, e.config_hash), e.record))
            .collect(),
        Err(err) => {
            log::warn!("event=cache_unreadable path={} error={err}", path.display());
            HashMap::new()
        }
    }
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), PipelineError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

pub const ENTROPY_CSV_HEADER: [&str; 6] = ["path", "width", "height", "shannon", "glcm_entropy", "delentropy"];

pub fn entropy_csv(records: &[EntropyRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ENTROPY_CSV_HEADER).expect("in-memory write");
    for r in records {
        w.write_record([
            r.path.clone(),
            r.width.to_string(),
            r.height.to_string(),
            fmt_sig9(r.shannon),
            fmt_sig9(r.glcm_entropy),
            fmt_sig9(r.delentropy),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

pub fn read_entropy_csv(path: impl AsRef<Path>) -> Result<Vec<EntropyRecord>, PipelineError> {
    let path = path.as_ref();
    let parse_err = |reason: String| PipelineError::Parse {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| parse_err(e.to_string()))?;
    let header: Vec<String> = r.headers().map_err(|e| parse_err(e.to_string()))?.iter().map(String::from).collect();
    if header != ENTROPY_CSV_HEADER {
        return Err(parse_err(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let num = |i: usize| -> Result<f64, PipelineError> {
            rec.get(i).unwrap_or_default().parse().map_err(|e| parse_err(format!("column {i}: {e}")))
        };
        let int = |i: usize| -> Result<usize, PipelineError> {
            rec.get(i).unwrap_or_default().parse().map_err(|e| parse_err(format!("column {i}: {e}")))
        };
        out.push(EntropyRecord {
            path: rec.get(0).unwrap_or_default().to_string(),
            width: int(1)?,
            height: int(2)?,
            shannon: num(3)?,
            glcm_entropy: num(4)?,
            delentropy: num(5)?,
        });
    }
    Ok(out)
}

/// Outcome counters for one dataset's `analyze` pass.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnalyzeStats {
    pub dataset_id: String,
    pub images: usize,
    /// Images decoded in this run (cache misses).
    pub decoded: usize,
    pub cache_hits: usize,
    pub failed: usize,
    /// Unreadable paths met while scanning.
    pub skipped: usize,
}

impl AnalyzeStats {
    pub fn warnings(&self) -> usize {
        self.failed + self.skipped
    }
}

/// Fraction of failed images above which a dataset is aborted.
pub const MAX_FAILURE_FRACTION: f64 = 0.5;

/// Computes (or reuses from cache) the entropy record of every image in one dataset and
/// writes `entropy.csv` in manifest order.
pub fn analyze_dataset(spec: &DatasetSpec, config: &RunConfig) -> Result<AnalyzeStats, PipelineError> {
    let manifest = scan_dataset(&spec.root, &spec.id)?;
    let dir = config.dataset_dir(&spec.id);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write_atomic(&dir.join("manifest.json"), manifest.to_json().as_bytes())?;

    let hash = config.entropy_hash();
    let cache_path = dir.join("entropy_cache.json");
    let cache = load_cache(&cache_path);
    let decoded = AtomicUsize::new(0);
    let hits = AtomicUsize::new(0);

    let results: Vec<Option<EntropyRecord>> = with_threads(config.threads, || {
        manifest
            .entries
            .par_iter()
            .map(|entry| {
                let key = (entry.path.clone(), entry.bytes, hash.clone());
                if let Some(rec) = cache.get(&key) {
                    hits.fetch_add(1, Ordering::Relaxed);
                    return Some(rec.clone());
                }
                decoded.fetch_add(1, Ordering::Relaxed);
                let result = load_grayscale(manifest.absolute_path(entry))
                    .map_err(|e| e.to_string())
                    .and_then(|img| analyze_image(&img, &entry.path, &config.entropy).map_err(|e| e.to_string()));
                match result {
                    Ok(rec) => Some(rec),
                    Err(err) => {
                        log::warn!("event=image_failed dataset={} path={} error={err}", spec.id, entry.path);
                        None
                    }
                }
            })
            .collect()
    })?;

    let total = manifest.count();
    let failed = results.iter().filter(|r| r.is_none()).count();
    let stats = AnalyzeStats {
        dataset_id: spec.id.clone(),
        images: total,
        decoded: decoded.into_inner(),
        cache_hits: hits.into_inner(),
        failed,
        skipped: manifest.skipped.len(),
    };
    if total > 0 && failed as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(PipelineError::DatasetFailed {
            dataset: spec.id.clone(),
            failed,
            total,
        });
    }

    let mut cache_entries = Vec::with_capacity(total);
    let mut records = Vec::with_capacity(total);
    for (entry, rec) in manifest.entries.iter().zip(results) {
        if let Some(rec) = rec {
            cache_entries.push(CacheEntry {
                path: entry.path.clone(),
                bytes: entry.bytes,
                config_hash: hash.clone(),
                record: rec.clone(),
            });
            records.push(rec);
        }
    }
    write_atomic(&dir.join("entropy.csv"), entropy_csv(&records).as_bytes())?;
    write_atomic(
        &cache_path,
        serde_json::to_string(&cache_entries).expect("cache serializes").as_bytes(),
    )?;
    log::info!(
        "event=analyze_done dataset={} images={} decoded={} cache_hits={} failed={}",
        spec.id,
        stats.images,
        stats.decoded,
        stats.cache_hits,
        stats.failed
    );
    Ok(stats)
}

/// Runs [`analyze_dataset`] over every configured dataset. A dataset that fails is logged
/// and reported in the returned list; the others still run.
pub fn cmd_analyze(config: &RunConfig) -> Result<Vec<Result<AnalyzeStats, PipelineError>>, PipelineError> {
    config.validate()?;
    if config.datasets.is_empty() {
        return Err(PipelineError::Config("no datasets configured".into()));
    }
    Ok(config
        .datasets
        .iter()
        .map(|spec| {
            analyze_dataset(spec, config).map_err(|e| {
                log::error!("event=dataset_failed dataset={} error={e}", spec.id);
                PipelineError::Dataset {
                    dataset: spec.id.clone(),
                    source: Box::new(e),
                }
            })
        })
        .collect())
}

/// Feature vectors for every decodable image in the manifest; sample ids are manifest indices.
pub fn manifest_features(manifest: &DatasetManifest, mode: FeatureMode) -> Result<(FeatureSet, usize), PipelineError> {
    mode.validate()?;
    let rows: Vec<Option<FeatureVector>> = manifest
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, entry)| {
            let result = load_grayscale(manifest.absolute_path(entry))
                .map_err(IdError::from)
                .and_then(|img| intdim::feature_vector(&img, mode));
            match result {
                Ok(values) => Some(FeatureVector { sample_id: i, values }),
                Err(err) => {
                    log::warn!("event=feature_failed dataset={} path={} error={err}", manifest.dataset_id, entry.path);
                    None
                }
            }
        })
        .collect();
    let failed = rows.iter().filter(|r| r.is_none()).count();
    let vectors: Vec<FeatureVector> = rows.into_iter().flatten().collect();
    Ok((FeatureSet::from_vectors(vectors)?, failed))
}

pub fn intdim_dataset(spec: &DatasetSpec, config: &RunConfig) -> Result<IdEstimate, PipelineError> {
    let manifest = scan_dataset(&spec.root, &spec.id)?;
    let (k1, k2) = (config.intdim.k1, config.intdim.k2);
    let estimate = with_threads(config.threads, || -> Result<IdEstimate, PipelineError> {
        let (features, _) = manifest_features(&manifest, config.intdim.features)?;
        Ok(intdim::estimate_id(&features, k1, k2)?)
    })??;
    let dir = config.dataset_dir(&spec.id);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write_atomic(&dir.join("intdim.json"), estimate.to_json().as_bytes())?;
    log::info!("event=intdim_done dataset={} n={} pooled={}", spec.id, estimate.n, estimate.pooled);
    Ok(estimate)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingSidecar {
    pub dataset_id: String,
    pub n: usize,
    pub config: EmbedConfig,
    pub a: f64,
    pub b: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub runtime_secs: f64,
    pub config_hash: String,
}

/// Embeds one dataset for every neighbor count in the sweep; counts that are not below the
/// sample count are skipped with a warning. Returns the written CSV paths.
pub fn embed_dataset_sweep(spec: &DatasetSpec, config: &RunConfig) -> Result<Vec<PathBuf>, PipelineError> {
    let manifest = scan_dataset(&spec.root, &spec.id)?;
    let dir = config.dataset_dir(&spec.id).join("embed");
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mode = FeatureMode::GlcmFlat {
        levels: config.embed.glcm_levels,
    };
    let hash = config.run_hash();
    with_threads(config.threads, || -> Result<Vec<PathBuf>, PipelineError> {
        let (features, _) = manifest_features(&manifest, mode)?;
        let n = features.len();
        let sweep: Vec<usize> = config.embed.neighbors.iter().copied().filter(|&k| k < n).collect();
        for &k in config.embed.neighbors.iter().filter(|&&k| k >= n) {
            log::warn!("event=embed_skip dataset={} n_neighbors={k} n={n}", spec.id);
        }
        let Some(&k_max) = sweep.iter().max() else {
            return Ok(Vec::new());
        };
        let table = intdim::knn_table(&features, k_max)?;
        let mut written = Vec::new();
        for k in sweep {
            let start = Instant::now();
            let cfg = config.embed.config_for(k, n);
            let graph = embed::fuzzy_graph(&table, k)?;
            let init = embed::init_embedding(&graph, &cfg);
            let emb = embed::optimize_embedding(&graph, init, &cfg)?;
            let runtime_secs = start.elapsed().as_secs_f64();

            let csv_path = dir.join(format!("k{k}.csv"));
            write_atomic(&csv_path, emb.to_csv(features.sample_ids()).as_bytes())?;
            let sidecar = EmbeddingSidecar {
                dataset_id: spec.id.clone(),
                n,
                config: cfg,
                a: emb.a,
                b: emb.b,
                initial_loss: emb.initial_loss,
                final_loss: emb.final_loss,
                runtime_secs,
                config_hash: hash.clone(),
            };
            write_atomic(
                &dir.join(format!("k{k}.json")),
                serde_json::to_string_pretty(&sidecar).expect("sidecar serializes").as_bytes(),
            )?;
            report::emit_embedding_svg(
                &emb,
                &format!("{}: n_neighbors = {k}, min_dist = {}", spec.id, emb.config.min_dist),
                dir.join(format!("k{k}.svg")),
            )?;
            log::info!(
                "event=embed_done dataset={} n_neighbors={k} final_loss={} secs={runtime_secs:.2}",
                spec.id,
                emb.final_loss
            );
            written.push(csv_path);
        }
        Ok(written)
    })?
}

/// Builds summaries from the analyze (required) and intdim/embed (optional) outputs, then
/// writes the histogram plots, `summary.json` and the tables.
pub fn cmd_report(config: &RunConfig) -> Result<report::SummaryFile, PipelineError> {
    config.validate()?;
    if config.datasets.is_empty() {
        return Err(PipelineError::Config("no datasets configured".into()));
    }
    let mut summaries = Vec::new();
    for spec in &config.datasets {
        let dir = config.dataset_dir(&spec.id);
        let csv_path = dir.join("entropy.csv");
        if !csv_path.exists() {
            return Err(PipelineError::MissingPrerequisite {
                path: csv_path,
                command: "analyze",
            });
        }
        let records = read_entropy_csv(&csv_path)?;
        let mut summary = DatasetSummary::from_records(&spec.id, &records).map_err(|e| PipelineError::Dataset {
            dataset: spec.id.clone(),
            source: Box::new(e.into()),
        })?;

        let id_path = dir.join("intdim.json");
        if id_path.exists() {
            let text = std::fs::read_to_string(&id_path).map_err(io_err(&id_path))?;
            let est: IdEstimate = serde_json::from_str(&text).map_err(|e| PipelineError::Parse {
                path: id_path.clone(),
                reason: e.to_string(),
            })?;
            summary.intrinsic_dim = Some(IdSummary {
                pooled: est.pooled,
                k_range: est.k_range,
            });
        }
        if dir.join("embed").is_dir() {
            summary.embedding = Some(format!("{}/embed", spec.id));
        }

        let columns: [(&str, &report::NormalFit, Vec<f64>); 3] = [
            ("shannon", &summary.shannon, records.iter().map(|r| r.shannon).collect()),
            ("glcm", &summary.glcm, records.iter().map(|r| r.glcm_entropy).collect()),
            ("delentropy", &summary.delentropy, records.iter().map(|r| r.delentropy).collect()),
        ];
        for (name, fit, samples) in columns {
            report::emit_histogram_svg(
                &samples,
                fit,
                &format!("{}: {name} entropy (mean {:.3}, std {:.3})", spec.id, fit.mean, fit.std),
                dir.join(format!("{name}_hist.svg")),
            )?;
        }
        summaries.push(summary);
    }
    let file = report::emit_summary(&summaries, &config.output_dir, Some(config.run_hash()))?;
    log::info!("event=report_done datasets={}", summaries.len());
    Ok(file)
}

pub fn cmd_intdim(config: &RunConfig) -> Result<Vec<Result<IdEstimate, PipelineError>>, PipelineError> {
    config.validate()?;
    if config.datasets.is_empty() {
        return Err(PipelineError::Config("no datasets configured".into()));
    }
    Ok(config
        .datasets
        .iter()
        .map(|spec| {
            intdim_dataset(spec, config).map_err(|e| {
                log::error!("event=intdim_failed dataset={} error={e}", spec.id);
                PipelineError::Dataset {
                    dataset: spec.id.clone(),
                    source: Box::new(e),
                }
            })
        })
        .collect())
}

pub fn cmd_embed(config: &RunConfig) -> Result<Vec<Result<Vec<PathBuf>, PipelineError>>, PipelineError> {
    config.validate()?;
    if config.datasets.is_empty() {
        return Err(PipelineError::Config("no datasets configured".into()));
    }
    Ok(config
        .datasets
        .iter()
        .map(|spec| {
            embed_dataset_sweep(spec, config).map_err(|e| {
                log::error!("event=embed_failed dataset={} error={e}", spec.id);
                PipelineError::Dataset {
                    dataset: spec.id.clone(),
                    source: Box::new(e),
                }
            })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_config_with_defaults() {
        let cfg = RunConfig::from_toml_str(
            r#"
            output_dir = "out"
            threads = 4

            [[datasets]]
            id = "cs"
            root = "/data/cs"

            [entropy]
            glcm_levels = 64

            [intdim]
            mode = "glcm_flat"
            levels = 16
            k1 = 5
            k2 = 12

            [embed]
            neighbors = [5, 10]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.threads, 4);
        assert_eq!(cfg.entropy.glcm_levels, 64);
        assert!(cfg.entropy.half_factor);
        assert_eq!(cfg.intdim.features, FeatureMode::GlcmFlat { levels: 16 });
        assert_eq!((cfg.intdim.k1, cfg.intdim.k2), (5, 12));
        assert_eq!(cfg.embed.neighbors, [5, 10]);
        assert_eq!(cfg.embed.min_dist, 0.1);
        cfg.validate().unwrap();

        let back = RunConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn empty_config_uses_defaults() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.intdim.features, FeatureMode::FlatPixels { side: 32 });
        assert_eq!(cfg.embed.neighbors, DEFAULT_NEIGHBOR_SWEEP);
    }

    #[test]
    fn validation_rejects_bad_ids_and_ranges() {
        let mut cfg = RunConfig {
            datasets: vec![
                DatasetSpec {
                    id: "a".into(),
                    root: "x".into(),
                },
                DatasetSpec {
                    id: "a".into(),
                    root: "y".into(),
                },
            ],
            ..RunConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
        cfg.datasets[1].id = "../b".into();
        assert!(cfg.validate().is_err());
        cfg.datasets[1].id = "b".into();
        cfg.validate().unwrap();
        cfg.intdim.k1 = 30;
        assert!(cfg.validate().is_err());
        assert!(RunConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn hash_tracks_entropy_config() {
        let a = config_hash(&EntropyConfig::default());
        let b = config_hash(&EntropyConfig {
            half_factor: false,
            ..EntropyConfig::default()
        });
        assert_ne!(a, b);
        assert_eq!(a.len(), 16);
        assert_eq!(a, config_hash(&EntropyConfig::default()));
    }

    #[test]
    fn entropy_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![
            EntropyRecord {
                path: "a,b/x.png".into(),
                width: 3,
                height: 4,
                shannon: 1.0 / 3.0,
                glcm_entropy: 2.0,
                delentropy: 0.0,
            },
            EntropyRecord {
                path: "y.png".into(),
                width: 30,
                height: 40,
                shannon: 7.25,
                glcm_entropy: 12.123456789,
                delentropy: 3.5,
            },
        ];
        let text = entropy_csv(&records);
        assert!(text.starts_with("path,width,height,shannon,glcm_entropy,delentropy\n"));
        let p = dir.path().join("e.csv");
        std::fs::write(&p, &text).unwrap();
        let back = read_entropy_csv(&p).unwrap();
        assert_eq!(back[0].path, "a,b/x.png");
        assert_eq!(entropy_csv(&back), text);
    }

    #[test]
    fn report_requires_analyze() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            datasets: vec![DatasetSpec {
                id: "d".into(),
                root: dir.path().into(),
            }],
            output_dir: dir.path().join("out"),
            ..RunConfig::default()
        };
        let err = cmd_report(&cfg).unwrap_err();
        assert!(matches!(err, PipelineError::MissingPrerequisite { command: "analyze", .. }));
        assert!(err.to_string().contains("run `analyze` first"));
    }
}
