//! Normal fits, dataset ranking and the summary/table/plot artifacts.

mod svg;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entropy::EntropyRecord;

pub use svg::{emit_embedding_svg, emit_histogram_svg, embedding_svg, freedman_diaconis_bins, histogram_svg};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("need at least 2 samples for a normal fit, got {0}")]
    TooFewSamples(usize),
    #[error("sample {0} is not finite")]
    NonFinite(usize),
    #[error("no datasets to report")]
    NoDatasets,
    #[error("dataset {dataset} has no {metric} value")]
    MissingMetric { dataset: String, metric: Metric },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {what}: {reason}")]
    Parse { what: String, reason: String },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Formats a float with at most 9 significant digits, shortest form.
///
/// Idempotent: re-formatting the parsed output yields the same string.
pub fn fmt_sig9(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

/// Mean and sample (n-1) standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalFit {
    pub mean: f64,
    pub std: f64,
    #[serde(skip_serializing, default)]
    pub n: usize,
}

impl NormalFit {
    pub fn pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.std;
        (-0.5 * z * z).exp() / (self.std * (2.0 * std::f64::consts::PI).sqrt())
    }
}

/// Single-pass (Welford) mean and variance.
pub fn fit_normal(samples: &[f64]) -> Result<NormalFit, ReportError> {
    if samples.len() < 2 {
        return Err(ReportError::TooFewSamples(samples.len()));
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        if !x.is_finite() {
            return Err(ReportError::NonFinite(i));
        }
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    let n = samples.len();
    Ok(NormalFit {
        mean,
        std: (m2.max(0.0) / (n - 1) as f64).sqrt(),
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Shannon,
    Glcm,
    Delentropy,
    Id,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Shannon, Metric::Glcm, Metric::Delentropy, Metric::Id];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Shannon => "shannon",
            Metric::Glcm => "glcm",
            Metric::Delentropy => "delentropy",
            Metric::Id => "id",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown metric {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdSummary {
    pub pooled: f64,
    pub k_range: (usize, usize),
}

/// One dataset's row of the comparison; serializes to the `summary.json` entry schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub dataset_id: String,
    pub n_images: usize,
    pub shannon: NormalFit,
    pub glcm: NormalFit,
    pub delentropy: NormalFit,
    pub intrinsic_dim: Option<IdSummary>,
    /// Location of the embedding outputs, relative to the run directory.
    pub embedding: Option<String>,
}

impl DatasetSummary {
    /// Fits the three entropy distributions from one dataset's records.
    pub fn from_records(dataset_id: &str, records: &[EntropyRecord]) -> Result<Self, ReportError> {
        let column = |f: fn(&EntropyRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
        Ok(Self {
            dataset_id: dataset_id.to_string(),
            n_images: records.len(),
            shannon: fit_normal(&column(|r| r.shannon))?,
            glcm: fit_normal(&column(|r| r.glcm_entropy))?,
            delentropy: fit_normal(&column(|r| r.delentropy))?,
            intrinsic_dim: None,
            embedding: None,
        })
    }

    pub fn fit(&self, metric: Metric) -> Option<&NormalFit> {
        match metric {
            Metric::Shannon => Some(&self.shannon),
            Metric::Glcm => Some(&self.glcm),
            Metric::Delentropy => Some(&self.delentropy),
            Metric::Id => None,
        }
    }

    /// The value datasets are ranked by: the fitted mean, or the pooled ID.
    pub fn metric_value(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Id => self.intrinsic_dim.as_ref().map(|d| d.pooled),
            m => self.fit(m).map(|f| f.mean),
        }
    }
}

/// Dataset ids in ascending order of the metric (lowest to highest complexity).
/// Equal values fall back to lexicographic id order.
pub fn rank_datasets(summaries: &[DatasetSummary], metric: Metric) -> Result<Vec<String>, ReportError> {
    if summaries.is_empty() {
        return Err(ReportError::NoDatasets);
    }
    let mut keyed = summaries
        .iter()
        .map(|s| {
            s.metric_value(metric)
                .map(|v| (v, s.dataset_id.clone()))
                .ok_or_else(|| ReportError::MissingMetric {
                    dataset: s.dataset_id.clone(),
                    metric,
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    Ok(keyed.into_iter().map(|(_, id)| id).collect())
}

/// Effect size (difference of means over pooled std) below which adjacent ranks are
/// reported as a near-tie.
pub const NEAR_TIE_EFFECT_SIZE: f64 = 0.2;

/// Adjacent pairs in `order` whose values are equal, or (for entropy metrics) whose
/// means differ by less than [`NEAR_TIE_EFFECT_SIZE`] pooled standard deviations.
pub fn near_ties(summaries: &[DatasetSummary], order: &[String], metric: Metric) -> Vec<(String, String)> {
    let by_id: BTreeMap<&str, &DatasetSummary> = summaries.iter().map(|s| (s.dataset_id.as_str(), s)).collect();
    order
        .windows(2)
        .filter_map(|pair| {
            let (a, b) = (by_id.get(pair[0].as_str())?, by_id.get(pair[1].as_str())?);
            let (va, vb) = (a.metric_value(metric)?, b.metric_value(metric)?);
            let tied = if va == vb {
                true
            } else if let (Some(fa), Some(fb)) = (a.fit(metric), b.fit(metric)) {
                let pooled = ((fa.std * fa.std + fb.std * fb.std) / 2.0).sqrt();
                pooled > 0.0 && (vb - va).abs() < NEAR_TIE_EFFECT_SIZE * pooled
            } else {
                false
            };
            tied.then(|| (pair[0].clone(), pair[1].clone()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub datasets: Vec<DatasetSummary>,
    pub ranks: BTreeMap<Metric, Vec<String>>,
    #[serde(default)]
    pub near_ties: BTreeMap<Metric, Vec<(String, String)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl SummaryFile {
    /// Ranks every metric present in all datasets; the id metric is skipped (empty) when any
    /// dataset lacks an estimate.
    pub fn build(datasets: Vec<DatasetSummary>, config_hash: Option<String>) -> Result<Self, ReportError> {
        if datasets.is_empty() {
            return Err(ReportError::NoDatasets);
        }
        let mut ranks = BTreeMap::new();
        let mut ties = BTreeMap::new();
        for metric in Metric::ALL {
            let order = match rank_datasets(&datasets, metric) {
                Ok(order) => order,
                Err(ReportError::MissingMetric { .. }) if metric == Metric::Id => Vec::new(),
                Err(e) => return Err(e),
            };
            let t = near_ties(&datasets, &order, metric);
            for (a, b) in &t {
                log::info!("event=near_tie metric={metric} a={a} b={b}");
            }
            ties.insert(metric, t);
            ranks.insert(metric, order);
        }
        Ok(Self {
            datasets,
            ranks,
            near_ties: ties,
            config_hash,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        let mut file: SummaryFile = serde_json::from_str(text).map_err(|e| ReportError::Parse {
            what: "summary.json".into(),
            reason: e.to_string(),
        })?;
        for d in &mut file.datasets {
            for fit in [&mut d.shannon, &mut d.glcm, &mut d.delentropy] {
                fit.n = d.n_images;
            }
        }
        Ok(file)
    }
}

fn csv_to_string(rows: Vec<Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    for row in rows {
        w.write_record(&row).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}

/// Mean/std per entropy per dataset.
pub fn table2_csv(summaries: &[DatasetSummary]) -> String {
    let mut rows = vec![[
        "dataset_id",
        "n_images",
        "shannon_mean",
        "shannon_std",
        "glcm_mean",
        "glcm_std",
        "delentropy_mean",
        "delentropy_std",
    ]
    .map(String::from)
    .to_vec()];
    for s in summaries {
        rows.push(vec![
            s.dataset_id.clone(),
            s.n_images.to_string(),
            fmt_sig9(s.shannon.mean),
            fmt_sig9(s.shannon.std),
            fmt_sig9(s.glcm.mean),
            fmt_sig9(s.glcm.std),
            fmt_sig9(s.delentropy.mean),
            fmt_sig9(s.delentropy.std),
        ]);
    }
    csv_to_string(rows)
}

/// One row per metric: ascending order joined by `;`, near-tied pairs as `a~b`.
pub fn table3_csv(file: &SummaryFile) -> String {
    let mut rows = vec![vec!["metric".to_string(), "order".into(), "near_ties".into()]];
    for (metric, order) in &file.ranks {
        if order.is_empty() {
            continue;
        }
        let ties = file
            .near_ties
            .get(metric)
            .map(|t| t.iter().map(|(a, b)| format!("{a}~{b}")).collect::<Vec<_>>().join(";"))
            .unwrap_or_default();
        rows.push(vec![metric.to_string(), order.join(";"), ties]);
    }
    csv_to_string(rows)
}

/// Pooled intrinsic dimensionality for datasets that have one.
pub fn table1_csv(summaries: &[DatasetSummary]) -> Option<String> {
    let with_id: Vec<_> = summaries.iter().filter(|s| s.intrinsic_dim.is_some()).collect();
    if with_id.is_empty() {
        return None;
    }
    let mut rows = vec![["dataset_id", "pooled_id", "k1", "k2"].map(String::from).to_vec()];
    for s in with_id {
        let id = s.intrinsic_dim.as_ref().expect("filtered");
        rows.push(vec![
            s.dataset_id.clone(),
            fmt_sig9(id.pooled),
            id.k_range.0.to_string(),
            id.k_range.1.to_string(),
        ]);
    }
    Some(csv_to_string(rows))
}

/// Parses `table3.csv` back into metric -> order.
pub fn parse_table3(text: &str) -> Result<BTreeMap<Metric, Vec<String>>, ReportError> {
    let parse_err = |reason: String| ReportError::Parse {
        what: "table3.csv".into(),
        reason,
    };
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let metric: Metric = rec.get(0).unwrap_or_default().parse().map_err(parse_err)?;
        let order = rec.get(1).unwrap_or_default().split(';').map(String::from).collect();
        out.insert(metric, order);
    }
    Ok(out)
}

fn write_file(path: &Path, contents: &str) -> Result<(), ReportError> {
    std::fs::write(path, contents).map_err(io_err(path))
}

/// Writes `summary.json`, `table2.csv`, `table3.csv` and (when any ID exists) `table1.csv`.
pub fn emit_summary(
    summaries: &[DatasetSummary],
    out_dir: impl AsRef<Path>,
    config_hash: Option<String>,
) -> Result<SummaryFile, ReportError> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let file = SummaryFile::build(summaries.to_vec(), config_hash)?;
    write_file(&out_dir.join("summary.json"), &file.to_json())?;
    write_file(&out_dir.join("table2.csv"), &table2_csv(summaries))?;
    write_file(&out_dir.join("table3.csv"), &table3_csv(&file))?;
    if let Some(t1) = table1_csv(summaries) {
        write_file(&out_dir.join("table1.csv"), &t1)?;
    }
    Ok(file)
}
