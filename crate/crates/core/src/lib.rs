//! Dataset complexity measures for image collections: per-image Shannon, GLCM and
//! delentropy, maximum-likelihood intrinsic dimensionality, 2-D manifold embeddings, and
//! the dataset-level summaries built from them.

pub mod embed;
pub mod entropy;
pub mod ingest;
pub mod intdim;
pub mod pipeline;
pub mod report;
