//! Sentence-encoder cartography from embedding matrices.
//!
//! Each encoder's embeddings of a shared sentence set are turned into a
//! density matrix (trace-normalized Gram matrix). Its quantum relative entropy
//! against an isotropic reference is split per sentence axis into a feature
//! vector. Feature vectors are then compared with ℓ1 distances, clustered,
//! projected to 2D, and used to predict downstream scores.
//!
//! The numeric code is generic over [`Scalar`] (`f32`, `f64`). The aliases at
//! the crate root fix the scalar to `f64`, which is what the file formats and
//! the command-line tool use.

// `!(x > y)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distance;
pub mod embedding;
pub mod error;
pub mod linalg;
pub mod prediction;
pub mod projection;
pub mod qre;
pub mod report;
pub mod scalar;
pub mod spectral;
pub mod synthetic;

mod binfmt;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type EmbeddingMatrix = embedding::EmbeddingMatrix<f64>;
pub type DensitySpectrum = spectral::DensitySpectrum<f64>;
pub type FeatureVector = qre::FeatureVector<f64>;
pub type QreBreakdown = qre::QreBreakdown<f64>;

pub type EmbeddingMatrix32 = embedding::EmbeddingMatrix<f32>;
pub type DensitySpectrum32 = spectral::DensitySpectrum<f32>;
pub type FeatureVector32 = qre::FeatureVector<f32>;
pub type DistanceMatrix = distance::DistanceMatrix<f64>;
pub type DendrogramNode = distance::DendrogramNode<f64>;
pub type MapLayout = projection::MapLayout<f64>;
pub type PcaModel = projection::PcaModel<f64>;
pub type ElasticNetModel = prediction::ElasticNetModel<f64>;
