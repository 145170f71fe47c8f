//! Streaming class-incremental learning (SCIL).
//!
//! A one-by-one streaming classifier built from an autoencoder and an MLP
//! head that share an encoder. Instances whose reconstruction loss exceeds the
//! threshold of their predicted class are buffered as a suspected new class;
//! once the buffer fills, the minority queues are purified by the corrector,
//! rebalanced with SMOTE and a new model is trained. At a fixed interval the
//! model is retrained on the replay queues to follow concept drift.
//!
//! Module map:
//!
//! - [`nn`]: dense layers, activations, losses and the Adam/SGD optimizer.
//! - [`model`]: the joint encoder/decoder/classifier model.
//! - [`memory`]: bounded per-class FIFO queues.
//! - [`novelty`]: per-class reconstruction thresholds and detection.
//! - [`corrector`]: density, geometric median and Mahalanobis core selection.
//! - [`smote`]: minority oversampling.
//! - [`engine`]: the online loop.
//! - [`streams`]: synthetic generators, CSV replay and scaling.
//! - [`metrics`]: prequential EN_Accuracy, faded recall, G-mean, FNR, MDC.
//! - [`experiment`]: multi-seed experiment runner and output files.

pub mod corrector;
pub mod engine;
mod error;
pub mod experiment;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod novelty;
pub mod smote;
pub mod streams;

pub use error::{Error, Result};

/// Euclidean distance between two equally sized vectors.
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
