//! Supervised anomaly detection with inexact anomaly labels.
//!
//! An autoencoder's reconstruction error is used as the anomaly score. It is
//! trained to keep the scores of normal instances low while pushing up a
//! smooth surrogate of the inexact AUC: the probability that the highest
//! score inside a labelled set beats the score of a normal instance.

pub mod cli;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod objective;
pub mod scorer;
pub mod tensor;

pub use error::{Error, Result};
