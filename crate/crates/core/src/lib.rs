//! Learning one image-quality model from several datasets whose opinion
//! scores live on incompatible scales.
//!
//! A single [`regressor::RegressorHead`] maps a backbone feature map to a
//! shared perceptual quality. Each training dataset owns a
//! [`monotone::MonotonicTransformer`] that maps that shared quality onto the
//! dataset's own annotation scale. The transformers are strictly increasing
//! by construction, so they can absorb any monotone rescaling between
//! datasets without disturbing rank order. At test time only the regressor
//! is used.
//!
//! Per-sample work (feature pooling, regressor passes, property sampling)
//! runs on rayon when the `parallel` feature is enabled (the default) and
//! falls back to plain iterators otherwise. Reductions always happen in
//! index order, so both modes produce bitwise-identical results.

pub mod data;
pub mod diffcore;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod monotone;
pub mod par;
pub mod regressor;
pub mod train;
pub mod verify;

pub use error::{Error, ErrorKind, FormatError, Result};
