//! camofreq: frequency-domain tools for camouflaged instance segmentation.
//!
//! The crate bundles the numeric pieces needed to study camouflage in the
//! frequency domain at desk scale:
//!
//! - [`tensor`] — float64 tensors with reverse-mode autodiff and a seeded
//!   parameter store.
//! - [`cbom`] — channel-balance correction that re-weights feature channels
//!   against a per-channel reference statistic.
//! - [`fdtim`] — 2-D Fourier analysis with top-K amplitude filtering and the
//!   truth-gate fusion of filtered and unfiltered features.
//! - [`mffam`] — single-level Haar wavelet decomposition with low/high
//!   frequency fusion and a multi-scale proposal head.
//! - [`pipeline`] — a small trainable encoder/decoder that assembles the
//!   modules, plus a synthetic camouflage data generator.
//! - [`evalstat`] — class-agnostic mask AP, contrast measures, and dataset
//!   statistics.
//! - [`ingest`] — COCO-style annotation loading and mask codecs.
//!
//! All numerics are deterministic: identical seeds and inputs produce
//! bit-identical outputs.

pub mod cbom;
pub mod error;
pub mod evalstat;
pub mod fdtim;
pub mod imageio;
pub mod ingest;
pub mod mask;
pub mod mffam;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
