//! Unsupervised remote photoplethysmography: a spatiotemporal encoder trained
//! with a contrastive objective over power spectra, plus the signal processing,
//! data preparation, training and evaluation around it.

pub mod config;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod losses;
pub mod model;
pub mod optim;
pub mod plot;
pub mod signal;
pub mod strppg;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
