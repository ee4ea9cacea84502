//! Selective debiasing of classifier predictions.
//!
//! A classifier head is paired with a linear concept eraser (LEACE or INLP).
//! Every prediction gets a bias score comparing the original and the debiased
//! output, and only predictions whose score clears a calibrated threshold are
//! replaced by their debiased counterparts.

pub mod data;
pub mod erasure;
pub mod experiment;
pub mod error;
pub mod metrics;
pub mod scoring;
pub mod selection;
pub mod io;
pub mod linalg;
pub mod models;

pub use error::{Error, ErrorClass, Result};
