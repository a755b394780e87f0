//! Desk-scale multiview acoustic source localization: scene simulation,
//! mic-array DSP front end, a set-prediction localizer trained with a
//! hand-rolled reverse-mode tape, and matching-based evaluation.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod losses;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
