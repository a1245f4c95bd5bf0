//! Optimal-transport and agreement-based objectives for zero-shot multilingual translation.

pub mod agreement;
pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod ot;
pub mod rng;
pub mod smd;
pub mod train;

pub use error::{Error, Result};
