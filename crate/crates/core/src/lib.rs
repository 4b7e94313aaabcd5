//! Adversarial privacy-preserving video degradation: a learned frame filter
//! trained so a utility action classifier keeps working while an ensemble of
//! privacy classifiers — and, crucially, freshly trained attackers — cannot
//! recover identity or attribute labels from the filtered frames.

pub mod data;
pub mod error;
pub mod eval;
pub mod nets;
pub mod nn;
pub mod objectives;
pub mod trainer;

pub use error::{Error, Result};
