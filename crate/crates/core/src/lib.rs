//! Fairness-aware first-order meta-learning for few-shot binary
//! classification of grouped sequences.

pub mod autodiff;
pub mod backbone;
pub mod config;
pub mod data;
mod error;
pub mod harness;
pub mod meta;
pub mod metrics;
pub mod model_io;
pub mod objectives;
pub mod parallel;
mod real;
pub mod vector;

pub use error::{DataError, Error, Result};
pub use real::Real;
