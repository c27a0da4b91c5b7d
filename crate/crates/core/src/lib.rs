//! Semi-supervised risk estimation with a debiasing control variate.
//!
//! The crate bundles a small autodiff engine ([`ndgrad`]), softmax
//! classifiers ([`models`]), label-free surrogate losses ([`surrogates`]),
//! the complete-case / SSL / debiased risk estimators ([`risk`]), a
//! mini-batch trainer ([`trainer`]), evaluation metrics ([`metrics`]) and
//! Monte-Carlo verification routines ([`stats`]).

pub mod data;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod models;
pub mod ndgrad;
pub mod risk;
pub mod rng;
pub mod report;
pub mod stats;
pub mod surrogates;
pub mod trainer;

pub use error::{Error, Result};
