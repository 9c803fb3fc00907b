//! Sliced kernelized Stein discrepancies.
//!
//! The crate is organised bottom-up:
//!
//! | module | contents |
//! |--------|----------|
//! | [`math`] | seedable RNG, dense matrices, LU, median heuristic, Adam, sphere projection |
//! | [`targets`] | score models (Gaussian, Laplace, Student-t, Gaussian-Bernoulli RBM, ICA) and their samplers |
//! | [`discrepancy`] | KSD and the sliced maxSKSD-g / maxSKSD-rg estimators, bootstrap, direction optimisation |
//! | [`goftest`] | bootstrap goodness-of-fit test and the benchmark / RBM harnesses |
//! | [`samplers`] | SVGD, sliced SVGD, PARF, SGHMC and step-size selection |
//! | [`models`] | ICA learning by discrepancy minimisation |
//! | [`config`] | JSON experiment configurations consumed by the CLI |
//!
//! Every randomised routine takes an explicit [`math::Rng`], so results are a pure
//! function of the seed.

pub mod config;
pub mod discrepancy;
pub mod error;
pub mod goftest;
pub mod math;
pub mod models;
pub mod samplers;
pub mod targets;

pub use error::{Error, Result};
pub use math::{Matrix, Rng};
