//! Single-source domain generalization for binary image segmentation.
//!
//! The crate turns one labelled source domain into many by mixing Gaussian
//! high-pass "frequency views" of each image, trains a coupled network that
//! reconstructs a fixed anchor view while segmenting, and ships the tools
//! around it: a synthetic vessel-like data generator, DICE/Mcc evaluation and
//! an embedding-space analyzer for domain discrepancy.
//!
//! | module | purpose |
//! |---|---|
//! | [`frequency_views`] | Gaussian kernels and high-pass views |
//! | [`fmaug`] | frequency-mixed augmentation |
//! | [`network`] | coupled encoder / dual-decoder network |
//! | [`losses`] | L1 reconstruction, BCE segmentation, weighted total |
//! | [`metrics`] | confusion counts, DICE, Mcc |
//! | [`trainer`] | schedule, training loop, model selection, prediction |
//! | [`discrepancy`] | embedding dispersion and hypothesis verdicts |
//! | [`data_pipeline`] | manifests, loading, synthetic datasets |
//! | [`checkpoint`] | binary checkpoints with optimizer state |
//! | [`cli`] | subcommands and their resolved JSON configs |

pub mod checkpoint;
pub mod cli;
pub mod data_pipeline;
pub mod discrepancy;
pub mod error;
pub mod fmaug;
pub mod frequency_views;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod optim;
pub mod trainer;

pub use error::{Error, Result};
