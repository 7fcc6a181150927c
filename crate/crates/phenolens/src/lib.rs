//! Contrastive representation learning and latent-space analytics for
//! phenotype screening data.
//!
//! The crate covers the full desk-scale pipeline: a seeded synthetic
//! phenotype generator, a small encoder trained with the NT-Xent contrastive
//! objective, a weighted linear probe over frozen representations, and the
//! cosine-similarity analytics used to read the resulting latent space
//! (class centers, similarity matrices, anomaly/novelty scores,
//! concentration gradients, drift, 2-D PCA). Everything is deterministic
//! given a seed. The `phenolens` binary exposes each stage as a subcommand.

pub mod analytics;
pub mod config;
pub mod contrastive;
pub mod data;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod probe;
pub mod rng;

pub use error::{Category, Error, Result};
