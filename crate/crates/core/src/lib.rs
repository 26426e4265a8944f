//! Diversified subset selection for large sparse single-cell datasets, and
//! attention-map based discovery of pairwise gene interactions.
//!
//! The pipeline has three stages:
//!
//! 1. [`sketch`] estimates the Min-Max kernel density of every cell with two
//!    linear scans over the data and an `R x B` counter array, using the 0-bit
//!    consistent weighted sampling hashes from [`cws`].
//! 2. [`sampler`] turns densities into inverse-density softmax probabilities
//!    and draws a weighted subset without replacement.
//! 3. [`attention`] runs a small permutation-invariant transformer over each
//!    sampled cell; [`interaction`] scatter-adds the averaged attention maps
//!    into a ranked list of gene pairs, which [`enrichment`] scores against a
//!    ground-truth pair set.
//!
//! [`sparse`] holds the data model plus the exact O(n^2) density oracle that
//! the randomized pieces are validated against.

pub mod attention;
pub mod cws;
pub mod enrichment;
mod error;
pub mod interaction;
pub mod rng;
pub mod sampler;
pub mod sketch;
pub mod sparse;
pub mod synth;

#[cfg(feature = "cli")]
pub mod cli;

pub use error::{Error, Result};
