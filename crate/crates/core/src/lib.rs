//! Sparse causal voxel selection and ICA-based network comparison for
//! resting-state fMRI.
//!
//! The pipeline fits one-step linear predictive models between voxels in two
//! sparsity stages (region-wise ℓ2,1 group selection, then per-voxel LASSO),
//! refits a support-constrained ridge model, checks significance against
//! time-shuffled surrogates, and then decomposes the selected voxels with
//! spatial fastICA to compare networks across subjects and against a group
//! decomposition.

pub mod config;
pub mod data_model;
pub mod error;
pub mod ica;
pub mod l21;
pub mod lasso_ridge;
pub mod linalg;
pub mod selection;
pub mod similarity;
pub mod synth;
pub mod workflow;

pub use error::{Error, ErrorKind, Result};
