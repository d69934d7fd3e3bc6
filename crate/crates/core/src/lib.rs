//! Deep feature learning toolkit.
//!
//! Images are projected once through a frozen pretrained backbone into a cached
//! embedding dataset; small classification heads are then trained on those
//! embeddings with Gaussian noise applied in feature space. The crate also ships
//! the harnesses used to compare candidate backbones on a proxy task and to run
//! view/augmentation ablations.
//!
//! Pipeline layout:
//!
//! - [`dataset`]: manifest of labeled samples and their image views.
//! - [`imageprep`]: decode, grayscale, resize, pad-then-scale, pixel normalization.
//! - [`extractor`]: backbone loading and deterministic parallel extraction.
//! - [`embedstore`]: the `DFLB` binary embedding store.
//! - [`head`]: dense softmax head, focal loss, ADAM, feature noise, training loop.
//! - [`metrics`]: confusion matrix, balanced accuracy, Cohen kappa, F1, PR-AUC.
//! - [`bench`]: backbone selection, biomarker task and ablation runners.

pub mod bench;
pub mod dataset;
pub mod embedstore;
mod error;
pub mod extractor;
pub mod head;
pub mod imageprep;
pub mod metrics;

pub use error::{Error, Result};

use sha2::{Digest, Sha256};

/// Hex SHA-256 of a byte slice. Used for manifest and config provenance hashes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
