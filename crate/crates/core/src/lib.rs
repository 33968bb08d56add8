//! Paired live/attack training toolkit for unified face-attack detection.
//!
//! The crate is organised bottom-up:
//!
//! - [`diffcore`]: dense `f64` tensors, a small reverse-mode tape and a
//!   central-difference gradient checker.
//! - [`datamodel`]: samples, embeddings, on-disk formats and the seeded
//!   synthetic generator.
//! - [`pairmine`]: cosine matching of every attack to its closest live sample
//!   and threshold filtering.
//! - [`sampler`]: paired batch planning (attacks first, then their matched lives).
//! - [`augment`]: live-only photometric augmentation and CutMix with label routing.
//! - [`losses`]: focal loss, supervised contrastive loss and their weighted sum.
//! - [`metrics`]: APCER, BPCER, ACER, EER, accuracy and AUC.
//! - [`trainer`]: toy encoder with two heads, AdamW, warmup-cosine schedule and
//!   checkpoint selection by validation EER.

pub mod augment;
pub mod datamodel;
pub mod diffcore;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod pairmine;
pub mod sampler;
pub mod trainer;

pub use error::{Error, Result};
