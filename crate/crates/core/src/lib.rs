//! Training and evaluation pipeline for 7-class facial emotion recognition
//! on FER-2013.
//!
//! The crate is organised around the stages of a run:
//!
//! - [`dataset`]: CSV ingestion, class statistics and the seeded stratified split.
//! - [`augment`]: keyed random affine augmentation and backbone preprocessing.
//! - [`loss`]: label-smoothed, class-weighted cross-entropy with analytic gradients.
//! - [`optim`]: Adam and AdamW (decoupled weight decay).
//! - [`model`]: the trainable-model abstraction, the classification head, the
//!   softmax-regression reference backend and the pretrained-backbone adapter contract.
//! - [`controller`]: the two-phase loop with checkpoint, plateau and early-stop callbacks.
//! - [`eval`]: confusion matrices, per-class reports, rendered tables and curves.
//! - [`cli`]: run configuration and the `prepare | train | evaluate | report` commands.

pub mod augment;
pub mod checkpoint;
pub mod cli;
pub mod controller;
pub mod dataset;
pub mod eval;
pub mod loss;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod synthetic;

mod error;

pub use error::{Error, Result};
