//! Prototype-guided text-based person search at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! - [`dataset`]: annotation model, corpus IO, validation, statistics, splits and
//!   the synthetic corpus generator.
//! - [`boxes`]: box geometry, NMS, crop-and-resize and a jittering detector.
//! - [`autodiff`]: dense f64 tensors with explicit forward/backward ops, Adam and
//!   a finite-difference gradient checker.
//! - [`encoders`]: toy image/text feature extractors.
//! - [`tpan`]: channel/spatial attention, the prototype table, target maps,
//!   guidance loss and attended pooling.
//! - [`objectives`]: identification and hardest-negative hinge losses.
//! - [`eval`]: detection-aware retrieval evaluation (CMC, mAP).
//! - [`engine`]: configuration, training, checkpoints and gradient suites.
//!
//! Data-parallel loops go through [`exec::Exec`], which uses rayon when the
//! `parallel` feature is enabled and falls back to plain iteration otherwise.

pub mod autodiff;
pub mod boxes;
pub mod dataset;
pub mod encoders;
pub mod engine;
pub mod error;
pub mod eval;
pub mod exec;
pub mod objectives;
pub mod rng;
pub mod tpan;

pub use error::{Error, Result};
