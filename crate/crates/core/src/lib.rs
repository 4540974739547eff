//! Conditional comment synthesis, augmentation, behavior-feature generation
//! and fusion sarcasm detection.

pub mod augment;
pub mod behavior_gan;
pub mod checkpoint;
pub mod comment_gan;
pub mod corpus;
pub mod detector;
pub mod error;
pub mod expharness;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
