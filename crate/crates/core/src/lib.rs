//! Contact-aware skeletal action recognition.
//!
//! Hand joints and a posed object mesh give each joint a contact/distant
//! label ([`geometry`]). A small network learns to predict those labels from
//! joints and an object bounding box alone, and a second network classifies
//! whole clips from the skeleton plus the predicted contact-maps
//! ([`pipeline`]). [`evaluation`] computes accuracy tables, confusion
//! matrices and the contact ablation.

pub mod datamodel;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod neuralcore;
pub mod pipeline;

mod fsutil;

pub use error::{Error, ErrorKind, Result};
pub use fsutil::write_atomic;
