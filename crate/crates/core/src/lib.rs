//! Document image retrieval and pattern spotting.
//!
//! The pipeline has an offline and an online half:
//!
//! - offline: [`proposals`] turns every page into candidate boxes, a
//!   [`siamese`] encoder is trained on similar/dissimilar patch pairs, and
//!   [`index`] embeds every candidate once into a [`index::FeatureStore`];
//! - online: a query crop is embedded and ranked against the whole store by
//!   exhaustive Euclidean distance, either one hit per document (retrieval)
//!   or one hit per located box (spotting).
//!
//! [`eval`] scores both tasks with AP/mAP and recall at a set of Top-k
//! cut-offs and, for spotting, across an IoU threshold grid.

pub mod corpus;
pub mod distance;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod index;
pub mod proposals;
pub mod siamese;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{AspectGate, BBox};
pub use image::GrayImage;
