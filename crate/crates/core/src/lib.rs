//! Attentive spatio-temporal feature fusion for semantic segmentation of
//! point cloud sequences.

pub mod asap;
pub mod autodiff;
pub mod backbone;
pub mod data;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod train;

pub use error::{Error, Result};
