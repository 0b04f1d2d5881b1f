//! Hypergraph contrastive learning over attribute, local and global views.

pub mod augment;
pub mod autodiff;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod graph;
pub mod model;
pub mod netcl;
pub mod oracles;
pub mod params;
pub mod tensor;
pub mod trainer;
pub mod verify;
pub mod views;

pub use error::{Error, Result};
