//! Attention guided graph convolutional networks for relation extraction
//! over dependency trees, with a small reverse-mode autodiff engine.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod depgraph;
pub mod error;
pub mod layers;
pub mod model;
pub mod numerics;
pub mod train;

pub use error::{Error, Result};
