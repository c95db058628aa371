#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod coarsify;
pub mod config;
pub mod container;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod label;
pub mod losses;
pub mod model;
pub mod pipeline;
pub mod pseudolabel;
pub mod rng;
pub mod sampler;
pub mod tensorops;

pub use error::{Error, ErrorKind, Result};
