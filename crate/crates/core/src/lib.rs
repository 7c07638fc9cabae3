#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bayes;
pub mod cli;
pub mod cpod;
pub mod error;
pub mod geometry;
pub mod io;
pub mod plot;
pub mod prior;
pub mod stats;
pub mod synth;

pub use error::{FuseError, Result};
