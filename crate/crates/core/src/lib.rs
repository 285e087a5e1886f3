#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod distributions;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod inference;
pub mod models;
pub mod samplers;
pub mod theory;

pub use error::{Error, Result};
