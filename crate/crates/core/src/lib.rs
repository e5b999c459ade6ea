// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod error;
pub mod experiment;
pub mod math;
pub mod metrics;
pub mod mixing;
pub mod model;
pub mod optim;
pub mod selection;

pub use error::{Error, Result};
