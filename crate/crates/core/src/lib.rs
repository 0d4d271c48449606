// `!(x > 0.0)` is used on purpose so NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimate;
pub mod fourier;
pub mod image;
pub mod io;
pub mod kernel;
pub mod metrics;
pub mod nonuniform;
pub mod optimizer;
pub mod synth;
