#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::suspicious_arithmetic_impl, clippy::too_many_arguments)]

pub mod bump;
pub mod dilation;
pub mod error;
pub mod evolve;
pub mod fit;
pub mod gauge;
pub mod jet;
pub mod lattice;
pub mod metric;
pub mod quad;
pub mod resolvent;
pub mod speccal;
pub mod vecops;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
