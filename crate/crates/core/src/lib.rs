//! Within-host hepatitis B dynamics: uninfected cells `x`, infected cells `y`
//! and free virus `z` under a constant or time-varying production rate Λ(t).

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod equilibria;
pub mod error;
pub mod experiments;
pub mod integrator;
pub mod linalg;
pub mod model;
pub mod process;
pub mod scenario;
pub mod stability;

pub use error::{Error, Result};
