//! Factor fields: signals represented as products of transformed factors,
//! with training and evaluation for images, signed distance fields and
//! radiance fields.

pub mod engine;
pub mod error;
pub mod exec;
pub mod factors;
pub mod io;
pub mod model;
pub mod real;
pub mod tasks;
pub mod transforms;

pub use error::{Error, Result};
pub use exec::Exec;
pub use real::{DType, Real};
