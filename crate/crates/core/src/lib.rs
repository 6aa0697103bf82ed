// `!(x > 0.0)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alm;
pub mod apps;
pub mod cli;
pub mod error;
pub mod io;
pub mod linmap;
pub mod manifold;
pub mod model;
pub mod newton;
pub mod prox;
pub mod spectral;

pub use error::{Result, SdpError};
