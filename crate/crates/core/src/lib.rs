//! Curvature, Einstein metrics and Ricci flow on compact homogeneous spaces, with tools
//! for constructing collapsed ancient solutions over torus fibrations.

#![allow(clippy::needless_range_loop)]

pub mod algebra;
pub mod ancient;
pub mod catalog;
pub mod curvature;
pub mod einstein;
pub mod flow;
pub mod formats;
pub mod error;
pub mod linalg;

pub use error::{Error, Result};
