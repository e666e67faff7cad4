//! Fast formation of isogeometric elasticity operators for microstructures
//! built by composing a macro spline map with a reference tile.
//!
//! The fast path projects the macro-scale fields onto a Bernstein space per
//! element and contracts them with precomputed tile integrals; an element
//! loop with full Gauss quadrature serves as the reference.

#![allow(
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::type_complexity
)]

pub mod assembly;
pub mod curvilinear;
pub mod error;
pub mod generators;
pub mod linalg;
pub mod lookup;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod projection;
pub mod quadrature;
pub mod sensitivity;
pub mod solve;
pub mod sparse;
pub mod splines;

pub use error::{Error, Result};
