//! B-spline, NURBS and Bernstein bases, spline patches and Bezier extraction.

mod bernstein;
mod extraction;
mod knots;
mod patch;

pub use bernstein::{bernstein_1d, binomial, eval_bernstein, BernsteinEval};
pub use extraction::{bezier_extract, BezierElement};
pub use knots::KnotVector;
pub use patch::{BasisEval, PatchEval, SpanBox, SplinePatch};
