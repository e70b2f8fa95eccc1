//! Exterior-calculus workbench for boundary inverse problems on slab geometries.
//!
//! The crate is organized around the pipeline
//!
//! * [`exterior`] — pointwise exterior algebra: multi-indices, wedge,
//!   contraction, metric inner products, Hodge star, boundary projections;
//! * [`expr`] — a small closed-form scalar expression language with exact
//!   rational constants, a parser, symbolic differentiation and Taylor
//!   extraction in the normal variable;
//! * [`geometry`] — metrics in boundary normal form, curvature, and the
//!   k-form Laplacian assembled both from the Weitzenböck formula and from
//!   `d*d*` compositions, plus a quadrature check of the integration identity;
//! * [`symbols`] — pseudodifferential symbol arithmetic on the boundary, the
//!   first-order factorization of the Laplacian, parameterized symbol
//!   families and the conformal-difference computation;
//! * [`dtn`] — a numeric Dirichlet solver on `T^{n-1} x [0,T]` and Fourier
//!   probing of the Dirichlet-to-Neumann map;
//! * [`reconstruct`] — recovery of boundary metric data from probed symbols.

pub mod dtn;
pub mod expr;
pub mod exterior;
pub mod geometry;
pub mod par;
pub mod reconstruct;
pub mod scalar;
pub mod symbols;

pub use expr::Expr;
pub use exterior::{FiberForm, MultiIndex, PointMetric};
pub use geometry::MetricBnf;
