//! Numerical estimation of fixed-point multiplicity from ε-neighborhoods of orbits.
//!
//! For a map `g = id - f` on `(0, d)` with attracting fixed point 0, the length
//! `|A_ε|` of the ε-neighborhood of any orbit grows like `f⁻¹(ε)` as ε → 0
//! (for sublinear `f`). Comparing `|A_ε|` against the inverted members of a
//! Chebyshev scale locates the critical Minkowski order of the orbit, which
//! bounds the multiplicity of the fixed point in any family developing in that
//! scale — and hence the cyclicity of the limit periodic set when `g` is a
//! Poincaré map.
//!
//! The pipeline is split into small modules:
//!
//! * [`expr`] — closed-form expressions of one variable: parsing, stable
//!   evaluation near 0, exact differentiation.
//! * [`scales`] — Chebyshev scales: axiom validation, generalized derivatives
//!   `D_i`, numerical inversion of members, multiplicity bounds.
//! * [`orbit`] — orbit generation `x_{n+1} = x_n - f(x_n)` and CSV import.
//! * [`neighborhood`] — nucleus/tail decomposition of `|A_ε|` over an ε-grid,
//!   cross-checked by an interval-union sweep.
//! * [`estimator`] — comparability verdicts, critical order, box dimension,
//!   and the behavior of the order under generalized differentiation.
//! * [`poincare`] — planar vector fields, section-crossing detection, and
//!   Poincaré-map orbits feeding the same pipeline.

pub mod estimator;
pub mod expr;
pub mod neighborhood;
pub mod orbit;
pub mod poincare;
pub mod scales;
