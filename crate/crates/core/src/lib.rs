//! Exact computation of cusp-section towers for Hilbert modular groups
//! over real quadratic fields `K = Q(sqrt(n))`.
//!
//! The library is organized in four layers:
//!
//! * [`quadfield`] — exact arithmetic in `K` and its ring of integers,
//!   Galois conjugation, norms, exact sign determination, and the
//!   fundamental unit via continued fractions.
//! * [`dirichlet`] — per-level geometry: mediatrix lines of the leaf
//!   semimetric, exact Dirichlet torus slices as half-plane
//!   intersections, and a brute-force oracle over lattice candidates.
//! * [`tower`] — the cusp-section tower: the side-list algorithm, the
//!   ladder of parallelogram levels, side validity intervals, gluing
//!   maps (translations and the Anosov diffeomorphism), and the
//!   3-valent bifurcation graph.
//! * [`export`] — the projection to `R^3`, boundary meshes, and all
//!   serialization (OBJ, JSON, SVG, CSV).
//!
//! Everything on the geometric path is computed in exact rational
//! arithmetic over the `(1, alpha)` integral basis; floating point only
//! appears in export views and numeric spot checks.

pub mod cli;
pub mod dirichlet;
pub mod export;
pub mod quadfield;
pub mod tower;

pub use quadfield::{AlphaKind, EmbeddedPair, FieldCtx, QuadElem, QuadError};
