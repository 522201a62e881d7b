//! Exact-arithmetic strong desingularization over the rationals.
//!
//! The library resolves singularities of ideals in affine space by iterated
//! blowups in smooth centers.  Centers are selected by a local invariant
//! computed from a descending chain of coefficient ideals; the state carried
//! between blowups (combinatorial handicaps and exceptional multiplicities)
//! makes the construction independent of choices and stable under pullback.
//!
//! All arithmetic is exact: polynomial coefficients are arbitrary-precision
//! rationals and every ideal-theoretic question (membership, order,
//! smoothness, transversality) is answered by Groebner basis computations.

pub mod chart;
pub mod error;
pub mod ideal;
pub mod mobile;
pub mod poly;
pub mod resolve;

pub use error::{Error, Result};
