//! Two-stage robust optimization over uncertainty sets that are unions of polytopes.
//!
//! The toolkit solves problems of the form
//!
//! ```text
//!     min  c'x + max  min  b'y
//!      x         v    y
//!     s.t. A x <= q
//!          T x + W y + M v <= h        (per-row sense <= or =)
//! ```
//!
//! where the uncertain vector `v` ranges over a union of bounded polytopes,
//! optionally repeated over a planning horizon. Two solution paths are
//! provided: a column-and-constraint generation loop whose single worst-case
//! subproblem carries the whole union through selector binaries
//! ([`ccg_ro::solve_monolithic`]), and a distributionally robust variant that
//! weighs the subsets with a KL-constrained ambiguity set
//! ([`ccg_dro::solve_dro`]).
//!
//! Everything runs on the bundled dense-tableau simplex ([`lp`]) and a small
//! branch-and-bound / outer-approximation layer ([`mip`]); there is no
//! external solver dependency.

pub mod bench;
pub mod bilevel;
pub mod ccg_dro;
pub mod ccg_ro;
pub mod lp;
pub mod mat;
pub mod mip;
pub mod model;
#[cfg(test)]
pub(crate) mod testutil;
pub mod uncertainty;
