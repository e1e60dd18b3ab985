//! Free-time action minimizers and asymptotic motions of the Newtonian
//! N-body problem.
//!
//! Units have `G = 1`. Configurations live in `(R^d)^N` with the mass inner
//! product `<x, y> = sum_i m_i x_i . y_i`, for which Newton's equations read
//! `x'' = grad U(x)`.

// Negated comparisons reject NaN; index loops mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod action;
pub mod asymptotics;
pub mod error;
pub mod experiments;
pub mod flow;
pub mod geometry;
pub mod minimizer;

pub use error::{Error, Result};
