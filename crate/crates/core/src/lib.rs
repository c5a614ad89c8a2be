//! Finite-dimensional laboratory for biorthogonal systems in l2.
//!
//! Index conventions: matrix columns and `x(n)`/`f(n)` accessors are 0-based.
//! Index *sets* (block partitions, interval families, spanning and
//! representing indices, permutations) are 1-based, matching the usual
//! numbering x_1, x_2, ... of a system.

// NaN must fail range checks, so `!(a > b)` is deliberate
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod biorth;
pub mod cli;
pub mod error;
pub mod io;
pub mod pathology;
pub mod perturbations;
pub mod representing;
pub mod subspace;

pub use error::{Error, Result};
