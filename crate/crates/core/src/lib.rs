//! Numerical laboratory for extracting a one-particle microsystem from the
//! correlated statistical operator of two confined macrosystems.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod demix;
pub mod fock;
pub mod harness;
pub mod kernel;
pub mod micro;
pub mod modes;
pub mod prep;
pub mod random;
