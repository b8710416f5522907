//! Config-file parsing and CSV emission shared by the `whittle-sched` binary
//! and its tests.

// Negated float comparisons like `!(a > 0.0)` are deliberate: they reject
// NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;
