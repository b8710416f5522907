//! Whittle-index scheduling for multi-class, multi-server queueing systems.
//!
//! The crate has three pillars:
//!
//! * closed-form priority indices and the scheduling policies built on them
//!   ([`whittle`], [`policies`]),
//! * an independent numerical oracle for the single-queue subsidy problem —
//!   value iteration, threshold extraction, structural certification, and
//!   bisection-recovered indices ([`mdp`]),
//! * a relaxed-problem lower bound and a discrete-time simulator used to
//!   compare policies against that bound ([`relaxed`], [`sim`]).
//!
//! Everything is deterministic given a master seed: each queue in each
//! replication owns a derived RNG stream, so different policies run on
//! identical arrival sequences.

// Negated float comparisons like `!(beta > 0.0)` are deliberate: they
// reject NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod mdp;
pub mod model;
pub mod policies;
pub mod relaxed;
pub mod sim;
pub mod whittle;

pub use model::{Action, ClassParams, CostAccumulator, SystemConfig, SystemState};
pub use policies::PolicyKind;
pub use sim::SimResult;
pub use whittle::{IndexMode, IndexTable};
