//! Closed-form priority indices for the single-queue subsidy problem.
//!
//! For a class with weight `a` and rate `R`, the discounted-problem index of
//! backlog `n` is
//!
//! ```text
//! W(n) = β·a·R·n / (R − β·n)      for 0 ≤ n ≤ R − 1
//! W(n) = a·R·β / (1 − β)          for n ≥ R
//! ```
//!
//! The average-cost policy is obtained by letting `β → 1`, which keeps the
//! below-rate branch finite, `a·R·n / (R − n)`, and sends the tail to
//! infinity. The limit-mode table replaces the tail with the finite constant
//! `a·R · max_j{a_j·R_j²}`, which preserves the descending index order across
//! every configured class (the tail value couples classes, so a table is only
//! well defined relative to a class set).
//!
//! The indifference function `g(n, W)` is the advantage of serving over
//! idling at backlog `n` under the threshold-`n` policy; the index is exactly
//! the subsidy that makes it vanish.

use crate::model::ClassParams;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WhittleError {
    #[error("discount factor must lie strictly inside (0, 1), got {0}")]
    InvalidDiscount(f64),
    #[error("index table needs at least one class")]
    EmptyClassList,
}

/// Subsidy for passivity — the Lagrange multiplier attached to the server
/// budget, interpreted as a payment for not transmitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Subsidy(pub f64);

/// Which index family a table holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IndexMode {
    /// β-free limit form; the scheduling policy for the average-cost problem.
    Limit,
    /// Discounted form at the given β ∈ (0, 1).
    Discounted(f64),
}

impl IndexMode {
    pub fn label(&self) -> String {
        match self {
            IndexMode::Limit => "limit".to_string(),
            IndexMode::Discounted(beta) => format!("discounted({beta})"),
        }
    }
}

/// Indifference gap `g(n, W) = C₁ⁿ(n) − C₀ⁿ(n)` in closed form:
/// `W(1 − nβρ) − a·n·β` below the rate and
/// `(W(1 − β) − a·R·β) / (1 − ρβ)` at or above it.
pub fn g(n: u64, w: Subsidy, beta: f64, params: &ClassParams) -> Result<f64, WhittleError> {
    if !(0.0 < beta && beta < 1.0) {
        return Err(WhittleError::InvalidDiscount(beta));
    }
    let a = params.holding_cost;
    let r = params.rate as f64;
    let rho = params.arrival_mass;
    Ok(if n < params.rate {
        w.0 * (1.0 - n as f64 * beta * rho) - a * n as f64 * beta
    } else {
        (w.0 * (1.0 - beta) - a * r * beta) / (1.0 - rho * beta)
    })
}

/// Discounted index: `β·a·R·n / (R − β·n)` for `n < R`, constant
/// `a·R·β / (1 − β)` beyond. The below-rate denominator stays positive for
/// every β ∈ (0, 1).
pub fn index_discounted(n: u64, beta: f64, params: &ClassParams) -> f64 {
    debug_assert!(0.0 < beta && beta < 1.0);
    let a = params.holding_cost;
    let r = params.rate as f64;
    if n < params.rate {
        beta * a * r * n as f64 / (r - beta * n as f64)
    } else {
        a * r * beta / (1.0 - beta)
    }
}

/// Largest `a_j·R_j²` over the configured classes; scales every limit-mode
/// tail so tails sit above all below-rate indices (given `a_j·R_j ≥ 1`).
pub fn tail_scale(classes: &[ClassParams]) -> f64 {
    classes
        .iter()
        .map(|c| c.holding_cost * (c.rate * c.rate) as f64)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Limit-mode index: `a·R·n / (R − n)` for `n < R`, constant
/// `a·R · tail_scale` beyond, where `tail_scale` must be
/// [`tail_scale`](tail_scale) of the full class set.
pub fn index_limit(n: u64, params: &ClassParams, tail_scale: f64) -> f64 {
    let a = params.holding_cost;
    let r = params.rate as f64;
    if n < params.rate {
        a * r * n as f64 / (r - n as f64)
    } else {
        a * r * tail_scale
    }
}

/// Discount level above which the discounted and limit tables rank every
/// (class, backlog) pair identically: `1 − min_j{a_j·R_j} / max_j{a_j·R_j²}`.
pub fn beta_threshold(classes: &[ClassParams]) -> f64 {
    let min_ar = classes
        .iter()
        .map(|c| c.holding_cost * c.rate as f64)
        .fold(f64::INFINITY, f64::min);
    1.0 - min_ar / tail_scale(classes)
}

/// Per-class index table over all backlogs, cached once per class set.
#[derive(Debug, Clone)]
pub struct IndexTable {
    mode: IndexMode,
    /// Indices for `n = 0, …, R_k − 1`, one vector per class.
    below: Vec<Vec<f64>>,
    /// Constant index for `n ≥ R_k`, one per class.
    tail: Vec<f64>,
}

impl IndexTable {
    pub fn build(classes: &[ClassParams], mode: IndexMode) -> Result<Self, WhittleError> {
        if classes.is_empty() {
            return Err(WhittleError::EmptyClassList);
        }
        if let IndexMode::Discounted(beta) = mode {
            if !(0.0 < beta && beta < 1.0) {
                return Err(WhittleError::InvalidDiscount(beta));
            }
        }
        let scale = tail_scale(classes);
        let mut below = Vec::with_capacity(classes.len());
        let mut tail = Vec::with_capacity(classes.len());
        for params in classes {
            let per_state: Vec<f64> = (0..params.rate)
                .map(|n| match mode {
                    IndexMode::Limit => index_limit(n, params, scale),
                    IndexMode::Discounted(beta) => index_discounted(n, beta, params),
                })
                .collect();
            tail.push(match mode {
                IndexMode::Limit => index_limit(params.rate, params, scale),
                IndexMode::Discounted(beta) => index_discounted(params.rate, beta, params),
            });
            below.push(per_state);
        }
        Ok(Self { mode, below, tail })
    }

    pub fn mode(&self) -> IndexMode {
        self.mode
    }

    pub fn class_count(&self) -> usize {
        self.below.len()
    }

    /// Index of backlog `n` in the given class.
    pub fn index(&self, class: usize, n: u64) -> f64 {
        let below = &self.below[class];
        if (n as usize) < below.len() {
            below[n as usize]
        } else {
            self.tail[class]
        }
    }

    /// Constant index shared by all backlogs at or above the class rate.
    pub fn tail(&self, class: usize) -> f64 {
        self.tail[class]
    }
}
