//! Relaxed-problem lower bound on the achievable average cost.
//!
//! Replacing the per-slot server constraint by its time average decomposes
//! the system into independent single-queue subproblems coupled only through
//! a common subsidy `W`. For each class the optimal policy is then a
//! threshold rule, so the relaxed optimum is found by:
//!
//! 1. solving the stationary distribution of each class's queue under
//!    candidate thresholds ([`stationary_distribution`]),
//! 2. bisecting over the subsidy, reading each class's threshold off the
//!    inverted limit-mode index table, until the expected number of busy
//!    servers meets the budget ([`lagrangian_lower_bound`]),
//! 3. randomizing between the two adjacent thresholds at the crossing point
//!    so the budget binds exactly.
//!
//! The resulting cost per user lower-bounds what any admissible scheduler
//! can achieve under the hard per-slot constraint. A small-instance
//! occupation-measure LP ([`occupation_lp_lower_bound`]) computes the same
//! bound by an entirely different route and serves as its cross-check.

use crate::model::{ClassParams, SystemConfig};
use crate::whittle::{index_limit, tail_scale};
use microlp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem, Variable};
use nalgebra::DMatrix;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RelaxedError {
    #[error(
        "activation budget infeasible: stable service needs {required:.6} servers on average, \
         only {budget} available"
    )]
    InfeasibleBudget { required: f64, budget: usize },
    #[error("truncation too small: {tail_mass:.3e} stationary mass within 2R of the cap")]
    TruncationTooSmall { tail_mass: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("internal consistency: {0}")]
    InternalConsistency(String),
    #[error("linear program: {0}")]
    Lp(String),
}

/// Stationary law of one queue under the policy "serve exactly when
/// `q > threshold`", on the truncated support `0 ..= q_cap`.
#[derive(Debug, Clone)]
pub struct StationaryDistribution {
    pub class_id: usize,
    pub threshold: u64,
    /// Probability of each backlog value; sums to one.
    pub probs: Vec<f64>,
    /// Long-run fraction of slots the queue holds a server, `Σ_{q>n} u(q)`.
    pub activation_prob: f64,
    /// Stationary weighted backlog `a · Σ q·u(q)`.
    pub mean_weighted_queue: f64,
}

/// Default truncated support for a stationary solve.
pub fn default_q_cap(params: &ClassParams, threshold: u64) -> usize {
    threshold as usize + (20 * params.rate as usize).max(200)
}

/// Solves the balance equations of the threshold-`n` chain by LU
/// factorization. The chain drifts down above the threshold, so its
/// recurrent support is finite and the truncation is effectively exact; a
/// tail-mass guard rejects caps that are genuinely too small.
pub fn stationary_distribution(
    params: &ClassParams,
    threshold: u64,
    q_cap: usize,
) -> Result<StationaryDistribution, RelaxedError> {
    let r = params.rate as usize;
    if q_cap < threshold as usize + 10 * r {
        return Err(RelaxedError::Numerical(format!(
            "q_cap = {q_cap} below threshold + 10R = {}",
            threshold as usize + 10 * r
        )));
    }
    let m = q_cap + 1;
    // Balance equations (P^T − I)·u = 0 with the last row replaced by the
    // normalization Σu = 1.
    let mut system = DMatrix::<f64>::zeros(m, m);
    for q in 0..m {
        let active = q as u64 > threshold;
        let base = if active { q.saturating_sub(r) } else { q };
        for arrival in 0..r {
            let next = (base + arrival).min(q_cap);
            system[(next, q)] += params.arrival_mass;
        }
        system[(q, q)] -= 1.0;
    }
    for q in 0..m {
        system[(m - 1, q)] = 1.0;
    }
    let mut rhs = DMatrix::<f64>::zeros(m, 1);
    rhs[(m - 1, 0)] = 1.0;
    let solved = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| RelaxedError::Numerical("singular balance system".into()))?;

    let mut probs: Vec<f64> = solved.column(0).iter().copied().collect();
    let total: f64 = probs.iter().sum();
    if !(total.is_finite() && (total - 1.0).abs() < 1e-8) {
        return Err(RelaxedError::Numerical(format!(
            "stationary mass {total} is not 1"
        )));
    }
    if probs.iter().any(|&p| p < -1e-9) {
        return Err(RelaxedError::Numerical(
            "negative stationary probability".into(),
        ));
    }
    for p in &mut probs {
        *p = p.max(0.0) / total;
    }
    let tail_mass: f64 = probs[q_cap.saturating_sub(2 * r)..].iter().sum();
    if tail_mass > 1e-8 {
        return Err(RelaxedError::TruncationTooSmall { tail_mass });
    }

    let activation_prob = probs[threshold as usize + 1..].iter().sum();
    let mean_weighted_queue = params.holding_cost
        * probs
            .iter()
            .enumerate()
            .map(|(q, &p)| q as f64 * p)
            .sum::<f64>();
    Ok(StationaryDistribution {
        class_id: params.class_id,
        threshold,
        probs,
        activation_prob,
        mean_weighted_queue,
    })
}

/// Activation probability per threshold; nonincreasing, flattening at the
/// class load `(R − 1)/(2R)` once the threshold reaches `R − 1` (from there
/// on every service moves a full batch and rate balance pins the busy
/// fraction).
pub fn activation_curve(
    params: &ClassParams,
    thresholds: &[u64],
) -> Result<Vec<(u64, f64)>, RelaxedError> {
    let mut curve = Vec::with_capacity(thresholds.len());
    for &n in thresholds {
        let dist = stationary_distribution(params, n, default_q_cap(params, n))?;
        curve.push((n, dist.activation_prob));
    }
    Ok(curve)
}

/// One class's share of the relaxed solution: a randomization between two
/// adjacent thresholds.
#[derive(Debug, Clone)]
pub struct ClassMix {
    pub class_id: usize,
    /// Thresholds mixed; equal when the class does not sit at the crossing.
    pub lower_threshold: u64,
    pub upper_threshold: u64,
    /// Weight on the lower (more active) threshold, in `[0, 1]`.
    pub mix: f64,
    /// Expected activation per queue under the mix.
    pub activation: f64,
    /// Expected weighted backlog per queue under the mix.
    pub mean_weighted_queue: f64,
}

/// The relaxed-problem optimum: subsidy, per-class threshold mixes, and the
/// per-user lower bound.
#[derive(Debug, Clone)]
pub struct RelaxedSolution {
    pub subsidy: f64,
    pub per_class: Vec<ClassMix>,
    /// Expected number of busy servers; equals the budget when it binds.
    pub expected_activation: f64,
    /// Whether the activation constraint binds at the optimum.
    pub binding: bool,
    /// Optimal relaxed cost per user per slot.
    pub lower_bound_per_user: f64,
}

struct ThresholdCache<'a> {
    classes: &'a [ClassParams],
    cache: HashMap<(usize, u64), StationaryDistribution>,
}

impl ThresholdCache<'_> {
    fn get(&mut self, k: usize, n: u64) -> Result<&StationaryDistribution, RelaxedError> {
        let params = &self.classes[k];
        match self.cache.entry((k, n)) {
            std::collections::hash_map::Entry::Occupied(hit) => Ok(hit.into_mut()),
            std::collections::hash_map::Entry::Vacant(slot) => {
                let dist = stationary_distribution(params, n, default_q_cap(params, n))?;
                Ok(slot.insert(dist))
            }
        }
    }
}

/// Largest threshold whose limit-mode index does not exceed the subsidy.
/// The search never visits subsidies at or above the shared tail value, so
/// the result stays within `0 ..= R − 1`.
fn threshold_for_subsidy(params: &ClassParams, scale: f64, subsidy: f64) -> u64 {
    let mut n = 0;
    while n + 1 < params.rate && index_limit(n + 1, params, scale) <= subsidy {
        n += 1;
    }
    n
}

/// Computes the relaxed-problem optimal cost for a system configuration by
/// Lagrangian bisection over the subsidy with randomized rounding between
/// the two thresholds adjacent to the crossing.
pub fn lagrangian_lower_bound(config: &SystemConfig) -> Result<RelaxedSolution, RelaxedError> {
    let classes = &config.classes;
    let counts = &config.counts;
    let budget = config.servers as f64;
    let scale = tail_scale(classes);
    let mut cache = ThresholdCache { classes, cache: HashMap::new() };

    // Stability floor: even the most passive stable policies keep each class
    // busy at its load, so below that total the average constraint cannot be
    // met by any stable policy.
    let required: f64 = classes
        .iter()
        .zip(counts)
        .map(|(p, &c)| c as f64 * p.load())
        .sum();
    if required > budget + 1e-9 {
        return Err(RelaxedError::InfeasibleBudget {
            required,
            budget: config.servers,
        });
    }

    let totals = |cache: &mut ThresholdCache,
                  subsidy: f64|
     -> Result<(Vec<u64>, f64, f64), RelaxedError> {
        let mut thresholds = Vec::with_capacity(classes.len());
        let mut activation = 0.0;
        let mut cost = 0.0;
        for (k, params) in classes.iter().enumerate() {
            let n = threshold_for_subsidy(params, scale, subsidy);
            let dist = cache.get(k, n)?;
            activation += counts[k] as f64 * dist.activation_prob;
            cost += counts[k] as f64 * dist.mean_weighted_queue;
            thresholds.push(n);
        }
        Ok((thresholds, activation, cost))
    };

    let n_total = config.total_queues() as f64;
    let (thresholds0, act0, cost0) = totals(&mut cache, 0.0)?;
    if act0 <= budget + 1e-12 {
        // Constraint slack at the most active sensible policy.
        let per_class = thresholds0
            .iter()
            .enumerate()
            .map(|(k, &n)| {
                let dist = &cache.cache[&(k, n)];
                ClassMix {
                    class_id: k,
                    lower_threshold: n,
                    upper_threshold: n,
                    mix: 1.0,
                    activation: dist.activation_prob,
                    mean_weighted_queue: dist.mean_weighted_queue,
                }
            })
            .collect();
        return Ok(RelaxedSolution {
            subsidy: 0.0,
            per_class,
            expected_activation: act0,
            binding: false,
            lower_bound_per_user: cost0 / n_total,
        });
    }

    // Bisection bracket: above the largest below-rate index every class sits
    // at threshold R − 1, whose total activation is the stability floor and
    // therefore within budget.
    let mut lo = 0.0;
    let mut hi = classes
        .iter()
        .map(|p| index_limit(p.rate - 1, p, scale))
        .fold(0.0f64, f64::max)
        + 1.0;
    let (_, act_hi, _) = totals(&mut cache, hi)?;
    if act_hi > budget + 1e-9 {
        return Err(RelaxedError::InternalConsistency(format!(
            "activation {act_hi} above budget {budget} at subsidy {hi}"
        )));
    }
    // Invariant: activation(lo) > budget >= activation(hi).
    while hi - lo > 1e-9 * (1.0 + hi) {
        let mid = 0.5 * (lo + hi);
        let (_, act_mid, _) = totals(&mut cache, mid)?;
        if act_mid > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let (thr_lo, act_lo, cost_lo) = totals(&mut cache, lo)?;
    let (thr_hi, act_hi, cost_hi) = totals(&mut cache, hi)?;
    if act_lo <= act_hi {
        return Err(RelaxedError::InternalConsistency(format!(
            "activation not decreasing across the crossing: {act_lo} vs {act_hi}"
        )));
    }
    for (k, (&a, &b)) in thr_lo.iter().zip(&thr_hi).enumerate() {
        if b != a && b != a + 1 {
            return Err(RelaxedError::InternalConsistency(format!(
                "class {k} jumps thresholds {a} -> {b} across one crossing"
            )));
        }
    }
    // Mix the two adjacent policies so the budget binds exactly.
    let lambda = (budget - act_hi) / (act_lo - act_hi);
    let cost = lambda * cost_lo + (1.0 - lambda) * cost_hi;

    let mut per_class = Vec::with_capacity(classes.len());
    for k in 0..classes.len() {
        let dist_lo = cache.cache[&(k, thr_lo[k])].clone();
        let dist_hi = &cache.cache[&(k, thr_hi[k])];
        per_class.push(ClassMix {
            class_id: k,
            lower_threshold: thr_lo[k],
            upper_threshold: thr_hi[k],
            mix: if thr_lo[k] == thr_hi[k] { 1.0 } else { lambda },
            activation: lambda * dist_lo.activation_prob
                + (1.0 - lambda) * dist_hi.activation_prob,
            mean_weighted_queue: lambda * dist_lo.mean_weighted_queue
                + (1.0 - lambda) * dist_hi.mean_weighted_queue,
        });
    }
    Ok(RelaxedSolution {
        subsidy: 0.5 * (lo + hi),
        per_class,
        expected_activation: budget,
        binding: true,
        lower_bound_per_user: cost / n_total,
    })
}

/// Brute-force cross-check of the relaxed bound: the occupation-measure LP
/// of the average-cost constrained problem on truncated per-class chains.
///
/// Variables are state-action frequencies `x_k(q, s)`; constraints are flow
/// balance and normalization per class plus the shared activation budget.
/// Returns the optimal cost per user.
pub fn occupation_lp_lower_bound(
    class_specs: &[(ClassParams, usize)],
    servers: usize,
    q_cap: usize,
) -> Result<f64, RelaxedError> {
    let mut problem = Problem::new(OptimizationDirection::Minimize);
    let n_total: usize = class_specs.iter().map(|(_, c)| c).sum();
    let mut budget = LinearExpr::empty();

    for (params, count) in class_specs {
        let r = params.rate as usize;
        let m = q_cap + 1;
        // x[q][s]: long-run frequency of being in state q and taking action s,
        // weighted in the objective by count · a · q.
        let vars: Vec<[Variable; 2]> = (0..m)
            .map(|q| {
                let obj = *count as f64 * params.holding_cost * q as f64;
                [problem.add_var(obj, (0.0, 1.0)), problem.add_var(obj, (0.0, 1.0))]
            })
            .collect();

        // Net flow at each state: inflow minus outflow is zero.
        let mut coeffs: Vec<HashMap<usize, f64>> = vec![HashMap::new(); m];
        for q in 0..m {
            for (s, &var) in vars[q].iter().enumerate() {
                let base = if s == 1 { q.saturating_sub(r) } else { q };
                for arrival in 0..r {
                    let next = (base + arrival).min(q_cap);
                    *coeffs[next].entry(var.idx()).or_insert(0.0) += params.arrival_mass;
                }
                *coeffs[q].entry(var.idx()).or_insert(0.0) -= 1.0;
            }
        }
        for per_state in &coeffs {
            let mut expr = LinearExpr::empty();
            for pair in &vars {
                for &var in pair {
                    if let Some(&c) = per_state.get(&var.idx()) {
                        if c != 0.0 {
                            expr.add(var, c);
                        }
                    }
                }
            }
            problem.add_constraint(expr, ComparisonOp::Eq, 0.0);
        }

        // The occupation measure of each class is a probability law.
        let mut norm = LinearExpr::empty();
        for pair in &vars {
            norm.add(pair[0], 1.0);
            norm.add(pair[1], 1.0);
        }
        problem.add_constraint(norm, ComparisonOp::Eq, 1.0);

        for pair in &vars {
            budget.add(pair[1], *count as f64);
        }
    }

    // Shared server budget on average.
    problem.add_constraint(budget, ComparisonOp::Le, servers as f64);

    let solution = problem
        .solve()
        .map_err(|e| RelaxedError::Lp(format!("{e:?}")))?;
    Ok(solution.objective() / n_total as f64)
}
