//! Brute-force numerical oracle for the single-queue discounted subproblem.
//!
//! One queue of a given class evolves under `q' = (q − R·s)⁺ + A` with the
//! stage cost `a·q + W·s`, where `W` is the subsidy charged for serving. This
//! module solves that MDP by plain value iteration on a truncated state
//! space, entirely independent of the closed-form index expressions, so the
//! two routes can be checked against each other:
//!
//! * [`value_iteration`] / [`extract_threshold`] — optimal policy and its
//!   threshold form;
//! * [`evaluate_threshold_policy`] — fixed-policy values `Vⁿ` and the
//!   one-step costs `C₀ⁿ`, `C₁ⁿ`;
//! * [`numeric_whittle_index`] — the subsidy at which the optimal action at
//!   a state flips from active to passive, found by bisection;
//! * [`certify_structure`] / [`threshold_monotone_in_subsidy`] — numerical
//!   certification of monotone values, R-convexity, submodular action gaps,
//!   and indexability.
//!
//! Truncation clamps transitions at `q_max` (overflow mass sticks to the top
//! state). All structural and identity checks are restricted to an interior
//! region well below `q_max`, where the infinite-buffer behaviour is
//! undistorted.

use crate::model::ClassParams;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("discount factor must lie strictly inside (0, 1), got {0}")]
    InvalidDiscount(f64),
    #[error("invalid truncation: {0}")]
    InvalidTruncation(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("value iteration did not converge: residual {residual:.3e} after {iterations} sweeps")]
    Convergence { residual: f64, iterations: usize },
    #[error("indexability violation: {0}")]
    IndexabilityViolation(String),
}

/// Sup-norm convergence tolerance used by default.
pub const DEFAULT_TOL: f64 = 1e-9;
/// Default sweep budget for the iterative solvers.
pub const DEFAULT_MAX_ITER: usize = 1_000_000;
/// Default bisection tolerance for numerically recovered indices.
pub const DEFAULT_INDEX_TOL: f64 = 1e-4;

/// Default truncation bound: `max(50·R, 500)` rounded up to a multiple of R.
pub fn default_q_max(params: &ClassParams) -> usize {
    let r = params.rate as usize;
    let floor = (50 * r).max(500);
    floor.div_ceil(r) * r
}

/// The truncated single-queue MDP for one `(class, subsidy, discount)` point.
///
/// From state `q` under action `s`, the next state is
/// `min((q − R·s)⁺ + A, q_max)` with `A` uniform on `{0, …, R − 1}`; each of
/// the R arrival values carries mass `1/R` and clamped overflow accumulates
/// on `q_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedMdp {
    pub params: ClassParams,
    /// Subsidy `W` added to the stage cost when the queue is served.
    pub subsidy: f64,
    pub beta: f64,
    pub q_max: usize,
}

impl TruncatedMdp {
    pub fn new(
        params: ClassParams,
        subsidy: f64,
        beta: f64,
        q_max: usize,
    ) -> Result<Self, MdpError> {
        if !(0.0 < beta && beta < 1.0) {
            return Err(MdpError::InvalidDiscount(beta));
        }
        let r = params.rate as usize;
        if !q_max.is_multiple_of(r) {
            return Err(MdpError::InvalidTruncation(format!(
                "q_max = {q_max} is not a multiple of the rate {r}"
            )));
        }
        if q_max < 10 * r {
            return Err(MdpError::InvalidTruncation(format!(
                "q_max = {q_max} is below the floor 10·R = {}",
                10 * r
            )));
        }
        Ok(Self { params, subsidy, beta, q_max })
    }

    pub fn with_default_truncation(
        params: ClassParams,
        subsidy: f64,
        beta: f64,
    ) -> Result<Self, MdpError> {
        Self::new(params, subsidy, beta, default_q_max(&params))
    }

    pub fn states(&self) -> usize {
        self.q_max + 1
    }

    /// Stage cost `a·q + W·s`.
    pub fn stage_cost(&self, q: usize, active: bool) -> f64 {
        self.params.holding_cost * q as f64 + if active { self.subsidy } else { 0.0 }
    }

    /// Expected value of the next state given `values` and its prefix sums
    /// (`prefix[i] = Σ_{j < i} values[j]`), exploiting the uniform arrival
    /// window for O(1) per-state work.
    fn expected_next(&self, values: &[f64], prefix: &[f64], q: usize, active: bool) -> f64 {
        let r = self.params.rate as usize;
        let base = if active { q.saturating_sub(r) } else { q };
        let hi = base + r - 1;
        let sum = if hi <= self.q_max {
            prefix[base + r] - prefix[base]
        } else {
            prefix[self.q_max + 1] - prefix[base] + (hi - self.q_max) as f64 * values[self.q_max]
        };
        sum * self.params.arrival_mass
    }

    /// One-step action value `Q(q, s) = C(q, s) + β·E[V(next) | q, s]`.
    pub fn action_value(&self, values: &[f64], q: usize, active: bool) -> f64 {
        let prefix = prefix_sums(values);
        self.stage_cost(q, active) + self.beta * self.expected_next(values, &prefix, q, active)
    }

    /// Greedy action at `q`: serve only when strictly cheaper than idling,
    /// with a relative indifference band so that exact ties (which occur at
    /// critical subsidies) resolve to passive under floating point.
    fn greedy_active(&self, values: &[f64], prefix: &[f64], q: usize) -> bool {
        let idle =
            self.stage_cost(q, false) + self.beta * self.expected_next(values, prefix, q, false);
        let serve =
            self.stage_cost(q, true) + self.beta * self.expected_next(values, prefix, q, true);
        let band = 1e-12 * (idle.abs() + serve.abs() + 1.0);
        serve < idle - band
    }
}

fn prefix_sums(values: &[f64]) -> Vec<f64> {
    let mut prefix = Vec::with_capacity(values.len() + 1);
    let mut acc = 0.0;
    prefix.push(0.0);
    for &v in values {
        acc += v;
        prefix.push(acc);
    }
    prefix
}

/// Threshold structure read off an optimal (or fixed) action vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Threshold {
    /// Passive exactly on `q ≤ n`; `At(-1)` means active everywhere.
    At(i64),
    /// Passive throughout the truncated interior ("infinite within
    /// truncation").
    Infinite,
    /// The action vector is not monotone; either a structural failure or a
    /// truncation artifact, and always a reportable outcome.
    NonMonotone,
}

impl Threshold {
    /// Orders thresholds for monotonicity checks; `Infinite` sits above every
    /// finite value and `NonMonotone` has no rank.
    pub fn rank(&self) -> Option<i64> {
        match self {
            Threshold::At(n) => Some(*n),
            Threshold::Infinite => Some(i64::MAX),
            Threshold::NonMonotone => None,
        }
    }
}

/// Converged solution of the truncated subsidy problem.
#[derive(Debug, Clone)]
pub struct DiscountedMdpSolution {
    pub mdp: TruncatedMdp,
    /// Optimal value function over states `0 ..= q_max`.
    pub values: Vec<f64>,
    /// Optimal action per state; ties resolve to passive.
    pub active: Vec<bool>,
    pub threshold: Threshold,
    /// Final sup-norm change between sweeps.
    pub residual: f64,
    pub iterations: usize,
}

/// Value iteration to sup-norm tolerance `tol`. The returned action vector is
/// the greedy policy of the final values with ties resolved to passive.
pub fn value_iteration(
    mdp: &TruncatedMdp,
    tol: f64,
    max_iter: usize,
) -> Result<DiscountedMdpSolution, MdpError> {
    value_iteration_from(mdp, tol, max_iter, vec![0.0; mdp.states()])
}

/// Value iteration warm-started from `initial`; used heavily by the bisection
/// search where consecutive solves differ only slightly in the subsidy.
pub fn value_iteration_from(
    mdp: &TruncatedMdp,
    tol: f64,
    max_iter: usize,
    initial: Vec<f64>,
) -> Result<DiscountedMdpSolution, MdpError> {
    if !(tol > 0.0) {
        return Err(MdpError::InvalidArgument(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    if initial.len() != mdp.states() {
        return Err(MdpError::InvalidArgument(format!(
            "warm start has {} states, expected {}",
            initial.len(),
            mdp.states()
        )));
    }
    let mut values = initial;
    let mut next = vec![0.0; mdp.states()];
    let mut residual = f64::INFINITY;
    for sweep in 1..=max_iter {
        let prefix = prefix_sums(&values);
        residual = 0.0;
        for q in 0..mdp.states() {
            let passive = mdp.stage_cost(q, false)
                + mdp.beta * mdp.expected_next(&values, &prefix, q, false);
            let active = mdp.stage_cost(q, true)
                + mdp.beta * mdp.expected_next(&values, &prefix, q, true);
            let v = passive.min(active);
            let delta = (v - values[q]).abs();
            if delta > residual {
                residual = delta;
            }
            next[q] = v;
        }
        std::mem::swap(&mut values, &mut next);
        if residual <= tol {
            let prefix = prefix_sums(&values);
            let active: Vec<bool> = (0..mdp.states())
                .map(|q| mdp.greedy_active(&values, &prefix, q))
                .collect();
            let threshold = extract_threshold(&active, mdp.params.rate, mdp.q_max);
            return Ok(DiscountedMdpSolution {
                mdp: *mdp,
                values,
                active,
                threshold,
                residual,
                iterations: sweep,
            });
        }
    }
    Err(MdpError::Convergence { residual, iterations: max_iter })
}

/// Reads the threshold off an action vector, ignoring the top boundary band
/// of width R plus any passive run adjacent to it. Near the cap the clamped
/// transition window erases the gain from serving, so the truncated problem
/// grows a passive "wall" there; it is a truncation artifact, not policy
/// structure, and its depth grows as the subsidy approaches the critical
/// value.
pub fn extract_threshold(active: &[bool], rate: u64, q_max: usize) -> Threshold {
    let hi = q_max.saturating_sub(rate as usize);
    let interior = &active[..=hi];
    let last_active = match interior.iter().rposition(|&a| a) {
        None => return Threshold::Infinite,
        Some(i) => i,
    };
    let trimmed = &interior[..=last_active];
    let first_active = trimmed.iter().position(|&a| a).expect("has an active state");
    match trimmed.iter().rposition(|&a| !a) {
        None => Threshold::At(-1),
        Some(lp) if first_active == lp + 1 => Threshold::At(lp as i64),
        Some(_) => Threshold::NonMonotone,
    }
}

/// Fixed-policy evaluation of a threshold rule on the truncated space.
#[derive(Debug, Clone)]
pub struct PolicyEvaluation {
    pub mdp: TruncatedMdp,
    /// Last passive state; `-1` serves everywhere and `q_max` serves nowhere
    /// within the truncation (the all-passive policy).
    pub threshold: i64,
    pub values: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

impl PolicyEvaluation {
    /// `C₀ⁿ(q)`: cost of idling this slot, then following the policy.
    pub fn passive_cost(&self, q: usize) -> f64 {
        self.mdp.action_value(&self.values, q, false)
    }

    /// `C₁ⁿ(q)`: cost of serving this slot, then following the policy.
    pub fn active_cost(&self, q: usize) -> f64 {
        self.mdp.action_value(&self.values, q, true)
    }

    /// Indifference gap `C₁ⁿ(q) − C₀ⁿ(q)`.
    pub fn action_gap(&self, q: usize) -> f64 {
        self.active_cost(q) - self.passive_cost(q)
    }
}

/// Evaluates the policy "serve exactly when `q > threshold`" to sup-norm
/// tolerance `tol`. `threshold = q_max` evaluates the all-passive policy.
pub fn evaluate_threshold_policy(
    mdp: &TruncatedMdp,
    threshold: i64,
    tol: f64,
    max_iter: usize,
) -> Result<PolicyEvaluation, MdpError> {
    if threshold < -1 || threshold > mdp.q_max as i64 {
        return Err(MdpError::InvalidArgument(format!(
            "threshold {threshold} outside -1..={}",
            mdp.q_max
        )));
    }
    if !(tol > 0.0) {
        return Err(MdpError::InvalidArgument(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let mut values = vec![0.0; mdp.states()];
    let mut next = vec![0.0; mdp.states()];
    let mut residual = f64::INFINITY;
    for sweep in 1..=max_iter {
        let prefix = prefix_sums(&values);
        residual = 0.0;
        for q in 0..mdp.states() {
            let active = q as i64 > threshold;
            let v = mdp.stage_cost(q, active)
                + mdp.beta * mdp.expected_next(&values, &prefix, q, active);
            let delta = (v - values[q]).abs();
            if delta > residual {
                residual = delta;
            }
            next[q] = v;
        }
        std::mem::swap(&mut values, &mut next);
        if residual <= tol {
            return Ok(PolicyEvaluation {
                mdp: *mdp,
                threshold,
                values,
                residual,
                iterations: sweep,
            });
        }
    }
    Err(MdpError::Convergence { residual, iterations: max_iter })
}

/// Truncation bound sized for recovering the index of state `n`.
///
/// Freezing at the cap erases all future backlog growth, which makes idling
/// spuriously attractive once the subsidy comes within the cap's discounted
/// influence of the critical value `a·R·β/(1−β)`. States below the rate flip
/// at subsidies far from critical, so the default bound suffices; states at
/// or above the rate flip exactly at the critical value, so the cap is
/// pushed out until the induced bias on the recovered index is below 1e-4.
fn index_truncation(params: &ClassParams, beta: f64, n: u64) -> usize {
    let r = params.rate as usize;
    let base = default_q_max(params).max((4 * n as usize + 10 * r).div_ceil(r) * r);
    if n < params.rate {
        return base;
    }
    let mu = params.mean_arrival().max(0.5);
    // Value of the growth the cap erases, per unit of subsidy slope.
    let k = params.holding_cost * mu * beta
        / ((1.0 - beta) * (1.0 - params.arrival_mass * beta));
    let depth = (mu * (k.max(1.0) / 1e-4).ln() / -beta.ln()).ceil() as usize;
    let needed = n as usize + depth + 10 * r;
    needed.max(base).div_ceil(r) * r
}

/// Numerically recovers the index of state `n`: the smallest subsidy at which
/// the optimal action at `n` turns passive, found by bisecting the
/// value-iteration predicate over `[0, 2·a·R·β/(1−β)]`.
pub fn numeric_whittle_index(
    params: &ClassParams,
    n: u64,
    beta: f64,
    tol_w: f64,
) -> Result<f64, MdpError> {
    numeric_whittle_index_with(params, n, beta, tol_w, None, DEFAULT_TOL, DEFAULT_MAX_ITER)
}

/// As [`numeric_whittle_index`] with explicit truncation and solver knobs;
/// `q_max = None` uses the default bound, enlarged if `n` sits too close to
/// the cap.
pub fn numeric_whittle_index_with(
    params: &ClassParams,
    n: u64,
    beta: f64,
    tol_w: f64,
    q_max: Option<usize>,
    tol: f64,
    max_iter: usize,
) -> Result<f64, MdpError> {
    if !(tol_w > 0.0) {
        return Err(MdpError::InvalidArgument(format!(
            "index tolerance must be positive, got {tol_w}"
        )));
    }
    let q_max = match q_max {
        Some(q) => q,
        None => index_truncation(params, beta, n),
    };
    if (n as usize) > q_max / 2 {
        return Err(MdpError::InvalidArgument(format!(
            "state {n} too close to the truncation bound {q_max}"
        )));
    }

    let passive_at = |w: f64, warm: Option<Vec<f64>>| -> Result<(bool, Vec<f64>), MdpError> {
        let mdp = TruncatedMdp::new(*params, w, beta, q_max)?;
        let solution = match warm {
            Some(v) => value_iteration_from(&mdp, tol, max_iter, v)?,
            None => value_iteration(&mdp, tol, max_iter)?,
        };
        Ok((!solution.active[n as usize], solution.values))
    };

    // The critical subsidy a·R·β/(1−β) bounds every index, so doubling it
    // guarantees a bracket.
    let mut lo = 0.0;
    let mut hi = 2.0 * params.holding_cost * params.rate as f64 * beta / (1.0 - beta);
    let (passive_lo, warm) = passive_at(lo, None)?;
    if passive_lo {
        // Serving is never strictly better at this state even unsubsidized.
        return Ok(0.0);
    }
    let (passive_hi, mut warm) = passive_at(hi, Some(warm))?;
    if !passive_hi {
        return Err(MdpError::IndexabilityViolation(format!(
            "state {n} still active at subsidy {hi}, above the critical value"
        )));
    }
    while hi - lo > tol_w {
        let mid = 0.5 * (lo + hi);
        let (passive_mid, v) = passive_at(mid, Some(warm))?;
        warm = v;
        if passive_mid {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Report of the three structure checks run on the interior region
/// `[0, q_max − 2R]` of a converged solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StructureReport {
    /// Value function nondecreasing in the backlog.
    pub value_monotone: bool,
    /// Value function R-convex: `V(q + R) − V(q)` nondecreasing.
    pub value_r_convex: bool,
    /// One-step action gap `Q(q,1) − Q(q,0)` nonincreasing (submodularity of
    /// the Bellman operand), which forces monotone optimal actions.
    pub action_gap_submodular: bool,
    /// Upper end of the interior region the checks covered.
    pub interior_end: usize,
}

impl StructureReport {
    pub fn all_pass(&self) -> bool {
        self.value_monotone && self.value_r_convex && self.action_gap_submodular
    }
}

/// Nondecreasing check over `values[0 ..= end]` with an absolute slack.
pub fn monotone_within(values: &[f64], end: usize, slack: f64) -> bool {
    values[..=end].windows(2).all(|w| w[1] >= w[0] - slack)
}

/// R-convexity check over `values[0 ..= end]`: the lag-R difference must be
/// nondecreasing.
pub fn r_convex_within(values: &[f64], rate: u64, end: usize, slack: f64) -> bool {
    let r = rate as usize;
    if end < r + 1 {
        return true;
    }
    (0..end - r).all(|q| {
        let d0 = values[q + r] - values[q];
        let d1 = values[q + r + 1] - values[q + 1];
        d1 >= d0 - slack
    })
}

/// States below the truncation cap over which the cap's discounted influence
/// on the value function exceeds one part in 10⁶ of its span. The worst case
/// is the all-passive policy, whose trajectories climb toward the cap at the
/// mean arrival rate μ = (R − 1)/2, so influence decays per state like
/// β^(1/μ).
pub fn boundary_depth(params: &ClassParams, beta: f64) -> usize {
    let mu = params.mean_arrival().max(0.5);
    (mu * 1e6f64.ln() / -beta.ln()).ceil() as usize
}

/// Runs the three structure checks on a converged solution.
///
/// The interior excludes `2R + boundary_depth` states at the top; inside it,
/// truncation bias is below the check slack for any subsidy. A report with a
/// tiny `interior_end` certifies little — enlarge `q_max` if that matters.
pub fn certify_structure(solution: &DiscountedMdpSolution) -> StructureReport {
    let mdp = &solution.mdp;
    let r = mdp.params.rate as usize;
    let end = mdp
        .q_max
        .saturating_sub(2 * r + boundary_depth(&mdp.params, mdp.beta));
    let span = solution.values[mdp.q_max] - solution.values[0];
    let slack = 1e-6 * (1.0 + span.abs());

    let prefix = prefix_sums(&solution.values);
    let gap = |q: usize| {
        let passive = mdp.stage_cost(q, false)
            + mdp.beta * mdp.expected_next(&solution.values, &prefix, q, false);
        let active = mdp.stage_cost(q, true)
            + mdp.beta * mdp.expected_next(&solution.values, &prefix, q, true);
        active - passive
    };
    let submodular = (0..end).all(|q| gap(q + 1) <= gap(q) + slack);

    StructureReport {
        value_monotone: monotone_within(&solution.values, end, slack),
        value_r_convex: r_convex_within(&solution.values, mdp.params.rate, end, slack),
        action_gap_submodular: submodular,
        interior_end: end,
    }
}

/// Solves the subsidy problem across a strictly increasing subsidy grid and
/// reports whether the optimal threshold is nondecreasing (indexability),
/// together with the full table.
pub fn threshold_monotone_in_subsidy(
    params: &ClassParams,
    beta: f64,
    subsidy_grid: &[f64],
) -> Result<(bool, Vec<(f64, Threshold)>), MdpError> {
    if subsidy_grid.is_empty() {
        return Err(MdpError::InvalidArgument("empty subsidy grid".into()));
    }
    if subsidy_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(MdpError::InvalidArgument(
            "subsidy grid must be strictly increasing".into(),
        ));
    }
    let q_max = default_q_max(params);
    let mut table = Vec::with_capacity(subsidy_grid.len());
    let mut warm: Option<Vec<f64>> = None;
    for &w in subsidy_grid {
        let mdp = TruncatedMdp::new(*params, w, beta, q_max)?;
        let solution = match warm.take() {
            Some(v) => value_iteration_from(&mdp, DEFAULT_TOL, DEFAULT_MAX_ITER, v)?,
            None => value_iteration(&mdp, DEFAULT_TOL, DEFAULT_MAX_ITER)?,
        };
        warm = Some(solution.values.clone());
        table.push((w, solution.threshold));
    }
    let mut monotone = true;
    let mut prev = i64::MIN;
    for (_, threshold) in &table {
        match threshold.rank() {
            Some(rank) if rank >= prev => prev = rank,
            _ => {
                monotone = false;
                break;
            }
        }
    }
    Ok((monotone, table))
}
