//! Acceptance suite: every release-gating check, one test per criterion,
//! with a printed pass line carrying the verified tolerance.
//!
//! The reference class set used throughout is {(a=1, R=3), (a=2, R=5),
//! (a=1, R=20)} with discounts {0.5, 0.9, 0.99}.

use rayon::prelude::*;
use whittle_sched::mdp::{
    self, boundary_depth, certify_structure, evaluate_threshold_policy, numeric_whittle_index,
    threshold_monotone_in_subsidy, value_iteration, TruncatedMdp,
};
use whittle_sched::model::ClassParams;
use whittle_sched::policies::PolicyKind;
use whittle_sched::relaxed::{lagrangian_lower_bound, occupation_lp_lower_bound};
use whittle_sched::sim::sweep;
use whittle_sched::whittle::{
    beta_threshold, g, index_discounted, index_limit, tail_scale, Subsidy,
};
use whittle_sched::whittle::IndexMode;
use whittle_sched::SystemConfig;

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

fn reference_classes() -> Vec<ClassParams> {
    vec![
        ClassParams::new(0, 1.0, 3).unwrap(),
        ClassParams::new(1, 2.0, 5).unwrap(),
        ClassParams::new(2, 1.0, 20).unwrap(),
    ]
}

const BETAS: [f64; 3] = [0.5, 0.9, 0.99];

fn round_up_to(m: usize, r: usize) -> usize {
    m.div_ceil(r) * r
}

/// Closed-form indices agree with the brute-force MDP oracle within 1e-3 for
/// every state up to R + 3 of each reference class at each discount.
#[test]
fn closed_form_indices_match_mdp_oracle() {
    let classes = reference_classes();
    let points: Vec<(ClassParams, f64, u64)> = classes
        .iter()
        .flat_map(|&p| {
            BETAS
                .iter()
                .flat_map(move |&beta| (0..=p.rate + 3).map(move |n| (p, beta, n)))
        })
        .collect();
    let worst = points
        .par_iter()
        .map(|&(p, beta, n)| {
            let closed = index_discounted(n, beta, &p);
            let numeric = numeric_whittle_index(&p, n, beta, 1e-4).unwrap();
            let err = (numeric - closed).abs();
            assert!(
                err <= 1e-3,
                "class (a={}, R={}), beta {beta}, n {n}: closed {closed} vs oracle {numeric}",
                p.holding_cost,
                p.rate
            );
            err
        })
        .reduce(|| 0.0, f64::max);
    println!(
        "acceptance: closed-form vs oracle index equivalence — PASS \
         ({} states, max abs error {worst:.2e} <= 1e-3)",
        points.len()
    );
}

/// Fixed-policy evaluation reproduces the closed-form indifference gap on
/// both branches within ten solver tolerances.
#[test]
fn policy_evaluation_reproduces_indifference_gap() {
    let classes = reference_classes();
    let tol = 1e-9;
    let mut points: Vec<(ClassParams, f64, f64, u64)> = Vec::new();
    for &p in &classes {
        let q_max = mdp::default_q_max(&p);
        for &beta in &BETAS {
            let crit = p.holding_cost * p.rate as f64 * beta / (1.0 - beta);
            for &w in &[0.0, 1.0, 0.6 * crit, 1.3 * crit] {
                let mut grid: Vec<u64> = (0..p.rate).collect();
                grid.extend([
                    p.rate,
                    p.rate + 3,
                    2 * p.rate,
                    (q_max / 4) as u64,
                    (q_max / 2) as u64,
                ]);
                grid.dedup();
                for n in grid {
                    points.push((p, beta, w, n));
                }
            }
        }
    }
    let worst = points
        .par_iter()
        .map(|&(p, beta, w, n)| {
            let mdp = TruncatedMdp::with_default_truncation(p, w, beta).unwrap();
            let eval = evaluate_threshold_policy(&mdp, n as i64, tol, 1_000_000).unwrap();
            let gap = eval.action_gap(n as usize);
            let closed = g(n, Subsidy(w), beta, &p).unwrap();
            let err = (gap - closed).abs();
            assert!(
                err <= 10.0 * tol,
                "class (a={}, R={}), beta {beta}, w {w}, n {n}: gap {gap} vs closed {closed}",
                p.holding_cost,
                p.rate
            );
            err
        })
        .reduce(|| 0.0, f64::max);
    println!(
        "acceptance: indifference-gap identity on both branches — PASS \
         ({} points, max abs error {worst:.2e} <= 1e-8)",
        points.len()
    );
}

/// Value-difference identities of threshold policies: the service-displacement
/// identity V^p(R+i) − V^p(i) = a·R + W for all 0 <= i <= p <= R − 1, and the
/// all-passive growth bound V^∞(q+R) − V^∞(q) >= a·R/(1−β)·(1 − 1e-3).
#[test]
fn value_difference_identities_hold() {
    let classes = reference_classes();
    let tol = 1e-9;

    let combos: Vec<(ClassParams, f64)> = classes
        .iter()
        .flat_map(|&p| BETAS.iter().map(move |&b| (p, b)))
        .collect();
    combos.par_iter().for_each(|&(p, beta)| {
        let crit = p.holding_cost * p.rate as f64 * beta / (1.0 - beta);
        for &w in &[1.0, 0.7 * crit] {
            let mdp = TruncatedMdp::with_default_truncation(p, w, beta).unwrap();
            let expected = p.holding_cost * p.rate as f64 + w;
            for thr in 0..p.rate {
                let eval =
                    evaluate_threshold_policy(&mdp, thr as i64, tol, 1_000_000).unwrap();
                for i in 0..=thr as usize {
                    let diff = eval.values[p.rate as usize + i] - eval.values[i];
                    assert!(
                        (diff - expected).abs() <= 10.0 * tol,
                        "(a={}, R={}), beta {beta}, w {w}, p {thr}, i {i}: {diff} vs {expected}",
                        p.holding_cost,
                        p.rate
                    );
                }
            }
        }
    });

    // All-passive bound. Truncation bias shrinks the difference near the cap,
    // so the cap is pushed out by the discount-dependent boundary depth and
    // the bound is checked on low states.
    combos.par_iter().for_each(|&(p, beta)| {
        let r = p.rate as usize;
        let q_hi = 2 * r;
        let q_max = round_up_to(q_hi + 10 * r + boundary_depth(&p, beta), r);
        let mdp = TruncatedMdp::new(p, 0.0, beta, q_max).unwrap();
        let eval = evaluate_threshold_policy(&mdp, q_max as i64, tol, 1_000_000).unwrap();
        let bound = p.holding_cost * p.rate as f64 / (1.0 - beta) * (1.0 - 1e-3);
        for q in 0..=q_hi {
            let diff = eval.values[q + r] - eval.values[q];
            assert!(
                diff >= bound,
                "(a={}, R={}), beta {beta}, q {q}: {diff} < {bound}",
                p.holding_cost,
                p.rate
            );
        }
    });
    println!(
        "acceptance: value-difference identities (service displacement within 1e-8, \
         all-passive growth within 1e-3 relative) — PASS"
    );
}

/// Monotone value, R-convexity, and submodular action gaps certified on 100
/// random (class, subsidy, discount) points; optimal thresholds nondecreasing
/// across subsidy grids.
#[test]
fn structure_certified_on_random_grid() {
    let classes = reference_classes();
    let mut rng = Pcg64::seed_from_u64(0x57AB1E);
    let samples: Vec<(ClassParams, f64, f64)> = (0..100)
        .map(|_| {
            let p = classes[rng.gen_range(0..classes.len())];
            let beta: f64 = rng.gen_range(0.3..0.99);
            let crit = p.holding_cost * p.rate as f64 * beta / (1.0 - beta);
            let w: f64 = rng.gen_range(0.0..1.5 * crit);
            (p, beta, w)
        })
        .collect();
    samples.par_iter().for_each(|&(p, beta, w)| {
        let r = p.rate as usize;
        let q_max = round_up_to(mdp::default_q_max(&p) + boundary_depth(&p, beta), r);
        let mdp = TruncatedMdp::new(p, w, beta, q_max).unwrap();
        let solution = value_iteration(&mdp, 1e-9, 1_000_000).unwrap();
        let report = certify_structure(&solution);
        assert!(
            report.all_pass(),
            "(a={}, R={}), beta {beta}, w {w}: {report:?}",
            p.holding_cost,
            p.rate
        );
        assert!(report.interior_end >= 6 * r, "{report:?}");
    });

    let grids: Vec<(ClassParams, f64)> = classes
        .iter()
        .flat_map(|&p| [0.5, 0.9].into_iter().map(move |b| (p, b)))
        .collect();
    grids.par_iter().for_each(|&(p, beta)| {
        let crit = p.holding_cost * p.rate as f64 * beta / (1.0 - beta);
        let grid: Vec<f64> = (0..=25).map(|i| i as f64 * crit * 1.1 / 25.0).collect();
        let (monotone, table) = threshold_monotone_in_subsidy(&p, beta, &grid).unwrap();
        assert!(
            monotone,
            "(a={}, R={}), beta {beta}: thresholds not monotone: {table:?}",
            p.holding_cost,
            p.rate
        );
    });
    println!(
        "acceptance: structural certification (monotone V, R-convex V, submodular gaps, \
         indexable thresholds) — PASS (100 random points + 6 subsidy grids)"
    );
}

/// Descending order under the discounted table equals descending order under
/// the limit table, up to ties, for 1000 random multisets just above the
/// ranking threshold.
#[test]
fn discounted_and_limit_rankings_agree() {
    let classes = reference_classes();
    let beta = beta_threshold(&classes) + 1e-3;
    let scale = tail_scale(&classes);
    let mut rng = Pcg64::seed_from_u64(0x02D32);
    let mut pairs_checked = 0usize;
    for _ in 0..1000 {
        let size = rng.gen_range(5..25);
        let multiset: Vec<(usize, u64)> = (0..size)
            .map(|_| {
                let k = rng.gen_range(0..classes.len());
                let n = rng.gen_range(0..classes[k].rate + 6);
                (k, n)
            })
            .collect();
        let scored: Vec<(f64, f64)> = multiset
            .iter()
            .map(|&(k, n)| {
                (
                    index_discounted(n, beta, &classes[k]),
                    index_limit(n, &classes[k], scale),
                )
            })
            .collect();
        for i in 0..scored.len() {
            for j in i + 1..scored.len() {
                let (d_i, l_i) = scored[i];
                let (d_j, l_j) = scored[j];
                if d_i != d_j && l_i != l_j {
                    assert_eq!(
                        (d_i - d_j).signum(),
                        (l_i - l_j).signum(),
                        "order flipped between {:?} and {:?}",
                        multiset[i],
                        multiset[j]
                    );
                }
                pairs_checked += 1;
            }
        }
    }
    println!(
        "acceptance: discounted/limit ranking equivalence — PASS \
         (1000 multisets, {pairs_checked} ordered pairs)"
    );
}

fn figure_config(r1: u64, r2: u64) -> SystemConfig {
    let c0 = ClassParams::new(0, 1.0, r1).unwrap();
    let c1 = ClassParams::new(1, 1.0, r2).unwrap();
    SystemConfig::new(vec![(c0, 5), (c1, 5)], 5, 200_000, 20_000, 0x20260808, 20).unwrap()
}

/// The reference two-class comparison: the index policy is sandwiched between
/// the relaxed bound and the myopic policy at every size, and its relative
/// gap to the bound shrinks from N = 10 to N = 80.
#[test]
fn whittle_beats_myopic_and_approaches_bound() {
    for (r1, r2, label) in [(5u64, 20u64, "rates (5, 20)"), (10, 45, "rates (10, 45)")] {
        let base = figure_config(r1, r2);
        let sizes = [10usize, 20, 40, 80];
        let table = sweep(
            &base,
            &sizes,
            &[PolicyKind::WhittleIndex, PolicyKind::MaxWeightMyopic],
            IndexMode::Limit,
        )
        .unwrap();
        let mut gaps = Vec::new();
        for &n in &sizes {
            let wi = table.mean(n, PolicyKind::WhittleIndex).unwrap();
            let md = table.mean(n, PolicyKind::MaxWeightMyopic).unwrap();
            let bound = table.bound(n).unwrap().lower_bound_per_user;
            assert!(
                wi.pooled_mean >= bound - 2.0 * wi.std_error,
                "{label}, N = {n}: index policy {} below bound {bound}",
                wi.pooled_mean
            );
            assert!(
                wi.pooled_mean < md.pooled_mean,
                "{label}, N = {n}: index policy {} not below myopic {}",
                wi.pooled_mean,
                md.pooled_mean
            );
            gaps.push((n, (wi.pooled_mean - bound) / bound));
        }
        let gap10 = gaps.iter().find(|(n, _)| *n == 10).unwrap().1;
        let gap80 = gaps.iter().find(|(n, _)| *n == 80).unwrap().1;
        assert!(
            gap80 < gap10,
            "{label}: relative gap not shrinking: {gap10:.4} at N=10 vs {gap80:.4} at N=80"
        );
        println!(
            "acceptance: {label} ordering bound <= index <= myopic at N in {{10,20,40,80}}, \
             relative gap {:.3}% -> {:.3}% — PASS",
            gap10 * 100.0,
            gap80 * 100.0
        );
    }
}

/// The Lagrangian construction of the relaxed bound agrees with the
/// occupation-measure LP on the single-class toy within 1e-3.
#[test]
fn relaxed_bound_matches_occupation_lp() {
    let p = ClassParams::new(0, 1.0, 2).unwrap();
    let cfg = SystemConfig::new(vec![(p, 2)], 1, 100, 10, 1, 1).unwrap();
    let lagrangian = lagrangian_lower_bound(&cfg).unwrap().lower_bound_per_user;
    let lp = occupation_lp_lower_bound(&[(p, 2)], 1, 200).unwrap();
    assert!(
        (lagrangian - lp).abs() <= 1e-3,
        "lagrangian {lagrangian} vs occupation LP {lp}"
    );
    println!(
        "acceptance: relaxed bound vs occupation-measure LP — PASS \
         (|{lagrangian:.6} - {lp:.6}| <= 1e-3)"
    );
}
