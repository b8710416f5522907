//! Discrete-time simulation of the full N-queue system under a policy.
//!
//! Slot structure: observe the state, decide which queues hold servers,
//! depart, then arrive. The cost of a slot is the weighted backlog of the
//! state it produced, with the all-zero initial state costed at slot 0;
//! slots before the warmup are excluded from accounting. The same convention
//! applies to every policy, and arrivals are drawn from per-queue streams
//! derived from the master seed, so policies compared under one seed see
//! identical arrival sequences.
//!
//! Replications run in parallel and are merged in replication order, so
//! results are bit-identical regardless of thread count.

use crate::model::{
    arrival_stream, sample_arrival, slot_cost, step_queue, stream_seed, ClassParams,
    CostAccumulator, ModelError, SystemConfig, SystemState, POLICY_STREAM,
};
use crate::policies::{decide, PolicyKind};
use crate::relaxed::{lagrangian_lower_bound, RelaxedError};
use crate::whittle::{IndexMode, IndexTable, WhittleError};
use rand::SeedableRng;
use rand_pcg::Pcg64;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("queue {queue} diverged at slot {slot} in replication {replication}")]
    Unstable {
        queue: usize,
        slot: u64,
        replication: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Whittle(#[from] WhittleError),
    #[error(transparent)]
    Relaxed(#[from] RelaxedError),
}

/// Replication-level summary of one policy on one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub policy: PolicyKind,
    pub queues: usize,
    pub servers: usize,
    /// Average weighted backlog per user per slot, one entry per replication.
    pub replication_means: Vec<f64>,
    /// Mean of the replication means.
    pub pooled_mean: f64,
    /// Standard error from the replication-to-replication variance.
    pub std_error: f64,
    /// Accounted slots per replication (horizon minus warmup).
    pub measured_slots: u64,
    pub seed: u64,
}

trait ArrivalSource {
    fn sample(&mut self, queue: usize, params: &ClassParams) -> u64;
}

struct StreamArrivals {
    rngs: Vec<Pcg64>,
}

impl StreamArrivals {
    fn new(config: &SystemConfig, replication: usize) -> Self {
        let rngs = (0..config.total_queues())
            .map(|i| arrival_stream(config.seed, replication as u64, i as u64))
            .collect();
        Self { rngs }
    }
}

impl ArrivalSource for StreamArrivals {
    fn sample(&mut self, queue: usize, params: &ClassParams) -> u64 {
        sample_arrival(params, &mut self.rngs[queue])
    }
}

fn replication_mean(
    config: &SystemConfig,
    kind: PolicyKind,
    table: &IndexTable,
    replication: usize,
    arrivals: &mut dyn ArrivalSource,
    initial: SystemState,
    mut observe: Option<&mut ReplicationTrace>,
) -> Result<f64, SimError> {
    let mut state = initial;
    let mut policy_rng =
        Pcg64::seed_from_u64(stream_seed(config.seed, replication as u64, POLICY_STREAM));
    let mut acc = CostAccumulator::default();
    if config.warmup == 0 {
        acc.record(slot_cost(&state, &config.classes));
    }
    if let Some(trace) = observe.as_deref_mut() {
        trace.states.push(state.queues.clone());
    }
    for t in 1..config.horizon {
        let action = decide(kind, &state, config, table, &mut policy_rng);
        debug_assert!(action.len() <= config.servers, "server budget violated");
        for i in 0..state.len() {
            let params = &config.classes[state.class_of(i)];
            let scheduled = action.is_scheduled(i);
            debug_assert!(!(scheduled && state.queues[i] == 0), "scheduled empty queue");
            let arrival = arrivals.sample(i, params);
            state.queues[i] = step_queue(state.queues[i], scheduled, arrival, params)
                .map_err(|e| match e {
                    ModelError::Overflow => SimError::Unstable { queue: i, slot: t, replication },
                    other => SimError::Model(other),
                })?;
        }
        state.slot = t;
        if t >= config.warmup {
            acc.record(slot_cost(&state, &config.classes));
        }
        if let Some(trace) = observe.as_deref_mut() {
            trace.states.push(state.queues.clone());
            trace.actions.push(action);
        }
    }
    debug_assert_eq!(acc.slots(), config.horizon - config.warmup);
    Ok(acc.average() / config.total_queues() as f64)
}

/// Runs all replications of one policy and pools the results.
pub fn run(config: &SystemConfig, kind: PolicyKind, mode: IndexMode) -> Result<SimResult, SimError> {
    let table = IndexTable::build(&config.classes, mode)?;
    let means: Vec<f64> = (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            let mut arrivals = StreamArrivals::new(config, rep);
            replication_mean(
                config,
                kind,
                &table,
                rep,
                &mut arrivals,
                SystemState::initial(config),
                None,
            )
        })
        .collect::<Result<_, _>>()?;
    let pooled_mean = means.iter().sum::<f64>() / means.len() as f64;
    let std_error = if means.len() > 1 {
        let var = means
            .iter()
            .map(|m| (m - pooled_mean) * (m - pooled_mean))
            .sum::<f64>()
            / (means.len() - 1) as f64;
        (var / means.len() as f64).sqrt()
    } else {
        0.0
    };
    Ok(SimResult {
        policy: kind,
        queues: config.total_queues(),
        servers: config.servers,
        replication_means: means,
        pooled_mean,
        std_error,
        measured_slots: config.horizon - config.warmup,
        seed: config.seed,
    })
}

/// Per-slot record of one replication, for replay-style verification.
#[derive(Debug, Clone, Default)]
pub struct ReplicationTrace {
    /// Queue vectors at slots `0 .. horizon`.
    pub states: Vec<Vec<u64>>,
    /// Action taken at each transition; `actions[t]` moves slot t to t + 1.
    pub actions: Vec<crate::model::Action>,
}

/// Runs one replication while recording every state and action. Streams are
/// identical to the ones [`run`] uses for the same replication index.
pub fn trace_replication(
    config: &SystemConfig,
    kind: PolicyKind,
    mode: IndexMode,
    replication: usize,
) -> Result<(f64, ReplicationTrace), SimError> {
    let table = IndexTable::build(&config.classes, mode)?;
    let mut arrivals = StreamArrivals::new(config, replication);
    let mut trace = ReplicationTrace::default();
    let mean = replication_mean(
        config,
        kind,
        &table,
        replication,
        &mut arrivals,
        SystemState::initial(config),
        Some(&mut trace),
    )?;
    Ok((mean, trace))
}

/// One policy's pooled result at one system size.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub queues: usize,
    pub servers: usize,
    pub policy: PolicyKind,
    pub pooled_mean: f64,
    pub std_error: f64,
}

/// Relaxed-problem bound at one system size.
#[derive(Debug, Clone)]
pub struct SweepBound {
    pub queues: usize,
    pub servers: usize,
    pub lower_bound_per_user: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub bounds: Vec<SweepBound>,
}

impl SweepTable {
    /// Pooled mean for one (N, policy) cell, if present.
    pub fn mean(&self, queues: usize, policy: PolicyKind) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.queues == queues && r.policy == policy)
    }

    pub fn bound(&self, queues: usize) -> Option<&SweepBound> {
        self.bounds.iter().find(|b| b.queues == queues)
    }
}

/// Scales the base configuration to each system size, simulates every
/// policy, and computes the relaxed bound per size.
pub fn sweep(
    base: &SystemConfig,
    sizes: &[usize],
    kinds: &[PolicyKind],
    mode: IndexMode,
) -> Result<SweepTable, SimError> {
    let mut table = SweepTable::default();
    for &n in sizes {
        let config = base.scaled_to(n)?;
        for &kind in kinds {
            let result = run(&config, kind, mode)?;
            table.rows.push(SweepRow {
                queues: n,
                servers: config.servers,
                policy: kind,
                pooled_mean: result.pooled_mean,
                std_error: result.std_error,
            });
        }
        let bound = lagrangian_lower_bound(&config)?;
        table.bounds.push(SweepBound {
            queues: n,
            servers: config.servers,
            lower_bound_per_user: bound.lower_bound_per_user,
        });
    }
    Ok(table)
}
