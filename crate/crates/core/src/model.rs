//! Domain types and single-slot queue dynamics shared by every other module.
//!
//! A system is a set of queues grouped into classes. A class-`k` queue drains
//! up to `rate` packets in a slot where it holds a server, and receives an
//! arrival drawn uniformly from `{0, …, rate − 1}`. The per-slot transition is
//!
//! ```text
//! q' = (q − rate · served)⁺ + arrival
//! ```
//!
//! and the objective tracked by the simulator is the long-run average of the
//! weighted backlog `Σ holding_cost · q` over all queues.

use rand::Rng;
use rand_pcg::Pcg64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("arrival {arrival} outside 0..{rate} for class {class_id}")]
    ArrivalOutOfRange {
        class_id: usize,
        arrival: u64,
        rate: u64,
    },
    #[error("queue length overflowed the 64-bit accumulator")]
    Overflow,
    #[error("invalid class parameters: {0}")]
    InvalidClass(String),
    #[error("invalid system config: {0}")]
    InvalidConfig(String),
}

/// Per-class constants. `arrival_mass` is pinned to `1 / rate` so that
/// arrivals are uniform on `{0, …, rate − 1}` with mean `(rate − 1) / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassParams {
    /// Position of this class in the configured class list.
    pub class_id: usize,
    /// Holding-cost weight per packet per slot (must be positive).
    pub holding_cost: f64,
    /// Maximum packets transmitted per slot when scheduled (at least 2).
    pub rate: u64,
    /// Probability mass of each arrival value, exactly `1 / rate`.
    pub arrival_mass: f64,
    /// Fraction of the population that belongs to this class.
    pub fraction: f64,
}

impl ClassParams {
    /// Builds a class. The population fraction starts at zero and is filled
    /// in by [`SystemConfig::new`] once queue counts are known.
    pub fn new(class_id: usize, holding_cost: f64, rate: u64) -> Result<Self, ModelError> {
        if rate < 2 {
            return Err(ModelError::InvalidClass(format!(
                "class {class_id}: rate must be at least 2, got {rate}"
            )));
        }
        if !(holding_cost > 0.0) || !holding_cost.is_finite() {
            return Err(ModelError::InvalidClass(format!(
                "class {class_id}: holding cost must be a positive real, got {holding_cost}"
            )));
        }
        Ok(Self {
            class_id,
            holding_cost,
            rate,
            arrival_mass: 1.0 / rate as f64,
            fraction: 0.0,
        })
    }

    /// Largest possible arrival in one slot.
    pub fn max_arrival(&self) -> u64 {
        self.rate - 1
    }

    /// Mean arrivals per slot, `(rate − 1) / 2`.
    pub fn mean_arrival(&self) -> f64 {
        (self.rate - 1) as f64 / 2.0
    }

    /// Long-run fraction of slots a full-rate server must hold this queue:
    /// `(rate − 1) / (2 · rate)`, always below one half.
    pub fn load(&self) -> f64 {
        (self.rate - 1) as f64 / (2.0 * self.rate as f64)
    }
}

/// A full experiment definition: the class mix, the server budget, and the
/// simulation horizon/seeding parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub classes: Vec<ClassParams>,
    /// Number of queues per class; the realization of `fraction · N`.
    pub counts: Vec<usize>,
    /// Number of servers `M`, strictly between 0 and the total queue count.
    pub servers: usize,
    /// Simulated slots per replication.
    pub horizon: u64,
    /// Leading slots excluded from cost accounting.
    pub warmup: u64,
    /// Master seed; every stream is derived from it deterministically.
    pub seed: u64,
    pub replications: usize,
}

impl SystemConfig {
    pub fn new(
        class_specs: Vec<(ClassParams, usize)>,
        servers: usize,
        horizon: u64,
        warmup: u64,
        seed: u64,
        replications: usize,
    ) -> Result<Self, ModelError> {
        if class_specs.is_empty() {
            return Err(ModelError::InvalidConfig("no classes given".into()));
        }
        let total: usize = class_specs.iter().map(|(_, c)| c).sum();
        if class_specs.iter().any(|(_, c)| *c == 0) {
            return Err(ModelError::InvalidConfig(
                "every class needs at least one queue".into(),
            ));
        }
        if servers == 0 || servers >= total {
            return Err(ModelError::InvalidConfig(format!(
                "servers must satisfy 0 < M < N; got M = {servers}, N = {total}"
            )));
        }
        if warmup >= horizon {
            return Err(ModelError::InvalidConfig(format!(
                "warmup ({warmup}) must be below the horizon ({horizon})"
            )));
        }
        if replications == 0 {
            return Err(ModelError::InvalidConfig(
                "at least one replication required".into(),
            ));
        }
        let mut classes = Vec::with_capacity(class_specs.len());
        let mut counts = Vec::with_capacity(class_specs.len());
        for (pos, (mut params, count)) in class_specs.into_iter().enumerate() {
            if params.class_id != pos {
                return Err(ModelError::InvalidConfig(format!(
                    "class ids must match list order: found id {} at position {pos}",
                    params.class_id
                )));
            }
            params.fraction = count as f64 / total as f64;
            classes.push(params);
            counts.push(count);
        }
        Ok(Self {
            classes,
            counts,
            servers,
            horizon,
            warmup,
            seed,
            replications,
        })
    }

    /// Total number of queues `N`.
    pub fn total_queues(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Server-to-queue ratio `α = M / N`.
    pub fn server_ratio(&self) -> f64 {
        self.servers as f64 / self.total_queues() as f64
    }

    /// Class index of each queue; queues are laid out class by class.
    pub fn queue_classes(&self) -> Vec<usize> {
        let mut layout = Vec::with_capacity(self.total_queues());
        for (k, count) in self.counts.iter().enumerate() {
            layout.extend(std::iter::repeat_n(k, *count));
        }
        layout
    }

    /// Rescales the class mix to `n` total queues, keeping the class
    /// proportions and the server ratio. Queue counts must divide evenly;
    /// the server count is floored when `α · n` is fractional.
    pub fn scaled_to(&self, n: usize) -> Result<SystemConfig, ModelError> {
        let base = self.total_queues();
        let mut specs = Vec::with_capacity(self.classes.len());
        for (params, count) in self.classes.iter().zip(&self.counts) {
            let scaled = count * n;
            if !scaled.is_multiple_of(base) {
                return Err(ModelError::InvalidConfig(format!(
                    "class {} count {count} does not scale integrally from N = {base} to N = {n}",
                    params.class_id
                )));
            }
            specs.push((*params, scaled / base));
        }
        let servers = self.servers * n / base;
        SystemConfig::new(
            specs,
            servers,
            self.horizon,
            self.warmup,
            self.seed,
            self.replications,
        )
    }
}

/// Live state of the simulated system: one backlog per queue, tagged with its
/// class, plus the current slot index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemState {
    queue_class: Vec<usize>,
    pub queues: Vec<u64>,
    pub slot: u64,
}

impl SystemState {
    /// All-empty initial state at slot 0.
    pub fn initial(config: &SystemConfig) -> Self {
        let layout = config.queue_classes();
        let n = layout.len();
        Self {
            queue_class: layout,
            queues: vec![0; n],
            slot: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.queues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queues.is_empty()
    }

    pub fn class_of(&self, queue: usize) -> usize {
        self.queue_class[queue]
    }
}

/// A scheduling decision: the set of queue indices holding a server this
/// slot, capped at the server budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Action {
    scheduled: Vec<usize>,
}

impl Action {
    /// Builds an action from queue indices, enforcing the server budget.
    /// Indices are deduplicated and kept sorted.
    pub fn new(mut scheduled: Vec<usize>, servers: usize) -> Result<Self, ModelError> {
        scheduled.sort_unstable();
        scheduled.dedup();
        if scheduled.len() > servers {
            return Err(ModelError::InvalidConfig(format!(
                "action schedules {} queues but only {servers} servers exist",
                scheduled.len()
            )));
        }
        Ok(Self { scheduled })
    }

    pub fn empty() -> Self {
        Self { scheduled: Vec::new() }
    }

    pub fn is_scheduled(&self, queue: usize) -> bool {
        self.scheduled.binary_search(&queue).is_ok()
    }

    pub fn len(&self) -> usize {
        self.scheduled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scheduled.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.scheduled.iter().copied()
    }
}

/// Running weighted-backlog average, the empirical estimate of the objective.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CostAccumulator {
    weighted_sum: f64,
    slots: u64,
}

impl CostAccumulator {
    pub fn record(&mut self, slot_cost: f64) {
        self.weighted_sum += slot_cost;
        self.slots += 1;
    }

    pub fn slots(&self) -> u64 {
        self.slots
    }

    /// Mean cost per counted slot; zero before anything is recorded.
    pub fn average(&self) -> f64 {
        if self.slots == 0 {
            0.0
        } else {
            self.weighted_sum / self.slots as f64
        }
    }
}

/// One-slot queue update: `(q − rate · served)⁺ + arrival`, with checked
/// addition so a diverging queue fails loudly instead of wrapping.
pub fn step_queue(
    q: u64,
    scheduled: bool,
    arrival: u64,
    params: &ClassParams,
) -> Result<u64, ModelError> {
    if arrival >= params.rate {
        return Err(ModelError::ArrivalOutOfRange {
            class_id: params.class_id,
            arrival,
            rate: params.rate,
        });
    }
    let after_service = if scheduled { q.saturating_sub(params.rate) } else { q };
    after_service.checked_add(arrival).ok_or(ModelError::Overflow)
}

/// Draws one arrival, uniform on `{0, …, rate − 1}`.
pub fn sample_arrival<R: Rng + ?Sized>(params: &ClassParams, rng: &mut R) -> u64 {
    rng.gen_range(0..params.rate)
}

/// Weighted backlog of the current state: `Σ_k Σ_i a_k · q_i^k`.
pub fn slot_cost(state: &SystemState, classes: &[ClassParams]) -> f64 {
    state
        .queues
        .iter()
        .enumerate()
        .map(|(i, &q)| classes[state.class_of(i)].holding_cost * q as f64)
        .sum()
}

/// Stream tag reserved for per-replication policy randomness, distinct from
/// every queue index.
pub const POLICY_STREAM: u64 = u64::MAX;

/// Derives an independent stream seed from `(master, replication, stream)`
/// with a splitmix64 finalizer chain. Policies compared under the same master
/// seed see identical arrival sequences (common random numbers).
pub fn stream_seed(master: u64, replication: u64, stream: u64) -> u64 {
    fn mix(z: u64) -> u64 {
        let mut z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(mix(mix(master) ^ replication) ^ stream)
}

/// Arrival generator for one queue in one replication.
pub fn arrival_stream(master: u64, replication: u64, queue: u64) -> Pcg64 {
    use rand::SeedableRng;
    Pcg64::seed_from_u64(stream_seed(master, replication, queue))
}
