//! Deterministic synthetic trace generators for the replay laboratory.
//!
//! Timestamps are synthetic (event index times a fixed tick) so rates and
//! slopes replay deterministically; alloc ids are a counter. Every generated
//! stream passes `validate_event_stream`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{AllocEvent, Callsite, DomainTag, EventKind, ThreadId};

/// Nanoseconds between consecutive synthetic events.
pub const TRACE_TICK_NS: u64 = 1_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("trace parameter `{0}` must be positive")]
    ZeroParameter(&'static str),
    #[error("unknown generator `{0}` (expected churn|staircase|leak|random)")]
    UnknownGenerator(String),
    #[error("bad generator spec `{0}`: {1}")]
    BadSpec(String, String),
}

/// Generator selection plus parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceSpec {
    /// Paired alloc/free of `size` bytes; every 100 pairs an extra
    /// `drift_bytes_per_100_pairs` allocation stays live. Zero drift nets
    /// out to nothing.
    Churn {
        pairs: u64,
        size: u64,
        drift_bytes_per_100_pairs: u64,
    },
    /// `steps` allocations of `step_bytes`, never freed.
    Staircase { steps: u64, step_bytes: u64 },
    /// Per round: a leaking site allocates `2 * step_bytes` (never freed),
    /// then a churning site allocates and frees `step_bytes`. A final
    /// leaking allocation settles the last tracked object. With
    /// `step_bytes >= T` every allocation crosses the threshold.
    Leak { rounds: u64, step_bytes: u64 },
    /// Seeded random mix of allocs and frees of live ids.
    Random {
        events: u64,
        seed: u64,
        max_size: u64,
        callsites: u32,
    },
}

/// Callsites used by the generators, fixed so tests can refer to them.
pub fn churn_site() -> Callsite {
    Callsite::new("churn.rs", 10).unwrap()
}

pub fn drift_site() -> Callsite {
    Callsite::new("churn.rs", 20).unwrap()
}

pub fn staircase_site() -> Callsite {
    Callsite::new("stairs.rs", 10).unwrap()
}

pub fn leak_site() -> Callsite {
    Callsite::new("leak.rs", 10).unwrap()
}

struct EventBuilder {
    events: Vec<AllocEvent>,
    next_id: u64,
}

impl EventBuilder {
    fn new(capacity: usize) -> Self {
        EventBuilder {
            events: Vec::with_capacity(capacity),
            next_id: 1,
        }
    }

    fn push(
        &mut self,
        kind: EventKind,
        size: u64,
        id: u64,
        callsite: &Callsite,
        domain: DomainTag,
    ) {
        let timestamp_ns = (self.events.len() as u64 + 1) * TRACE_TICK_NS;
        self.events.push(AllocEvent {
            kind,
            size,
            alloc_id: id,
            domain,
            callsite: callsite.clone(),
            timestamp_ns,
            thread: ThreadId(0),
        });
    }

    fn alloc(&mut self, size: u64, callsite: &Callsite) -> u64 {
        self.alloc_in(size, callsite, DomainTag::Native)
    }

    fn alloc_in(&mut self, size: u64, callsite: &Callsite, domain: DomainTag) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.push(EventKind::Alloc, size, id, callsite, domain);
        id
    }

    fn free(&mut self, size: u64, id: u64, callsite: &Callsite) {
        self.push(EventKind::Free, size, id, callsite, DomainTag::Native);
    }
}

/// Deterministic for a given spec (and seed, where one applies).
pub fn generate_trace(spec: &TraceSpec) -> Result<Vec<AllocEvent>, TraceError> {
    match *spec {
        TraceSpec::Churn {
            pairs,
            size,
            drift_bytes_per_100_pairs,
        } => {
            if size == 0 {
                return Err(TraceError::ZeroParameter("size"));
            }
            let mut b = EventBuilder::new((pairs * 2 + pairs / 100) as usize);
            let pair_site = churn_site();
            let drift = drift_site();
            for i in 0..pairs {
                let id = b.alloc(size, &pair_site);
                b.free(size, id, &pair_site);
                if drift_bytes_per_100_pairs > 0 && (i + 1) % 100 == 0 {
                    b.alloc(drift_bytes_per_100_pairs, &drift);
                }
            }
            Ok(b.events)
        }
        TraceSpec::Staircase { steps, step_bytes } => {
            if step_bytes == 0 {
                return Err(TraceError::ZeroParameter("step"));
            }
            let mut b = EventBuilder::new(steps as usize);
            let site = staircase_site();
            for _ in 0..steps {
                b.alloc(step_bytes, &site);
            }
            Ok(b.events)
        }
        TraceSpec::Leak { rounds, step_bytes } => {
            if step_bytes == 0 {
                return Err(TraceError::ZeroParameter("step"));
            }
            if rounds == 0 {
                return Err(TraceError::ZeroParameter("rounds"));
            }
            let mut b = EventBuilder::new((rounds * 3 + 1) as usize);
            let leaky = leak_site();
            let churny = churn_site();
            for _ in 0..rounds {
                b.alloc(2 * step_bytes, &leaky);
                let id = b.alloc(step_bytes, &churny);
                b.free(step_bytes, id, &churny);
            }
            b.alloc(2 * step_bytes, &leaky);
            Ok(b.events)
        }
        TraceSpec::Random {
            events,
            seed,
            max_size,
            callsites,
        } => {
            if max_size == 0 {
                return Err(TraceError::ZeroParameter("max_size"));
            }
            if callsites == 0 {
                return Err(TraceError::ZeroParameter("callsites"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sites: Vec<Callsite> = (1..=callsites)
                .map(|i| Callsite::new("random.rs", i).unwrap())
                .collect();
            let mut b = EventBuilder::new(events as usize);
            // (id, size, site index) of live allocations
            let mut live: Vec<(u64, u64, usize)> = Vec::new();
            for _ in 0..events {
                let do_alloc = live.is_empty() || rng.random_bool(0.55);
                if do_alloc {
                    let size = rng.random_range(1..=max_size);
                    let site = rng.random_range(0..sites.len());
                    let domain = if rng.random_bool(0.4) {
                        DomainTag::Managed
                    } else {
                        DomainTag::Native
                    };
                    let id = b.alloc_in(size, &sites[site], domain);
                    live.push((id, size, site));
                } else {
                    let pick = rng.random_range(0..live.len());
                    let (id, size, site) = live.swap_remove(pick);
                    b.free(size, id, &sites[site]);
                }
            }
            Ok(b.events)
        }
    }
}

/// Parses a CLI generator spec: `name:key=value,...`.
///
/// ```text
/// churn:pairs=1000000,size=16384,drift=1024
/// staircase:steps=5,step=1048583
/// leak:rounds=25,step=1048583
/// random:events=10000,seed=7,max_size=65536,callsites=8
/// ```
pub fn parse_trace_spec(spec: &str) -> Result<TraceSpec, TraceError> {
    let (name, rest) = match spec.split_once(':') {
        Some((n, r)) => (n, r),
        None => (spec, ""),
    };
    let mut pairs_kv = std::collections::HashMap::new();
    if !rest.is_empty() {
        for part in rest.split(',') {
            let (k, v) = part.split_once('=').ok_or_else(|| {
                TraceError::BadSpec(spec.to_string(), format!("`{part}` is not key=value"))
            })?;
            let value: u64 = v.parse().map_err(|_| {
                TraceError::BadSpec(spec.to_string(), format!("`{v}` is not an integer"))
            })?;
            pairs_kv.insert(k.to_string(), value);
        }
    }
    let get = |key: &str, default: u64| pairs_kv.get(key).copied().unwrap_or(default);
    match name {
        "churn" => Ok(TraceSpec::Churn {
            pairs: get("pairs", 1_000_000),
            size: get("size", 16 * 1024),
            drift_bytes_per_100_pairs: get("drift", 1024),
        }),
        "staircase" => Ok(TraceSpec::Staircase {
            steps: get("steps", 5),
            step_bytes: get("step", crate::threshold::DEFAULT_SAMPLING_THRESHOLD),
        }),
        "leak" => Ok(TraceSpec::Leak {
            rounds: get("rounds", 25),
            step_bytes: get("step", crate::threshold::DEFAULT_SAMPLING_THRESHOLD),
        }),
        "random" => Ok(TraceSpec::Random {
            events: get("events", 10_000),
            seed: get("seed", 0),
            max_size: get("max_size", 65_536),
            callsites: get("callsites", 8) as u32,
        }),
        other => Err(TraceError::UnknownGenerator(other.to_string())),
    }
}
