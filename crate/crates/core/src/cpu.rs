//! Delay-based CPU attribution.
//!
//! Timer samples carry the elapsed virtual time `T` and the requested
//! quantum `q`. On-time delivery means the whole interval ran managed code;
//! any delivery delay is time spent outside it, so the main callsite is
//! credited `min(T, q)` managed and `max(T - q, 0)` native. Threads that
//! never receive the timer are covered by per-thread status flags and an
//! in-native-call marker.
//!
//! Counters are kept in integer nanoseconds so replaying a recorded schedule
//! is exact.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::model::{Callsite, ThreadId};

/// Per-callsite managed/native time, in nanoseconds. Counters only grow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CpuCounters {
    pub managed_ns: u64,
    pub native_ns: u64,
}

impl CpuCounters {
    pub fn total_ns(&self) -> u64 {
        self.managed_ns + self.native_ns
    }

    pub fn managed_seconds(&self) -> f64 {
        self.managed_ns as f64 / 1e9
    }

    pub fn native_seconds(&self) -> f64 {
        self.native_ns as f64 / 1e9
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThreadStatus {
    #[default]
    Executing,
    Sleeping,
}

impl ThreadStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ThreadStatus::Executing => "executing",
            ThreadStatus::Sleeping => "sleeping",
        }
    }
}

/// One stack frame with its profiled-code flag.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameInfo {
    pub callsite: Callsite,
    pub in_profiled_code: bool,
}

/// Last-known state of one thread at sample time. `in_call` marks a thread
/// sitting in a call into native code; sleeping threads receive nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreadSnapshot {
    pub thread: ThreadId,
    pub status: ThreadStatus,
    pub callsite: Callsite,
    pub in_call: bool,
}

/// One timer delivery: elapsed virtual time, the quantum, the main thread's
/// stack (outermost first), and snapshots of the other threads.
#[derive(Debug, Clone, PartialEq)]
pub struct TimerSample {
    pub elapsed_virtual_ns: u64,
    pub quantum_ns: u64,
    pub main_stack: Vec<FrameInfo>,
    pub thread_snapshots: Vec<ThreadSnapshot>,
}

/// Attribution target for stacks with no profiled frame.
pub fn foreign_callsite() -> Callsite {
    static FOREIGN: OnceLock<Callsite> = OnceLock::new();
    FOREIGN.get_or_init(|| Callsite::synthetic("<foreign>")).clone()
}

/// Innermost frame within profiled source code; `<foreign>` when the stack
/// never enters profiled code.
pub fn resolve_attribution(stack: &[FrameInfo]) -> Callsite {
    stack
        .iter()
        .rev()
        .find(|frame| frame.in_profiled_code)
        .map(|frame| frame.callsite.clone())
        .unwrap_or_else(foreign_callsite)
}

/// Accumulates per-callsite CPU counters from timer samples.
///
/// Thread statuses set through [`set_thread_status`](Self::set_thread_status)
/// override snapshot statuses; threads never registered default to whatever
/// the snapshot recorded (initially executing).
#[derive(Debug, Clone, Default)]
pub struct CpuAttributor {
    counters: HashMap<Callsite, CpuCounters>,
    thread_status: HashMap<ThreadId, ThreadStatus>,
}

impl CpuAttributor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn on_timer_sample(&mut self, sample: &TimerSample) {
        let t = sample.elapsed_virtual_ns;
        let q = sample.quantum_ns;

        let main = if sample.main_stack.is_empty() {
            foreign_callsite()
        } else {
            resolve_attribution(&sample.main_stack)
        };
        let counters = self.counters.entry(main).or_default();
        counters.managed_ns += t.min(q);
        counters.native_ns += t.saturating_sub(q);

        for snapshot in &sample.thread_snapshots {
            let status = self
                .thread_status
                .get(&snapshot.thread)
                .copied()
                .unwrap_or(snapshot.status);
            if status == ThreadStatus::Sleeping {
                continue;
            }
            let counters = self.counters.entry(snapshot.callsite.clone()).or_default();
            if snapshot.in_call {
                counters.native_ns += t;
            } else {
                counters.managed_ns += t;
            }
        }
    }

    /// Threads may appear at any time; unknown ids create an entry.
    pub fn set_thread_status(&mut self, thread: ThreadId, status: ThreadStatus) {
        self.thread_status.insert(thread, status);
    }

    pub fn counters(&self) -> &HashMap<Callsite, CpuCounters> {
        &self.counters
    }

    pub fn counters_for(&self, callsite: &Callsite) -> CpuCounters {
        self.counters.get(callsite).copied().unwrap_or_default()
    }

    pub fn total_attributed_ns(&self) -> u64 {
        self.counters.values().map(|c| c.total_ns()).sum()
    }
}
