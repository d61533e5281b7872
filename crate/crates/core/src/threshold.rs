//! Threshold-based allocation sampling.
//!
//! The sampler keeps running counts of allocated (`A`) and freed (`F`) bytes.
//! Once `|A - F| >= T` it emits one sample, appends a footprint trend point,
//! and resets the counters. Balanced churn never triggers it; only net
//! footprint growth or decline does. `T` is prime to avoid stride effects.

use thiserror::Error;

use crate::model::{
    AllocEvent, DomainTag, EventKind, FootprintPoint, SampleKind, SampleRecord,
};

/// Smallest prime >= 10 MiB, the default sampling threshold.
pub const DEFAULT_SAMPLING_THRESHOLD: u64 = 10_485_767;

/// Deterministic Miller-Rabin over the full u64 range.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n == p {
            return true;
        }
        if n.is_multiple_of(p) {
            return false;
        }
    }
    let mut d = n - 1;
    let mut r = 0u32;
    while d.is_multiple_of(2) {
        d /= 2;
        r += 1;
    }
    // These witnesses decide primality for all n < 2^64.
    'witness: for a in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..r {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn pow_mod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1u64;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, m);
        }
        base = mul_mod(base, base, m);
        exp >>= 1;
    }
    acc
}

/// Returns the smallest prime >= `base`. Bases below 2 round up to 2.
pub fn choose_sampling_threshold(base: u64) -> u64 {
    let mut n = base.max(2);
    while !is_prime(n) {
        n += 1;
    }
    n
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SamplerError {
    #[error("copy events are not accepted by the threshold sampler")]
    CopyEvent,
}

/// Counter crossing produced by [`ThresholdSampler::apply`]. Carries
/// everything needed to build a [`SampleRecord`] except the attribution,
/// which only the caller knows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub kind: SampleKind,
    pub timestamp_ns: u64,
    pub net_delta: i64,
    pub footprint: u64,
    pub peak_footprint: u64,
    pub managed_fraction: f64,
}

/// Threshold sampler state: byte counters since the last reset, exact
/// footprint accounting, and the footprint trend series.
#[derive(Debug, Clone)]
pub struct ThresholdSampler {
    threshold: u64,
    allocated_since_reset: u64,
    freed_since_reset: u64,
    managed_bytes_since_reset: u64,
    footprint: u64,
    peak_footprint: u64,
    trend: Vec<FootprintPoint>,
    samples_emitted: u64,
}

impl ThresholdSampler {
    /// `threshold` is used as given; callers wanting the prime guarantee go
    /// through [`choose_sampling_threshold`] or `ProfilerConfig`.
    pub fn new(threshold: u64) -> Self {
        ThresholdSampler {
            threshold: threshold.max(1),
            allocated_since_reset: 0,
            freed_since_reset: 0,
            managed_bytes_since_reset: 0,
            footprint: 0,
            peak_footprint: 0,
            trend: Vec::new(),
            samples_emitted: 0,
        }
    }

    /// Feeds one alloc/free event; returns a full sample record when the
    /// threshold is crossed. Copy events are rejected: they move bytes but do
    /// not change footprint.
    pub fn record_event(
        &mut self,
        event: &AllocEvent,
    ) -> Result<Option<SampleRecord>, SamplerError> {
        let managed = event.domain == DomainTag::Managed;
        let crossing = self.apply(event.kind, event.size, managed, || event.timestamp_ns)?;
        Ok(crossing.map(|c| SampleRecord {
            kind: c.kind,
            timestamp_ns: c.timestamp_ns,
            net_delta: c.net_delta,
            footprint: c.footprint,
            peak_footprint: c.peak_footprint,
            managed_fraction: c.managed_fraction,
            callsite: event.callsite.clone(),
            alloc_id: Some(event.alloc_id),
        }))
    }

    /// Low-overhead entry used by the live shim: no event struct, and the
    /// timestamp closure runs only when a sample is actually emitted.
    #[inline]
    pub fn apply(
        &mut self,
        kind: EventKind,
        size: u64,
        managed: bool,
        timestamp: impl FnOnce() -> u64,
    ) -> Result<Option<Crossing>, SamplerError> {
        match kind {
            EventKind::Alloc => {
                self.footprint += size;
                if self.footprint > self.peak_footprint {
                    self.peak_footprint = self.footprint;
                }
                self.allocated_since_reset += size;
                if managed {
                    self.managed_bytes_since_reset += size;
                }
            }
            EventKind::Free => {
                self.footprint = self.footprint.saturating_sub(size);
                self.freed_since_reset += size;
            }
            EventKind::Copy => return Err(SamplerError::CopyEvent),
        }

        if self.allocated_since_reset.abs_diff(self.freed_since_reset) < self.threshold {
            return Ok(None);
        }
        Ok(Some(self.emit(timestamp())))
    }

    #[cold]
    fn emit(&mut self, timestamp: u64) -> Crossing {
        let delta = self.allocated_since_reset as i128 - self.freed_since_reset as i128;
        // Crossing: emit, record a trend point, reset the counters.
        let mut ts = timestamp;
        if let Some(last) = self.trend.last() {
            // Trend timestamps are strictly increasing; coarse clocks may tie.
            ts = ts.max(last.timestamp_ns + 1);
        }
        let kind = if self.allocated_since_reset > self.freed_since_reset {
            SampleKind::Growth
        } else {
            SampleKind::Decline
        };
        let crossing = Crossing {
            kind,
            timestamp_ns: ts,
            net_delta: delta.clamp(i64::MIN as i128, i64::MAX as i128) as i64,
            footprint: self.footprint,
            peak_footprint: self.peak_footprint,
            managed_fraction: self.managed_bytes_since_reset as f64
                / self.allocated_since_reset.max(1) as f64,
        };
        self.trend.push(FootprintPoint {
            timestamp_ns: ts,
            footprint: self.footprint,
        });
        self.allocated_since_reset = 0;
        self.freed_since_reset = 0;
        self.managed_bytes_since_reset = 0;
        self.samples_emitted += 1;
        crossing
    }

    /// Footprint trend points, one per emitted growth/decline sample.
    pub fn trend_series(&self) -> &[FootprintPoint] {
        &self.trend
    }

    pub fn threshold(&self) -> u64 {
        self.threshold
    }

    pub fn footprint(&self) -> u64 {
        self.footprint
    }

    pub fn peak_footprint(&self) -> u64 {
        self.peak_footprint
    }

    pub fn samples_emitted(&self) -> u64 {
        self.samples_emitted
    }

    /// Un-emitted `A - F` residue; always `|residue| < T` between emissions.
    pub fn pending_delta(&self) -> i64 {
        (self.allocated_since_reset as i128 - self.freed_since_reset as i128) as i64
    }
}
