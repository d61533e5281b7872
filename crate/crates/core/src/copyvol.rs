//! Copy-volume tracking: rate-sampled bulk-copy bytes per callsite,
//! reported as MB/s. Uses classical rate sampling with a rate set at a
//! multiple of the allocation sampling threshold; copies never perturb the
//! footprint counters.

use std::collections::HashMap;

use thiserror::Error;

use crate::model::{Callsite, SampleKind, SampleRecord};
use crate::rate::{RateError, RateSampler};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CopyError {
    #[error("copy window has zero duration")]
    ZeroWindow,
}

/// Sampled copy activity: per-callsite sample counts plus the observation
/// window. Estimated bytes are `samples * r_copy`.
#[derive(Debug, Clone)]
pub struct CopyStats {
    r_copy: u64,
    samples_by_callsite: HashMap<Callsite, u64>,
    window_start_ns: Option<u64>,
    window_end_ns: Option<u64>,
}

impl CopyStats {
    pub fn new(r_copy: u64) -> Self {
        CopyStats {
            r_copy,
            samples_by_callsite: HashMap::new(),
            window_start_ns: None,
            window_end_ns: None,
        }
    }

    pub fn r_copy(&self) -> u64 {
        self.r_copy
    }

    /// Extends the observation window to cover `timestamp_ns`.
    pub fn observe(&mut self, timestamp_ns: u64) {
        if self.window_start_ns.is_none() {
            self.window_start_ns = Some(timestamp_ns);
        }
        let end = self.window_end_ns.get_or_insert(timestamp_ns);
        *end = (*end).max(timestamp_ns);
    }

    pub fn add_samples(&mut self, callsite: &Callsite, count: u64) {
        if count > 0 {
            *self.samples_by_callsite.entry(callsite.clone()).or_default() += count;
        }
    }

    pub fn samples(&self, callsite: &Callsite) -> u64 {
        self.samples_by_callsite.get(callsite).copied().unwrap_or(0)
    }

    pub fn total_samples(&self) -> u64 {
        self.samples_by_callsite.values().sum()
    }

    pub fn estimated_bytes(&self, callsite: &Callsite) -> u64 {
        self.samples(callsite).saturating_mul(self.r_copy)
    }

    pub fn total_estimated_bytes(&self) -> u64 {
        self.total_samples().saturating_mul(self.r_copy)
    }

    pub fn window_seconds(&self) -> Option<f64> {
        match (self.window_start_ns, self.window_end_ns) {
            (Some(start), Some(end)) if end > start => Some((end - start) as f64 / 1e9),
            _ => None,
        }
    }

    /// Copy volume in MB/s (MB = 2^20) over the observation window.
    pub fn mbps(&self, callsite: &Callsite) -> Result<f64, CopyError> {
        let secs = self.window_seconds().ok_or(CopyError::ZeroWindow)?;
        Ok(self.estimated_bytes(callsite) as f64 / (1u64 << 20) as f64 / secs)
    }

    /// Test/report helper: preset the window bounds.
    pub fn set_window(&mut self, start_ns: u64, end_ns: u64) {
        self.window_start_ns = Some(start_ns);
        self.window_end_ns = Some(end_ns);
    }
}

/// Rate sampler plus per-callsite copy statistics.
#[derive(Debug, Clone)]
pub struct CopyVolumeSampler {
    sampler: RateSampler,
    stats: CopyStats,
}

impl CopyVolumeSampler {
    /// `r_copy` is the copy sampling rate in bytes (a multiple of the
    /// allocation sampling threshold). `seed: None` selects deterministic
    /// countdown mode.
    pub fn new(r_copy: u64, seed: Option<u64>) -> Result<Self, RateError> {
        Ok(CopyVolumeSampler {
            sampler: RateSampler::from_seed(r_copy, seed)?,
            stats: CopyStats::new(r_copy),
        })
    }

    /// Feeds `n` copied bytes. Every countdown trigger emits one copy sample
    /// crediting `r_copy` bytes to the callsite. Footprint fields of the
    /// returned records are zero; callers that track footprint fill them in.
    pub fn record_copy(
        &mut self,
        n: u64,
        callsite: &Callsite,
        timestamp_ns: u64,
    ) -> Vec<SampleRecord> {
        if n == 0 {
            return Vec::new();
        }
        self.stats.observe(timestamp_ns);
        let emitted = self.sampler.record_bytes(n);
        if emitted == 0 {
            return Vec::new();
        }
        self.stats.add_samples(callsite, emitted);
        let r_copy = self.stats.r_copy();
        (0..emitted)
            .map(|_| SampleRecord {
                kind: SampleKind::Copy,
                timestamp_ns,
                net_delta: r_copy.min(i64::MAX as u64) as i64,
                footprint: 0,
                peak_footprint: 0,
                managed_fraction: 0.0,
                callsite: callsite.clone(),
                alloc_id: None,
            })
            .collect()
    }

    pub fn stats(&self) -> &CopyStats {
        &self.stats
    }

    pub fn r_copy(&self) -> u64 {
        self.stats.r_copy()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn site() -> Callsite {
        Callsite::new("copy.rs", 5).unwrap()
    }

    #[test]
    fn countdown_arithmetic_over_three_copies() {
        let mut cv = CopyVolumeSampler::new(1000, None).unwrap();
        let cs = site();
        assert!(cv.record_copy(400, &cs, 0).is_empty());
        assert!(cv.record_copy(400, &cs, 1).is_empty());
        let records = cv.record_copy(400, &cs, 2); // cumulative 1200
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].kind, SampleKind::Copy);
        assert_eq!(records[0].net_delta, 1000);
        assert_eq!(records[0].alloc_id, None);
        assert_eq!(cv.stats().samples(&cs), 1);
    }

    #[test]
    fn zero_byte_copy_never_triggers() {
        let mut cv = CopyVolumeSampler::new(8, None).unwrap();
        let cs = site();
        for i in 0..100 {
            assert!(cv.record_copy(0, &cs, i).is_empty());
        }
        assert_eq!(cv.stats().total_samples(), 0);
        // zero-length copies do not open an observation window either
        assert_eq!(cv.stats().window_seconds(), None);
    }

    #[test]
    fn mbps_arithmetic() {
        let mb = 1u64 << 20;
        let mut stats = CopyStats::new(mb);
        let cs = site();
        stats.add_samples(&cs, 100);
        stats.set_window(0, 10_000_000_000);
        assert_eq!(stats.mbps(&cs).unwrap(), 10.0);

        let empty = Callsite::new("other.rs", 1).unwrap();
        assert_eq!(stats.mbps(&empty).unwrap(), 0.0);

        stats.set_window(5, 5);
        assert_eq!(stats.mbps(&cs), Err(CopyError::ZeroWindow));
    }

    #[test]
    fn deterministic_mode_is_exact_on_multiples_of_the_rate() {
        let r = 4096u64;
        let mut cv = CopyVolumeSampler::new(r, None).unwrap();
        let cs = site();
        let records = cv.record_copy(r, &cs, 10);
        assert_eq!(records.len(), 1);
        assert_eq!(cv.stats().estimated_bytes(&cs), r);
    }

    #[test]
    fn seeded_estimator_tracks_true_volume() {
        // 50 MB/s for 20 simulated seconds in 64 KiB copies.
        let mb = 1u64 << 20;
        let true_bytes = 1000 * mb;
        let chunk = 64 * 1024u64;
        let mut cv = CopyVolumeSampler::new(2 * mb, Some(11)).unwrap();
        let cs = site();
        let copies = true_bytes / chunk;
        let tick = 20_000_000_000 / copies;
        for i in 0..copies {
            cv.record_copy(chunk, &cs, i * tick);
        }
        let est = cv.stats().estimated_bytes(&cs) as f64;
        let rel = (est - true_bytes as f64).abs() / true_bytes as f64;
        assert!(rel < 0.10, "rel err {rel}");
        let mbps = cv.stats().mbps(&cs).unwrap();
        assert!((mbps - 50.0).abs() < 5.0, "mbps {mbps}");
    }
}
