//! Sampled memory-leak detection.
//!
//! Piggybacks on threshold sampling: whenever a growth sample sets a new
//! high-water mark, the detector settles the previously tracked allocation
//! (crediting a reclamation only if its free was observed) and starts
//! tracking the allocation that triggered the new mark. Per-callsite
//! `(mallocs, frees)` scores feed a Rule-of-Succession leak probability;
//! reports are gated on overall footprint growth and sorted by leak rate.

use std::collections::HashMap;

use thiserror::Error;

use crate::model::{Callsite, FootprintPoint, SampleKind, SampleRecord};

/// Minimum leak probability for a report entry (strictly exceeded).
pub const LEAK_PROBABILITY_THRESHOLD: f64 = 0.95;
/// Minimum relative footprint growth over the profiling window.
pub const GROWTH_SLOPE_MIN: f64 = 0.01;

/// Tracking-episode history for one callsite: `mallocs` counts episodes
/// started, `frees` counts tracked objects seen reclaimed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LeakScore {
    pub mallocs: u64,
    pub frees: u64,
}

/// Which probability formula to apply to a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProbabilityModel {
    /// `1 - (frees + 1) / (mallocs - frees + 2)`, clamped to [0, 1].
    #[default]
    AsPrinted,
    /// Textbook Rule of Succession: `1 - (frees + 1) / (mallocs + 2)`.
    Standard,
}

/// Leak probability under the default (as-printed) formula.
pub fn leak_probability(score: LeakScore) -> f64 {
    leak_probability_with(ProbabilityModel::AsPrinted, score)
}

pub fn leak_probability_with(model: ProbabilityModel, score: LeakScore) -> f64 {
    let frees = score.frees as f64;
    let mallocs = score.mallocs as f64;
    let raw = match model {
        ProbabilityModel::AsPrinted => 1.0 - (frees + 1.0) / (mallocs - frees + 2.0),
        ProbabilityModel::Standard => 1.0 - (frees + 1.0) / (mallocs + 2.0),
    };
    raw.clamp(0.0, 1.0)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LeakError {
    #[error("growth slope needs at least 2 trend points")]
    UndefinedSlope,
    #[error("elapsed time must be positive")]
    NonPositiveElapsed,
}

/// Relative footprint growth over the profiling window:
/// `(last - first) / max(first, 1)`. Negative when footprint declined.
pub fn growth_slope(trend: &[FootprintPoint]) -> Result<f64, LeakError> {
    if trend.len() < 2 {
        return Err(LeakError::UndefinedSlope);
    }
    let first = trend.first().unwrap().footprint;
    let last = trend.last().unwrap().footprint;
    Ok((last as f64 - first as f64) / first.max(1) as f64)
}

/// Bytes allocated at a callsite over elapsed time, in MB/s (MB = 2^20).
pub fn leak_rate_mb_per_sec(total_alloc_bytes: u64, elapsed_secs: f64) -> Result<f64, LeakError> {
    if !elapsed_secs.is_finite() || elapsed_secs <= 0.0 {
        return Err(LeakError::NonPositiveElapsed);
    }
    Ok(total_alloc_bytes as f64 / (1u64 << 20) as f64 / elapsed_secs)
}

/// The single allocation currently under observation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedAllocation {
    pub alloc_id: u64,
    pub callsite: Callsite,
    pub tracked_since_ns: u64,
    pub reclaimed: bool,
}

/// One row of a filtered leak report.
#[derive(Debug, Clone, PartialEq)]
pub struct LeakReportEntry {
    pub callsite: Callsite,
    pub probability: f64,
    pub leak_rate_mb_s: f64,
    pub score: LeakScore,
}

/// Detector state: at most one tracked allocation at any instant, plus the
/// per-callsite score table.
#[derive(Debug, Clone, Default)]
pub struct LeakDetector {
    tracked: Option<TrackedAllocation>,
    scores: HashMap<Callsite, LeakScore>,
    peak_seen: u64,
    free_checks: u64,
}

impl LeakDetector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reacts to a growth sample. On a new high-water mark: settle the
    /// current tracked allocation (increment its callsite's `frees` only if
    /// it was reclaimed), then start tracking the triggering allocation,
    /// incrementing that callsite's `mallocs`. Below the mark: no change.
    pub fn on_growth_sample(&mut self, sample: &SampleRecord) {
        debug_assert_eq!(sample.kind, SampleKind::Growth);
        if sample.kind != SampleKind::Growth || sample.footprint <= self.peak_seen {
            return;
        }
        self.peak_seen = sample.footprint;
        let Some(alloc_id) = sample.alloc_id else {
            // Growth samples are triggered by allocations and carry an id;
            // tolerate records that lost it rather than mis-track.
            return;
        };
        if let Some(done) = self.tracked.take() {
            if done.reclaimed {
                self.scores.entry(done.callsite).or_default().frees += 1;
            }
        }
        self.scores
            .entry(sample.callsite.clone())
            .or_default()
            .mallocs += 1;
        self.tracked = Some(TrackedAllocation {
            alloc_id,
            callsite: sample.callsite.clone(),
            tracked_since_ns: sample.timestamp_ns,
            reclaimed: false,
        });
    }

    /// Free-path hook: one identity comparison, no heap mutation.
    #[inline]
    pub fn on_free(&mut self, alloc_id: u64) {
        self.free_checks += 1;
        if let Some(tracked) = &mut self.tracked {
            if tracked.alloc_id == alloc_id {
                tracked.reclaimed = true;
            }
        }
    }

    pub fn scores(&self) -> &HashMap<Callsite, LeakScore> {
        &self.scores
    }

    pub fn tracked(&self) -> Option<&TrackedAllocation> {
        self.tracked.as_ref()
    }

    /// Instrumentation: number of free-path identity checks performed.
    pub fn free_checks(&self) -> u64 {
        self.free_checks
    }

    /// Filtered report using the detector's own scores.
    pub fn report(
        &self,
        trend: &[FootprintPoint],
        rates: &HashMap<Callsite, f64>,
    ) -> Vec<LeakReportEntry> {
        filter_leak_reports(&self.scores, trend, rates)
    }
}

/// Builds the filtered, prioritized leak report: empty unless overall
/// footprint grew by at least 1% over the window; entries must strictly
/// exceed the 95% probability threshold; sorted by leak rate descending.
pub fn filter_leak_reports(
    scores: &HashMap<Callsite, LeakScore>,
    trend: &[FootprintPoint],
    rates: &HashMap<Callsite, f64>,
) -> Vec<LeakReportEntry> {
    filter_leak_reports_with(ProbabilityModel::AsPrinted, scores, trend, rates)
}

pub fn filter_leak_reports_with(
    model: ProbabilityModel,
    scores: &HashMap<Callsite, LeakScore>,
    trend: &[FootprintPoint],
    rates: &HashMap<Callsite, f64>,
) -> Vec<LeakReportEntry> {
    match growth_slope(trend) {
        Ok(slope) if slope >= GROWTH_SLOPE_MIN => {}
        _ => return Vec::new(),
    }
    let mut entries: Vec<LeakReportEntry> = scores
        .iter()
        .filter_map(|(callsite, &score)| {
            let probability = leak_probability_with(model, score);
            if probability > LEAK_PROBABILITY_THRESHOLD {
                Some(LeakReportEntry {
                    callsite: callsite.clone(),
                    probability,
                    leak_rate_mb_s: rates.get(callsite).copied().unwrap_or(0.0),
                    score,
                })
            } else {
                None
            }
        })
        .collect();
    entries.sort_by(|a, b| {
        b.leak_rate_mb_s
            .total_cmp(&a.leak_rate_mb_s)
            .then_with(|| a.callsite.cmp(&b.callsite))
    });
    entries
}
