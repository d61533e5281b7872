//! Deterministic replay laboratory.
//!
//! Replays one event stream through three observers at once: an exact
//! footprint oracle (live-allocation map, independent of the samplers'
//! counter arithmetic), the threshold sampler with the leak detector behind
//! it, and the classical rate sampler as the comparison baseline. The result
//! carries everything the sampling-reduction, accuracy, and leak experiments
//! need.

use std::collections::HashMap;

use thiserror::Error;

use crate::copyvol::CopyVolumeSampler;
use crate::leak::{leak_rate_mb_per_sec, LeakDetector, LeakReportEntry, LeakScore};
use crate::logfmt::{LogConfig, LogTotals, SampleLogWriter};
use crate::model::{
    AllocEvent, Callsite, EventKind, FootprintPoint, ProfilerConfig, SampleKind, SampleRecord,
    StreamViolation,
};
use crate::rate::RateSampler;
use crate::threshold::ThresholdSampler;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("invalid trace: {0}")]
    InvalidTrace(#[from] StreamViolation),
    #[error("invalid config: {0}")]
    InvalidConfig(#[from] crate::model::ModelError),
    #[error("rate sampler: {0}")]
    Rate(#[from] crate::rate::RateError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Exact footprint accounting over a validated stream, kept separate from
/// the sampler's counters on purpose: the two must always agree.
#[derive(Debug, Clone, Default)]
pub struct FootprintOracle {
    live: HashMap<u64, u64>,
    footprint: u64,
    peak: u64,
}

impl FootprintOracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn apply(&mut self, event: &AllocEvent) {
        match event.kind {
            EventKind::Alloc => {
                self.live.insert(event.alloc_id, event.size);
                self.footprint += event.size;
                self.peak = self.peak.max(self.footprint);
            }
            EventKind::Free => {
                if let Some(size) = self.live.remove(&event.alloc_id) {
                    self.footprint -= size;
                }
            }
            EventKind::Copy => {}
        }
    }

    pub fn footprint(&self) -> u64 {
        self.footprint
    }

    pub fn peak(&self) -> u64 {
        self.peak
    }

    pub fn live_allocations(&self) -> usize {
        self.live.len()
    }

    /// Recomputes the footprint by full rescan of the live map.
    pub fn rescan(&self) -> u64 {
        self.live.values().sum()
    }
}

/// Everything measured over one replayed trace.
#[derive(Debug, Clone)]
pub struct ReplayResult {
    pub threshold_bytes: u64,
    pub event_count: u64,
    /// Exact footprint after every event.
    pub true_footprint_series: Vec<FootprintPoint>,
    pub threshold_samples: Vec<SampleRecord>,
    pub copy_samples: Vec<SampleRecord>,
    pub rate_sample_count: u64,
    /// Max |true - step-reconstructed| footprint over all event boundaries.
    pub max_reconstruction_error: u64,
    pub peak_footprint: u64,
    pub final_footprint: u64,
    pub elapsed_ns: u64,
    pub leak_scores: Vec<(Callsite, LeakScore)>,
    pub leak_report: Vec<LeakReportEntry>,
    pub copy_sample_count: u64,
}

impl ReplayResult {
    pub fn threshold_sample_count(&self) -> u64 {
        self.threshold_samples.len() as u64
    }

    /// Footprint trend as sampled (one point per growth/decline sample).
    pub fn sampled_trend(&self) -> Vec<FootprintPoint> {
        self.threshold_samples
            .iter()
            .map(|s| FootprintPoint {
                timestamp_ns: s.timestamp_ns,
                footprint: s.footprint,
            })
            .collect()
    }
}

fn derived_seed(seed: u64) -> u64 {
    // second stream for the baseline sampler
    seed ^ 0x9E37_79B9_7F4A_7C15
}

struct ReplayRun {
    result: ReplayResult,
    rate_records: Vec<SampleRecord>,
}

fn replay_internal(
    events: &[AllocEvent],
    config: &ProfilerConfig,
    collect_rate_records: bool,
) -> Result<ReplayRun, ReplayError> {
    crate::model::validate_event_stream(events)?;
    config.validate()?;

    let threshold = config.threshold_bytes;
    let mut oracle = FootprintOracle::new();
    let mut sampler = ThresholdSampler::new(threshold);
    let mut detector = LeakDetector::new();
    let mut rate = RateSampler::from_seed(
        threshold,
        config.deterministic_rng_seed.map(derived_seed),
    )?;
    let mut copies = CopyVolumeSampler::new(
        config.copy_rate(),
        config.deterministic_rng_seed,
    )?;

    let mut true_series = Vec::with_capacity(events.len());
    let mut samples = Vec::new();
    let mut copy_samples = Vec::new();
    let mut rate_records = Vec::new();
    let mut alloc_bytes: HashMap<Callsite, u64> = HashMap::new();
    let mut max_err = 0u64;
    let mut last_sampled_footprint = 0u64;

    for event in events {
        oracle.apply(event);
        match event.kind {
            EventKind::Copy => {
                let mut records = copies.record_copy(event.size, &event.callsite, event.timestamp_ns);
                for r in &mut records {
                    r.footprint = oracle.footprint();
                    r.peak_footprint = oracle.peak();
                }
                copy_samples.extend(records);
                // copies never touch the threshold or baseline samplers
            }
            EventKind::Alloc | EventKind::Free => {
                if event.kind == EventKind::Alloc {
                    *alloc_bytes.entry(event.callsite.clone()).or_default() += event.size;
                } else {
                    detector.on_free(event.alloc_id);
                }

                // the baseline counts allocated and freed bytes alike
                let emitted = rate.record_bytes(event.size);
                if collect_rate_records && emitted > 0 {
                    for _ in 0..emitted {
                        rate_records.push(SampleRecord {
                            kind: SampleKind::Growth,
                            timestamp_ns: event.timestamp_ns,
                            net_delta: threshold.min(i64::MAX as u64) as i64,
                            footprint: oracle.footprint(),
                            peak_footprint: oracle.peak(),
                            managed_fraction: 0.0,
                            callsite: event.callsite.clone(),
                            alloc_id: Some(event.alloc_id),
                        });
                    }
                }

                if let Some(sample) = sampler.record_event(event).expect("copy filtered above") {
                    if sample.kind == SampleKind::Growth {
                        detector.on_growth_sample(&sample);
                    }
                    last_sampled_footprint = sample.footprint;
                    debug_assert_eq!(sample.footprint, oracle.footprint());
                    samples.push(sample);
                }
            }
        }

        true_series.push(FootprintPoint {
            timestamp_ns: event.timestamp_ns,
            footprint: oracle.footprint(),
        });
        let err = oracle.footprint().abs_diff(last_sampled_footprint);
        max_err = max_err.max(err);
    }

    // two independent footprint computations must agree at the end too
    debug_assert_eq!(sampler.footprint(), oracle.footprint());
    debug_assert_eq!(sampler.peak_footprint(), oracle.peak());

    let elapsed_ns = match (events.first(), events.last()) {
        (Some(first), Some(last)) => last.timestamp_ns - first.timestamp_ns,
        _ => 0,
    };
    let elapsed_secs = elapsed_ns as f64 / 1e9;
    let rates: HashMap<Callsite, f64> = if elapsed_secs > 0.0 {
        alloc_bytes
            .iter()
            .map(|(cs, &bytes)| {
                (cs.clone(), leak_rate_mb_per_sec(bytes, elapsed_secs).unwrap())
            })
            .collect()
    } else {
        HashMap::new()
    };
    let leak_report = detector.report(sampler.trend_series(), &rates);
    let mut leak_scores: Vec<(Callsite, LeakScore)> = detector
        .scores()
        .iter()
        .map(|(cs, &score)| (cs.clone(), score))
        .collect();
    leak_scores.sort_by(|a, b| a.0.cmp(&b.0));

    let copy_sample_count = copies.stats().total_samples();
    let result = ReplayResult {
        threshold_bytes: threshold,
        event_count: events.len() as u64,
        true_footprint_series: true_series,
        threshold_samples: samples,
        copy_samples,
        rate_sample_count: rate.samples_emitted(),
        max_reconstruction_error: max_err,
        peak_footprint: oracle.peak(),
        final_footprint: oracle.footprint(),
        elapsed_ns,
        leak_scores,
        leak_report,
        copy_sample_count,
    };
    Ok(ReplayRun {
        result,
        rate_records,
    })
}

/// Replays a validated trace through the oracle and both samplers.
pub fn replay(events: &[AllocEvent], config: &ProfilerConfig) -> Result<ReplayResult, ReplayError> {
    Ok(replay_internal(events, config, false)?.result)
}

/// Serializes both samplers' outputs in the sample-file format and returns
/// `(threshold_log_bytes, rate_log_bytes)`.
pub fn compare_log_sizes(
    events: &[AllocEvent],
    config: &ProfilerConfig,
) -> Result<(u64, u64), ReplayError> {
    let run = replay_internal(events, config, true)?;
    let log_config = LogConfig {
        threshold_bytes: config.threshold_bytes,
        copy_rate_multiple: config.copy_rate_multiple,
        quantum_ns: config.quantum_ns(),
        seed: config.deterministic_rng_seed,
    };
    let serialize = |records: &[SampleRecord], samples: u64| -> Result<u64, ReplayError> {
        let mut w = SampleLogWriter::new(Vec::new(), &log_config)?;
        for r in records {
            w.write_sample(r)?;
        }
        let totals = LogTotals {
            events: run.result.event_count,
            samples,
            peak_footprint: run.result.peak_footprint,
            elapsed_ns: run.result.elapsed_ns,
            ..Default::default()
        };
        Ok(w.finish(&totals)?.len() as u64)
    };
    let threshold_bytes = serialize(
        &run.result.threshold_samples,
        run.result.threshold_sample_count(),
    )?;
    let rate_bytes = serialize(&run.rate_records, run.result.rate_sample_count)?;
    Ok((threshold_bytes, rate_bytes))
}

/// Stable fixed-precision JSON rendering of a replay result; byte-identical
/// for identical (trace, config) inputs.
pub fn render_replay_json(result: &ReplayResult) -> String {
    use serde_json::{json, Map, Value};

    let sample_json = |s: &SampleRecord| -> Value {
        json!({
            "kind": s.kind.as_str(),
            "timestamp_ns": s.timestamp_ns,
            "net_delta": s.net_delta,
            "footprint": s.footprint,
            "peak_footprint": s.peak_footprint,
            "managed_fraction": format!("{:.6}", s.managed_fraction),
            "file": s.callsite.file(),
            "line": s.callsite.line(),
            "alloc_id": s.alloc_id,
        })
    };
    let mut root = Map::new();
    root.insert("threshold_bytes".into(), json!(result.threshold_bytes));
    root.insert("event_count".into(), json!(result.event_count));
    root.insert(
        "threshold_sample_count".into(),
        json!(result.threshold_sample_count()),
    );
    root.insert("rate_sample_count".into(), json!(result.rate_sample_count));
    root.insert("copy_sample_count".into(), json!(result.copy_sample_count));
    root.insert(
        "max_reconstruction_error".into(),
        json!(result.max_reconstruction_error),
    );
    root.insert("peak_footprint".into(), json!(result.peak_footprint));
    root.insert("final_footprint".into(), json!(result.final_footprint));
    root.insert("elapsed_ns".into(), json!(result.elapsed_ns));
    root.insert(
        "samples".into(),
        Value::Array(result.threshold_samples.iter().map(sample_json).collect()),
    );
    root.insert(
        "copy_samples".into(),
        Value::Array(result.copy_samples.iter().map(sample_json).collect()),
    );
    root.insert(
        "leak_scores".into(),
        Value::Array(
            result
                .leak_scores
                .iter()
                .map(|(cs, score)| {
                    json!({
                        "file": cs.file(),
                        "line": cs.line(),
                        "mallocs": score.mallocs,
                        "frees": score.frees,
                    })
                })
                .collect(),
        ),
    );
    root.insert(
        "leaks".into(),
        Value::Array(
            result
                .leak_report
                .iter()
                .map(|e| {
                    json!({
                        "file": e.callsite.file(),
                        "line": e.callsite.line(),
                        "probability": format!("{:.6}", e.probability),
                        "leak_rate_mb_s": format!("{:.6}", e.leak_rate_mb_s),
                        "mallocs": e.score.mallocs,
                        "frees": e.score.frees,
                    })
                })
                .collect(),
        ),
    );
    let mut out = serde_json::to_string_pretty(&Value::Object(root)).expect("static structure");
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracegen::{generate_trace, staircase_site, TraceSpec};

    fn config(threshold: u64) -> ProfilerConfig {
        ProfilerConfig {
            threshold_bytes: crate::threshold::choose_sampling_threshold(threshold),
            ..ProfilerConfig::default()
        }
    }

    #[test]
    fn staircase_emits_one_sample_per_step_for_both_samplers() {
        let t = crate::threshold::choose_sampling_threshold(1 << 20);
        let events =
            generate_trace(&TraceSpec::Staircase { steps: 5, step_bytes: t }).unwrap();
        let result = replay(&events, &config(t)).unwrap();
        assert_eq!(result.threshold_sample_count(), 5);
        assert_eq!(result.rate_sample_count, 5);
        assert_eq!(result.peak_footprint, 5 * t);
        assert_eq!(result.max_reconstruction_error, 0);
        let footprints: Vec<u64> = result
            .threshold_samples
            .iter()
            .map(|s| s.footprint)
            .collect();
        assert_eq!(footprints, vec![t, 2 * t, 3 * t, 4 * t, 5 * t]);
        assert!(result
            .threshold_samples
            .iter()
            .all(|s| s.callsite == staircase_site()));
    }

    #[test]
    fn oracle_matches_incremental_footprint_and_rescan() {
        let events = generate_trace(&TraceSpec::Random {
            events: 3000,
            seed: 17,
            max_size: 8192,
            callsites: 4,
        })
        .unwrap();
        let mut oracle = FootprintOracle::new();
        for (i, e) in events.iter().enumerate() {
            oracle.apply(e);
            if i % 97 == 0 {
                assert_eq!(oracle.footprint(), oracle.rescan());
            }
        }
        assert_eq!(oracle.footprint(), oracle.rescan());
    }

    #[test]
    fn reconstruction_error_stays_under_threshold_on_random_traces() {
        for seed in 0..50 {
            let events = generate_trace(&TraceSpec::Random {
                events: 2000,
                seed,
                max_size: 64 * 1024,
                callsites: 6,
            })
            .unwrap();
            let cfg = config(1 << 20);
            let result = replay(&events, &cfg).unwrap();
            assert!(
                result.max_reconstruction_error < cfg.threshold_bytes,
                "seed {seed}: err {} >= T {}",
                result.max_reconstruction_error,
                cfg.threshold_bytes
            );
        }
    }

    #[test]
    fn sample_footprints_equal_oracle_exactly() {
        let events = generate_trace(&TraceSpec::Random {
            events: 4000,
            seed: 3,
            max_size: 1 << 20,
            callsites: 3,
        })
        .unwrap();
        let cfg = config(1 << 20);
        let result = replay(&events, &cfg).unwrap();
        assert!(result.threshold_sample_count() > 0, "trace too tame");
        // cross-check each sample's footprint against the true series
        let by_ts: std::collections::HashMap<u64, u64> = result
            .true_footprint_series
            .iter()
            .map(|p| (p.timestamp_ns, p.footprint))
            .collect();
        for s in &result.threshold_samples {
            assert_eq!(by_ts[&s.timestamp_ns], s.footprint);
        }
    }

    #[test]
    fn invalid_trace_is_rejected_with_index() {
        use crate::model::{AllocEvent, DomainTag, EventKind, ThreadId};
        let events = vec![AllocEvent {
            kind: EventKind::Free,
            size: 8,
            alloc_id: 1,
            domain: DomainTag::Native,
            callsite: staircase_site(),
            timestamp_ns: 0,
            thread: ThreadId(0),
        }];
        match replay(&events, &config(1024)) {
            Err(ReplayError::InvalidTrace(v)) => assert_eq!(v.index, 0),
            other => panic!("expected InvalidTrace, got {other:?}"),
        }
    }

    #[test]
    fn replay_is_deterministic_byte_for_byte() {
        let spec = TraceSpec::Random {
            events: 2500,
            seed: 21,
            max_size: 1 << 19,
            callsites: 5,
        };
        let events = generate_trace(&spec).unwrap();
        let mut cfg = config(1 << 18);
        cfg.deterministic_rng_seed = Some(77);
        let a = render_replay_json(&replay(&events, &cfg).unwrap());
        let b = render_replay_json(&replay(&events, &cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn empty_trace_log_is_header_and_footer_only() {
        let cfg = config(1024);
        let (t_bytes, r_bytes) = compare_log_sizes(&[], &cfg).unwrap();
        assert_eq!(t_bytes, r_bytes);
        let result = replay(&[], &cfg).unwrap();
        assert_eq!(result.event_count, 0);
        assert_eq!(result.threshold_sample_count(), 0);
    }

    #[test]
    fn staircase_logs_have_equal_record_counts() {
        let t = crate::threshold::choose_sampling_threshold(1 << 16);
        let events =
            generate_trace(&TraceSpec::Staircase { steps: 4, step_bytes: t }).unwrap();
        let run = replay_internal(&events, &config(t), true).unwrap();
        assert_eq!(
            run.result.threshold_sample_count(),
            run.rate_records.len() as u64
        );
    }

    #[test]
    fn copy_events_flow_to_the_copy_sampler_only() {
        use crate::model::{AllocEvent, DomainTag, EventKind, ThreadId};
        let cfg = ProfilerConfig {
            threshold_bytes: crate::threshold::choose_sampling_threshold(1024),
            copy_rate_multiple: 2,
            ..ProfilerConfig::default()
        };
        let site = staircase_site();
        let copy_bytes = cfg.copy_rate();
        let events = vec![AllocEvent {
            kind: EventKind::Copy,
            size: copy_bytes,
            alloc_id: 0,
            domain: DomainTag::Native,
            callsite: site,
            timestamp_ns: 1000,
            thread: ThreadId(0),
        }];
        let result = replay(&events, &cfg).unwrap();
        assert_eq!(result.copy_sample_count, 1);
        assert!(result.threshold_samples.is_empty());
        assert_eq!(result.copy_samples.len(), 1);
        assert_eq!(result.copy_samples[0].kind, SampleKind::Copy);
        assert_eq!(result.rate_sample_count, 0);
        // copies do not move footprint
        assert_eq!(result.final_footprint, 0);
    }
}
