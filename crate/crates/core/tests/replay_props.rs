//! Property tests over the public replay and format APIs.

use proptest::prelude::*;

use heapscope::logfmt::{self, LogConfig, LogTotals, SampleLogWriter};
use heapscope::model::{
    validate_event_stream, AllocEvent, Callsite, DomainTag, EventKind, ProfilerConfig,
    SampleKind, SampleRecord, ThreadId,
};
use heapscope::rate::RateSampler;
use heapscope::replay::{replay, FootprintOracle};
use heapscope::threshold::choose_sampling_threshold;

/// Valid event streams: interleaved allocs and frees of live ids.
fn arb_trace(max_events: usize) -> impl Strategy<Value = Vec<AllocEvent>> {
    (
        proptest::collection::vec((1u64..=64 * 1024, 0u8..=255), 1..max_events),
        any::<u64>(),
    )
        .prop_map(|(raw, _seed)| {
            let mut events = Vec::with_capacity(raw.len());
            let mut live: Vec<(u64, u64)> = Vec::new();
            let mut next_id = 1u64;
            for (i, (size, action)) in raw.into_iter().enumerate() {
                let callsite = Callsite::new("prop.rs", 1 + (action as u32 % 5)).unwrap();
                let timestamp_ns = (i as u64 + 1) * 10;
                // bias towards allocation so footprints actually move
                if live.is_empty() || action < 160 {
                    events.push(AllocEvent {
                        kind: EventKind::Alloc,
                        size,
                        alloc_id: next_id,
                        domain: if action % 2 == 0 {
                            DomainTag::Native
                        } else {
                            DomainTag::Managed
                        },
                        callsite,
                        timestamp_ns,
                        thread: ThreadId(0),
                    });
                    live.push((next_id, size));
                    next_id += 1;
                } else {
                    let pick = action as usize % live.len();
                    let (id, sz) = live.swap_remove(pick);
                    events.push(AllocEvent {
                        kind: EventKind::Free,
                        size: sz,
                        alloc_id: id,
                        domain: DomainTag::Native,
                        callsite,
                        timestamp_ns,
                        thread: ThreadId(0),
                    });
                }
            }
            events
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Incremental footprint equals full rescan at every prefix.
    #[test]
    fn oracle_incremental_matches_rescan(events in arb_trace(300)) {
        prop_assert!(validate_event_stream(&events).is_ok());
        let mut oracle = FootprintOracle::new();
        for event in &events {
            oracle.apply(event);
            prop_assert_eq!(oracle.footprint(), oracle.rescan());
        }
    }

    /// Step-reconstructed footprint never drifts a full threshold away from
    /// the truth, and every sample's footprint is exact.
    #[test]
    fn reconstruction_bound_holds(events in arb_trace(400), base in 4096u64..1_048_576) {
        let config = ProfilerConfig {
            threshold_bytes: choose_sampling_threshold(base),
            ..ProfilerConfig::default()
        };
        let result = replay(&events, &config).unwrap();
        prop_assert!(result.max_reconstruction_error < config.threshold_bytes);
        for sample in &result.threshold_samples {
            prop_assert!(sample.net_delta.unsigned_abs() >= config.threshold_bytes);
        }
    }

    /// Deterministic rate sampling depends only on total bytes, not on how
    /// the stream is chopped into events.
    #[test]
    fn rate_sampler_is_split_invariant(
        chunks in proptest::collection::vec(0u64..100_000, 1..50),
        rate in 1u64..10_000,
    ) {
        let total: u64 = chunks.iter().sum();
        let mut split = RateSampler::from_seed(rate, None).unwrap();
        let split_count: u64 = chunks.iter().map(|&n| split.record_bytes(n)).sum();
        let mut whole = RateSampler::from_seed(rate, None).unwrap();
        let whole_count = whole.record_bytes(total);
        prop_assert_eq!(split_count, whole_count);
        prop_assert_eq!(split_count, total / rate);
    }

    /// Sample records survive the wire format byte-exactly, including
    /// hostile file names.
    #[test]
    fn sample_log_round_trip(
        kind_pick in 0u8..3,
        timestamp_ns in any::<u64>(),
        net_delta in any::<i64>(),
        footprint in 0u64..1 << 48,
        extra in 0u64..1 << 16,
        fraction_millionths in 0u64..=1_000_000,
        file in "[ -~\t]{1,40}",
        line in 1u32..100_000,
        alloc_id in proptest::option::of(any::<u64>()),
    ) {
        let kind = match kind_pick {
            0 => SampleKind::Growth,
            1 => SampleKind::Decline,
            _ => SampleKind::Copy,
        };
        let record = SampleRecord {
            kind,
            timestamp_ns,
            net_delta,
            footprint,
            peak_footprint: footprint + extra,
            managed_fraction: fraction_millionths as f64 / 1e6,
            callsite: Callsite::new(file, line).unwrap(),
            alloc_id,
        };
        let config = LogConfig {
            threshold_bytes: 11,
            copy_rate_multiple: 2,
            quantum_ns: 1,
            seed: None,
        };
        let mut writer = SampleLogWriter::new(Vec::new(), &config).unwrap();
        writer.write_sample(&record).unwrap();
        let bytes = writer.finish(&LogTotals::default()).unwrap();
        let log = logfmt::read_sample_log(&bytes[..], "prop.log").unwrap();
        prop_assert_eq!(&log.samples, &vec![record]);
    }
}
