//! Sample-file aggregation into per-callsite profiles.
//!
//! Reads one run's sample files (and an optional timer log), merges records
//! by timestamp, and produces one row per callsite: CPU split, sampled
//! allocation bytes, peak/average contribution, managed fraction, copy MB/s,
//! and leak data. Renders a sorted text table or stable fixed-precision JSON.
//!
//! "Average memory" here is the time-weighted mean of a callsite's
//! cumulative sampled net contribution over the trend window - an
//! approximation derived from samples, and labeled as such in the output.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cpu::{CpuAttributor, CpuCounters};
use crate::leak::{self, LeakReportEntry, LeakScore};
use crate::logfmt::{self, LogConfig, LogError, SampleLog};
use crate::model::{Callsite, FootprintPoint, SampleKind, SampleRecord};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("no input files")]
    NoInputs,
    #[error("config mismatch across inputs: {first} vs {second}")]
    ConfigMismatch { first: String, second: String },
    #[error("unknown sort key `{0}` (expected cpu|peak_mem|copy|leak_rate)")]
    UnknownSortKey(String),
    #[error("bad profile JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Row sort order for rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SortKey {
    #[default]
    Cpu,
    PeakMem,
    Copy,
    LeakRate,
}

impl FromStr for SortKey {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cpu" => Ok(SortKey::Cpu),
            "peak_mem" => Ok(SortKey::PeakMem),
            "copy" => Ok(SortKey::Copy),
            "leak_rate" => Ok(SortKey::LeakRate),
            other => Err(ReportError::UnknownSortKey(other.to_string())),
        }
    }
}

/// Aggregated per-callsite metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct CallsiteStats {
    pub callsite: Callsite,
    pub cpu: CpuCounters,
    pub alloc_bytes_sampled: u64,
    pub peak_contribution: u64,
    pub avg_footprint_share: u64,
    pub managed_alloc_fraction: f64,
    pub copy_mbps: f64,
    pub leak: Option<LeakReportEntry>,
}

/// Document-level totals; equal to the sums over rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ProfileTotals {
    pub cpu_managed_ns: u64,
    pub cpu_native_ns: u64,
    pub alloc_bytes_sampled: u64,
    pub copy_estimated_bytes: u64,
    pub sample_count: u64,
    pub peak_footprint: u64,
}

/// The whole aggregated profile. Rows are kept in canonical callsite order;
/// renderers re-sort by the requested key.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileDocument {
    pub format_version: u32,
    pub config: LogConfig,
    pub trend: Vec<FootprintPoint>,
    pub rows: Vec<CallsiteStats>,
    pub leaks: Vec<LeakReportEntry>,
    pub totals: ProfileTotals,
    pub warnings: Vec<String>,
}

fn q6(x: f64) -> f64 {
    format!("{x:.6}").parse().unwrap_or(x)
}

/// Aggregates sample files (and an optional timer log) into a profile.
pub fn aggregate(
    sample_paths: &[impl AsRef<Path>],
    timer_log: Option<&Path>,
) -> Result<ProfileDocument, ReportError> {
    if sample_paths.is_empty() && timer_log.is_none() {
        return Err(ReportError::NoInputs);
    }
    let mut logs: Vec<SampleLog> = Vec::new();
    for path in sample_paths {
        logs.push(logfmt::read_sample_log_file(path)?);
    }
    let timer = match timer_log {
        Some(path) => Some(logfmt::read_timer_log_file(path)?),
        None => None,
    };
    aggregate_parsed(logs, timer)
}

fn aggregate_parsed(
    logs: Vec<SampleLog>,
    timer: Option<logfmt::TimerLog>,
) -> Result<ProfileDocument, ReportError> {
    let mut warnings: Vec<String> = Vec::new();
    let config = match logs.first() {
        Some(first) => {
            for other in &logs[1..] {
                // seeds may differ between files of one logical run; the
                // sampling parameters may not, they change interpretation
                let same = other.config.threshold_bytes == first.config.threshold_bytes
                    && other.config.copy_rate_multiple == first.config.copy_rate_multiple
                    && other.config.quantum_ns == first.config.quantum_ns;
                if !same {
                    return Err(ReportError::ConfigMismatch {
                        first: format!("{:?}", first.config),
                        second: format!("{:?}", other.config),
                    });
                }
                if other.config.seed != first.config.seed {
                    warnings.push("inputs were recorded with different seeds".to_string());
                }
            }
            first.config.clone()
        }
        // timer-only report: echo defaults
        None => LogConfig {
            threshold_bytes: crate::threshold::DEFAULT_SAMPLING_THRESHOLD,
            copy_rate_multiple: 2,
            quantum_ns: timer.as_ref().map_or(10_000_000, |t| t.quantum_ns),
            seed: None,
        },
    };

    // Merge records from all files by timestamp; ties break on record shape
    // so file order never matters.
    let mut samples: Vec<SampleRecord> = Vec::new();
    let mut merged_scores: BTreeMap<Callsite, LeakScore> = BTreeMap::new();
    let mut peak_footprint = 0u64;
    let mut elapsed_ns = 0u64;
    for log in &logs {
        warnings.extend(log.warnings.iter().cloned());
        samples.extend(log.samples.iter().cloned());
        for (cs, score) in &log.leak_scores {
            let entry = merged_scores.entry(cs.clone()).or_default();
            entry.mallocs += score.mallocs;
            entry.frees += score.frees;
        }
        if let Some(totals) = &log.totals {
            peak_footprint = peak_footprint.max(totals.peak_footprint);
            elapsed_ns = elapsed_ns.max(totals.elapsed_ns);
        }
    }
    samples.sort_by(|a, b| {
        (a.timestamp_ns, a.kind.as_str(), &a.callsite, a.net_delta, a.alloc_id)
            .cmp(&(b.timestamp_ns, b.kind.as_str(), &b.callsite, b.net_delta, b.alloc_id))
    });
    peak_footprint = peak_footprint.max(samples.iter().map(|s| s.peak_footprint).max().unwrap_or(0));

    let trend: Vec<FootprintPoint> = samples
        .iter()
        .filter(|s| s.kind != SampleKind::Copy)
        .map(|s| FootprintPoint {
            timestamp_ns: s.timestamp_ns,
            footprint: s.footprint,
        })
        .collect();

    let window = match (samples.first(), samples.last()) {
        (Some(first), Some(last)) => Some((first.timestamp_ns, last.timestamp_ns)),
        _ => None,
    };
    let window_secs = window
        .map(|(start, end)| (end - start) as f64 / 1e9)
        .filter(|&s| s > 0.0);
    let elapsed_secs = if elapsed_ns > 0 {
        Some(elapsed_ns as f64 / 1e9)
    } else {
        window_secs
    };

    // Per-callsite accumulation in merged time order.
    #[derive(Default)]
    struct Accum {
        alloc_bytes: u64,
        managed_weighted: f64,
        contribution: i128,
        peak_contribution: u64,
        weighted_area: f64, // contribution integrated over time
        last_ts: Option<u64>,
        copy_samples: u64,
    }
    let mut accum: BTreeMap<Callsite, Accum> = BTreeMap::new();
    let window_end = window.map(|(_, end)| end);
    for sample in &samples {
        let a = accum.entry(sample.callsite.clone()).or_default();
        match sample.kind {
            SampleKind::Copy => {
                a.copy_samples += 1;
            }
            SampleKind::Growth | SampleKind::Decline => {
                // close the previous step segment
                if let Some(last) = a.last_ts {
                    let dt = sample.timestamp_ns.saturating_sub(last) as f64;
                    a.weighted_area += a.contribution.max(0) as f64 * dt;
                }
                a.last_ts = Some(sample.timestamp_ns);
                let positive = sample.net_delta.max(0) as u64;
                a.alloc_bytes += positive;
                a.managed_weighted += sample.managed_fraction * positive as f64;
                a.contribution += sample.net_delta as i128;
                a.peak_contribution = a
                    .peak_contribution
                    .max(a.contribution.max(0) as u64);
            }
        }
    }
    // close every callsite's final segment at the window end
    if let Some(end) = window_end {
        for a in accum.values_mut() {
            if let Some(last) = a.last_ts {
                let dt = end.saturating_sub(last) as f64;
                a.weighted_area += a.contribution.max(0) as f64 * dt;
            }
        }
    }

    // CPU counters from the timer log.
    let mut cpu = CpuAttributor::new();
    if let Some(timer) = &timer {
        warnings.extend(timer.warnings.iter().cloned());
        for sample in &timer.samples {
            cpu.on_timer_sample(sample);
        }
    }

    // Leak report: merged scores, slope gate from the merged trend, rates
    // estimated from sampled allocation bytes over the run.
    let scores_map: HashMap<Callsite, LeakScore> =
        merged_scores.iter().map(|(c, s)| (c.clone(), *s)).collect();
    let rates: HashMap<Callsite, f64> = match elapsed_secs {
        Some(secs) => accum
            .iter()
            .map(|(cs, a)| {
                (cs.clone(), leak::leak_rate_mb_per_sec(a.alloc_bytes, secs).unwrap_or(0.0))
            })
            .collect(),
        None => HashMap::new(),
    };
    let leaks: Vec<LeakReportEntry> = leak::filter_leak_reports(&scores_map, &trend, &rates)
        .into_iter()
        .map(|mut e| {
            e.probability = q6(e.probability);
            e.leak_rate_mb_s = q6(e.leak_rate_mb_s);
            e
        })
        .collect();
    let leak_by_site: HashMap<&Callsite, &LeakReportEntry> =
        leaks.iter().map(|e| (&e.callsite, e)).collect();

    // One row per callsite seen anywhere.
    let mut row_sites: Vec<Callsite> = accum.keys().cloned().collect();
    for cs in cpu.counters().keys() {
        if !accum.contains_key(cs) {
            row_sites.push(cs.clone());
        }
    }
    for cs in merged_scores.keys() {
        if !accum.contains_key(cs) && !cpu.counters().contains_key(cs) {
            row_sites.push(cs.clone());
        }
    }
    row_sites.sort();
    row_sites.dedup();

    let window_total_ns = window
        .map(|(start, end)| end.saturating_sub(start))
        .unwrap_or(0);
    let r_copy = config.copy_rate();
    let mut rows: Vec<CallsiteStats> = Vec::with_capacity(row_sites.len());
    let mut totals = ProfileTotals {
        peak_footprint,
        ..Default::default()
    };
    for cs in row_sites {
        let a = accum.get(&cs);
        let cpu_counters = cpu.counters_for(&cs);
        let alloc_bytes_sampled = a.map_or(0, |a| a.alloc_bytes);
        let peak_contribution = a.map_or(0, |a| a.peak_contribution);
        let avg_footprint_share = match a {
            Some(a) if window_total_ns > 0 => {
                (a.weighted_area / window_total_ns as f64).round() as u64
            }
            // degenerate window: the final contribution stands in for the mean
            Some(a) => a.contribution.max(0) as u64,
            None => 0,
        };
        let managed_alloc_fraction = match a {
            Some(a) if a.alloc_bytes > 0 => q6(a.managed_weighted / a.alloc_bytes as f64),
            _ => 0.0,
        };
        let copy_mbps = match (a, window_secs) {
            (Some(a), Some(secs)) if a.copy_samples > 0 => {
                q6((a.copy_samples * r_copy) as f64 / (1u64 << 20) as f64 / secs)
            }
            _ => 0.0,
        };
        totals.cpu_managed_ns += cpu_counters.managed_ns;
        totals.cpu_native_ns += cpu_counters.native_ns;
        totals.alloc_bytes_sampled += alloc_bytes_sampled;
        totals.copy_estimated_bytes += a.map_or(0, |a| a.copy_samples * r_copy);
        rows.push(CallsiteStats {
            leak: leak_by_site.get(&cs).map(|e| (*e).clone()),
            callsite: cs,
            cpu: cpu_counters,
            alloc_bytes_sampled,
            peak_contribution,
            avg_footprint_share,
            managed_alloc_fraction,
            copy_mbps,
        });
    }
    totals.sample_count = samples.len() as u64;

    Ok(ProfileDocument {
        format_version: logfmt::FORMAT_VERSION,
        config,
        trend,
        rows,
        leaks,
        totals,
        warnings,
    })
}

fn sorted_rows(doc: &ProfileDocument, key: SortKey) -> Vec<&CallsiteStats> {
    let mut rows: Vec<&CallsiteStats> = doc.rows.iter().collect();
    match key {
        SortKey::Cpu => rows.sort_by(|a, b| {
            b.cpu
                .total_ns()
                .cmp(&a.cpu.total_ns())
                .then_with(|| a.callsite.cmp(&b.callsite))
        }),
        SortKey::PeakMem => rows.sort_by(|a, b| {
            b.peak_contribution
                .cmp(&a.peak_contribution)
                .then_with(|| a.callsite.cmp(&b.callsite))
        }),
        SortKey::Copy => rows.sort_by(|a, b| {
            b.copy_mbps
                .total_cmp(&a.copy_mbps)
                .then_with(|| a.callsite.cmp(&b.callsite))
        }),
        SortKey::LeakRate => rows.sort_by(|a, b| {
            let rate = |s: &CallsiteStats| s.leak.as_ref().map_or(-1.0, |l| l.leak_rate_mb_s);
            rate(b)
                .total_cmp(&rate(a))
                .then_with(|| a.callsite.cmp(&b.callsite))
        }),
    }
    rows
}

/// Renders the human-readable table.
pub fn render_text(doc: &ProfileDocument, sort: SortKey) -> String {
    use std::fmt::Write;

    let mut out = String::new();
    let seed = doc
        .config
        .seed
        .map_or_else(|| "-".to_string(), |s| s.to_string());
    let _ = writeln!(
        out,
        "heapscope profile (format v{}, threshold={} B, copy_rate={} B, quantum={} ns, seed={})",
        doc.format_version,
        doc.config.threshold_bytes,
        doc.config.copy_rate(),
        doc.config.quantum_ns,
        seed,
    );
    let _ = writeln!(
        out,
        "peak footprint: {} B over {} samples ({} trend points)",
        doc.totals.peak_footprint,
        doc.totals.sample_count,
        doc.trend.len()
    );
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<40} {:>14} {:>14} {:>14} {:>14} {:>14} {:>8} {:>10}",
        "CALLSITE",
        "CPU MANAGED s",
        "CPU NATIVE s",
        "ALLOC B",
        "PEAK B",
        "AVG B*",
        "MANAGED",
        "COPY MB/s"
    );
    for row in sorted_rows(doc, sort) {
        let _ = writeln!(
            out,
            "{:<40} {:>14.6} {:>14.6} {:>14} {:>14} {:>14} {:>8.3} {:>10.3}",
            row.callsite.to_string(),
            row.cpu.managed_seconds(),
            row.cpu.native_seconds(),
            row.alloc_bytes_sampled,
            row.peak_contribution,
            row.avg_footprint_share,
            row.managed_alloc_fraction,
            row.copy_mbps,
        );
    }
    let _ = writeln!(
        out,
        "* AVG is the time-weighted mean of sampled net contribution (sample-derived approximation)"
    );
    if !doc.leaks.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(out, "likely leaks (p > 0.95, growth slope >= 1%):");
        for leak in &doc.leaks {
            let _ = writeln!(
                out,
                "  {:<38} p={:.6} rate={:.3} MB/s score=({}, {})",
                leak.callsite.to_string(),
                leak.probability,
                leak.leak_rate_mb_s,
                leak.score.mallocs,
                leak.score.frees,
            );
        }
    }
    for warning in &doc.warnings {
        let _ = writeln!(out, "warning: {warning}");
    }
    out
}

// --- JSON mirror types: stable key order, fixed-precision strings ---------

fn f6<S: serde::Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{x:.6}"))
}

fn f6_de<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    let s = String::deserialize(d)?;
    s.parse().map_err(serde::de::Error::custom)
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct JsonConfig {
    threshold_bytes: u64,
    copy_rate_multiple: u64,
    quantum_ns: u64,
    seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct JsonPoint {
    timestamp_ns: u64,
    footprint: u64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct JsonLeak {
    file: String,
    line: u32,
    #[serde(serialize_with = "f6", deserialize_with = "f6_de")]
    probability: f64,
    #[serde(serialize_with = "f6", deserialize_with = "f6_de")]
    leak_rate_mb_s: f64,
    mallocs: u64,
    frees: u64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct JsonRow {
    file: String,
    line: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    function: Option<String>,
    #[serde(serialize_with = "f6", deserialize_with = "f6_de")]
    cpu_managed_seconds: f64,
    #[serde(serialize_with = "f6", deserialize_with = "f6_de")]
    cpu_native_seconds: f64,
    alloc_bytes_sampled: u64,
    peak_contribution: u64,
    avg_footprint_share: u64,
    #[serde(serialize_with = "f6", deserialize_with = "f6_de")]
    managed_alloc_fraction: f64,
    #[serde(serialize_with = "f6", deserialize_with = "f6_de")]
    copy_mbps: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    leak: Option<JsonLeak>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct JsonTotals {
    #[serde(serialize_with = "f6", deserialize_with = "f6_de")]
    cpu_managed_seconds: f64,
    #[serde(serialize_with = "f6", deserialize_with = "f6_de")]
    cpu_native_seconds: f64,
    alloc_bytes_sampled: u64,
    copy_estimated_bytes: u64,
    sample_count: u64,
    peak_footprint: u64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct JsonDocument {
    format_version: u32,
    config: JsonConfig,
    trend: Vec<JsonPoint>,
    rows: Vec<JsonRow>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    leaks: Vec<JsonLeak>,
    totals: JsonTotals,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    warnings: Vec<String>,
}

fn leak_to_json(e: &LeakReportEntry) -> JsonLeak {
    JsonLeak {
        file: e.callsite.file().to_string(),
        line: e.callsite.line(),
        probability: e.probability,
        leak_rate_mb_s: e.leak_rate_mb_s,
        mallocs: e.score.mallocs,
        frees: e.score.frees,
    }
}

fn leak_from_json(j: &JsonLeak) -> Result<LeakReportEntry, ReportError> {
    let callsite = Callsite::new(j.file.clone(), j.line).map_err(|e| {
        ReportError::Json(serde::de::Error::custom(format!("bad leak callsite: {e}")))
    })?;
    Ok(LeakReportEntry {
        callsite,
        probability: j.probability,
        leak_rate_mb_s: j.leak_rate_mb_s,
        score: LeakScore {
            mallocs: j.mallocs,
            frees: j.frees,
        },
    })
}

/// Machine-readable output: stable keys, fixed precision, byte-reproducible
/// for identical documents.
pub fn render_json(doc: &ProfileDocument) -> String {
    let json_doc = JsonDocument {
        format_version: doc.format_version,
        config: JsonConfig {
            threshold_bytes: doc.config.threshold_bytes,
            copy_rate_multiple: doc.config.copy_rate_multiple,
            quantum_ns: doc.config.quantum_ns,
            seed: doc.config.seed,
        },
        trend: doc
            .trend
            .iter()
            .map(|p| JsonPoint {
                timestamp_ns: p.timestamp_ns,
                footprint: p.footprint,
            })
            .collect(),
        rows: doc
            .rows
            .iter()
            .map(|r| JsonRow {
                file: r.callsite.file().to_string(),
                line: r.callsite.line(),
                function: r.callsite.function().map(str::to_string),
                cpu_managed_seconds: r.cpu.managed_seconds(),
                cpu_native_seconds: r.cpu.native_seconds(),
                alloc_bytes_sampled: r.alloc_bytes_sampled,
                peak_contribution: r.peak_contribution,
                avg_footprint_share: r.avg_footprint_share,
                managed_alloc_fraction: r.managed_alloc_fraction,
                copy_mbps: r.copy_mbps,
                leak: r.leak.as_ref().map(leak_to_json),
            })
            .collect(),
        leaks: doc.leaks.iter().map(leak_to_json).collect(),
        totals: JsonTotals {
            cpu_managed_seconds: doc.totals.cpu_managed_ns as f64 / 1e9,
            cpu_native_seconds: doc.totals.cpu_native_ns as f64 / 1e9,
            alloc_bytes_sampled: doc.totals.alloc_bytes_sampled,
            copy_estimated_bytes: doc.totals.copy_estimated_bytes,
            sample_count: doc.totals.sample_count,
            peak_footprint: doc.totals.peak_footprint,
        },
        warnings: doc.warnings.clone(),
    };
    let mut out = serde_json::to_string_pretty(&json_doc).expect("static structure");
    out.push('\n');
    out
}

/// Inverse of [`render_json`].
pub fn parse_json(text: &str) -> Result<ProfileDocument, ReportError> {
    let j: JsonDocument = serde_json::from_str(text)?;
    let bad_callsite = |e: crate::model::ModelError| {
        ReportError::Json(serde::de::Error::custom(format!("bad callsite: {e}")))
    };
    let mut rows = Vec::with_capacity(j.rows.len());
    for r in &j.rows {
        let mut callsite = Callsite::new(r.file.clone(), r.line).map_err(bad_callsite)?;
        if let Some(func) = &r.function {
            callsite = callsite.with_function(func.clone());
        }
        rows.push(CallsiteStats {
            callsite,
            cpu: CpuCounters {
                managed_ns: (r.cpu_managed_seconds * 1e9).round() as u64,
                native_ns: (r.cpu_native_seconds * 1e9).round() as u64,
            },
            alloc_bytes_sampled: r.alloc_bytes_sampled,
            peak_contribution: r.peak_contribution,
            avg_footprint_share: r.avg_footprint_share,
            managed_alloc_fraction: r.managed_alloc_fraction,
            copy_mbps: r.copy_mbps,
            leak: r.leak.as_ref().map(leak_from_json).transpose()?,
        });
    }
    Ok(ProfileDocument {
        format_version: j.format_version,
        config: LogConfig {
            threshold_bytes: j.config.threshold_bytes,
            copy_rate_multiple: j.config.copy_rate_multiple,
            quantum_ns: j.config.quantum_ns,
            seed: j.config.seed,
        },
        trend: j
            .trend
            .iter()
            .map(|p| FootprintPoint {
                timestamp_ns: p.timestamp_ns,
                footprint: p.footprint,
            })
            .collect(),
        rows,
        leaks: j.leaks.iter().map(leak_from_json).collect::<Result<_, _>>()?,
        totals: ProfileTotals {
            cpu_managed_ns: (j.totals.cpu_managed_seconds * 1e9).round() as u64,
            cpu_native_ns: (j.totals.cpu_native_seconds * 1e9).round() as u64,
            alloc_bytes_sampled: j.totals.alloc_bytes_sampled,
            copy_estimated_bytes: j.totals.copy_estimated_bytes,
            sample_count: j.totals.sample_count,
            peak_footprint: j.totals.peak_footprint,
        },
        warnings: j.warnings,
    })
}

/// Test and tooling hook: aggregate already-parsed logs.
pub fn aggregate_logs(
    logs: Vec<SampleLog>,
    timer: Option<logfmt::TimerLog>,
) -> Result<ProfileDocument, ReportError> {
    aggregate_parsed(logs, timer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logfmt::{LogTotals, SampleLogWriter};

    fn config() -> LogConfig {
        LogConfig {
            threshold_bytes: 1_048_583,
            copy_rate_multiple: 2,
            quantum_ns: 10_000_000,
            seed: None,
        }
    }

    fn growth(ts: u64, delta: u64, footprint: u64, peak: u64, cs: &Callsite) -> SampleRecord {
        SampleRecord {
            kind: SampleKind::Growth,
            timestamp_ns: ts,
            net_delta: delta as i64,
            footprint,
            peak_footprint: peak,
            managed_fraction: 0.0,
            callsite: cs.clone(),
            alloc_id: Some(ts),
        }
    }

    fn log_with(samples: Vec<SampleRecord>) -> SampleLog {
        SampleLog {
            config: config(),
            samples,
            leak_scores: Vec::new(),
            totals: Some(LogTotals::default()),
            warnings: Vec::new(),
        }
    }

    #[test]
    fn empty_file_yields_zero_rows() {
        let doc = aggregate_logs(vec![log_with(Vec::new())], None).unwrap();
        assert!(doc.rows.is_empty());
        assert!(doc.trend.is_empty());
        assert!(doc.leaks.is_empty());
        assert_eq!(doc.totals.sample_count, 0);
    }

    #[test]
    fn staircase_file_produces_one_row_with_peak_5t() {
        let t = 1_048_583u64;
        let cs = Callsite::new("stairs.rs", 10).unwrap();
        let samples: Vec<SampleRecord> = (1..=5u64)
            .map(|i| growth(i * 1000, t, i * t, i * t, &cs))
            .collect();
        let doc = aggregate_logs(vec![log_with(samples)], None).unwrap();
        assert_eq!(doc.rows.len(), 1);
        let row = &doc.rows[0];
        assert_eq!(row.peak_contribution, 5 * t);
        assert_eq!(row.alloc_bytes_sampled, 5 * t);
        // contributions T..4T over four equal segments, rounded to bytes
        let expected_avg = ((t + 2 * t + 3 * t + 4 * t) as f64 / 4.0).round() as u64;
        assert_eq!(row.avg_footprint_share, expected_avg);
        assert_eq!(doc.trend.len(), 5);
        assert_eq!(doc.totals.peak_footprint, 5 * t);
    }

    #[test]
    fn aggregation_is_order_insensitive_across_files() {
        let a = Callsite::new("a.rs", 1).unwrap();
        let b = Callsite::new("b.rs", 2).unwrap();
        let log1 = log_with(vec![growth(1000, 10, 10, 10, &a), growth(3000, 30, 60, 60, &a)]);
        let log2 = log_with(vec![growth(2000, 20, 30, 30, &b)]);
        let doc_ab = aggregate_logs(vec![log1.clone(), log2.clone()], None).unwrap();
        let doc_ba = aggregate_logs(vec![log2, log1], None).unwrap();
        assert_eq!(doc_ab, doc_ba);
        assert_eq!(render_json(&doc_ab), render_json(&doc_ba));
    }

    #[test]
    fn json_is_reproducible_and_round_trips() {
        let cs = Callsite::new("x.rs", 3).unwrap();
        let doc = aggregate_logs(
            vec![log_with(vec![growth(1, 7, 7, 7, &cs), growth(500, 9, 16, 16, &cs)])],
            None,
        )
        .unwrap();
        let one = render_json(&doc);
        let two = render_json(&doc);
        assert_eq!(one, two);
        let parsed = parse_json(&one).unwrap();
        assert_eq!(parsed, doc);
        assert_eq!(render_json(&parsed), one);
        // empty leak report serializes as an absent key
        assert!(!one.contains("\"leaks\""));
    }

    #[test]
    fn sort_contracts() {
        let a = Callsite::new("a.rs", 1).unwrap();
        let b = Callsite::new("b.rs", 2).unwrap();
        let mk = |cs: &Callsite, native_ns: u64, peak: u64| CallsiteStats {
            callsite: cs.clone(),
            cpu: CpuCounters { managed_ns: 0, native_ns },
            alloc_bytes_sampled: 0,
            peak_contribution: peak,
            avg_footprint_share: 0,
            managed_alloc_fraction: 0.0,
            copy_mbps: 0.0,
            leak: None,
        };
        let doc = ProfileDocument {
            format_version: 1,
            config: config(),
            trend: Vec::new(),
            rows: vec![mk(&a, 800_000_000, 5), mk(&b, 200_000_000, 50)],
            leaks: Vec::new(),
            totals: ProfileTotals::default(),
            warnings: Vec::new(),
        };
        let by_cpu = sorted_rows(&doc, SortKey::Cpu);
        assert_eq!(by_cpu[0].callsite, a);
        let by_peak = sorted_rows(&doc, SortKey::PeakMem);
        assert_eq!(by_peak[0].callsite, b);
        assert!(matches!("cpu".parse::<SortKey>(), Ok(SortKey::Cpu)));
        assert!(matches!(
            "bogus".parse::<SortKey>(),
            Err(ReportError::UnknownSortKey(_))
        ));
    }

    #[test]
    fn config_mismatch_is_refused() {
        let mut other = log_with(Vec::new());
        other.config.threshold_bytes = 11;
        let err = aggregate_logs(vec![log_with(Vec::new()), other], None).unwrap_err();
        assert!(matches!(err, ReportError::ConfigMismatch { .. }));

        // seeds do not change interpretation; differing ones only warn
        let mut reseeded = log_with(Vec::new());
        reseeded.config.seed = Some(99);
        let doc = aggregate_logs(vec![log_with(Vec::new()), reseeded], None).unwrap();
        assert!(doc.warnings.iter().any(|w| w.contains("different seeds")));
    }

    #[test]
    fn cpu_totals_equal_timer_log_attribution() {
        use crate::cpu::{FrameInfo, TimerSample};
        let cs = Callsite::new("hot.rs", 9).unwrap();
        let samples: Vec<TimerSample> = (0..10)
            .map(|_| TimerSample {
                elapsed_virtual_ns: 50_000_000,
                quantum_ns: 10_000_000,
                main_stack: vec![FrameInfo {
                    callsite: cs.clone(),
                    in_profiled_code: true,
                }],
                thread_snapshots: Vec::new(),
            })
            .collect();
        let timer = logfmt::TimerLog {
            quantum_ns: 10_000_000,
            samples,
            warnings: Vec::new(),
        };
        let doc = aggregate_logs(vec![log_with(Vec::new())], Some(timer)).unwrap();
        let row = doc.rows.iter().find(|r| r.callsite == cs).unwrap();
        assert_eq!(row.cpu.managed_ns, 100_000_000);
        assert_eq!(row.cpu.native_ns, 400_000_000);
        let total: u64 = doc.totals.cpu_managed_ns + doc.totals.cpu_native_ns;
        assert_eq!(total, 10 * 50_000_000);
    }

    #[test]
    fn truncated_input_surfaces_a_warning() {
        let mut w = SampleLogWriter::new(Vec::new(), &config()).unwrap();
        let cs = Callsite::new("t.rs", 1).unwrap();
        w.write_sample(&growth(1, 5, 5, 5, &cs)).unwrap();
        w.write_sample(&growth(2, 6, 11, 11, &cs)).unwrap();
        let mut bytes = w.into_inner();
        bytes.truncate(bytes.len() - 3);
        let log = crate::logfmt::read_sample_log(&bytes[..], "x.log").unwrap();
        let doc = aggregate_logs(vec![log], None).unwrap();
        assert_eq!(doc.rows[0].alloc_bytes_sampled, 5);
        assert!(doc.warnings.iter().any(|w| w.contains("truncated")));
    }
}
