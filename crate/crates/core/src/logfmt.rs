//! Line-delimited on-disk formats shared by the shim, the replay harness,
//! and the report tooling.
//!
//! All three formats are UTF-8, one record per `\n`-terminated line,
//! tab-separated fields, decimal integers, fractions as fixed 6-decimal
//! floats. A crash loses at most the final partial line; readers keep every
//! complete record and report the truncation as a warning.
//!
//! Sample file (fields joined by single tabs):
//!
//! ```text
//! #heapscope 1 threshold=10485767 copy_rate_multiple=2 quantum_ns=10000000 seed=-
//! growth 120000 1048583 1048583 1048583 0.000000 app.py 7 42
//! #leak app.py 7 19 0
//! #footer events=.. alloc_events=.. free_events=.. copy_events=.. samples=..
//!         peak=.. elapsed_ns=.. guarded_forwards=.. internal_samples=..
//!         unknown_size_frees=..
//! ```
//!
//! Body fields: `kind  timestamp_ns  net_delta  footprint  peak
//! managed_fraction  file  line  alloc_id` (alloc_id `-` for copy samples).
//! `#leak` lines carry final per-callsite leak scores; the footer carries
//! run totals and shim diagnostics.
//!
//! Trace file: `kind  size  alloc_id  domain  file  line  timestamp_ns`.
//!
//! Timer log: `sample  elapsed_ns  quantum_ns  file  line` followed by zero
//! or more `thread  tid  status  in_call  file  line` lines for that sample.

use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::cpu::{FrameInfo, ThreadSnapshot, ThreadStatus, TimerSample};
use crate::leak::LeakScore;
use crate::model::{
    AllocEvent, Callsite, DomainTag, EventKind, SampleKind, SampleRecord, ThreadId,
};

pub const FORMAT_VERSION: u32 = 1;

const SAMPLE_MAGIC: &str = "#heapscope";
const TRACE_MAGIC: &str = "#heapscope-trace";
const TIMER_MAGIC: &str = "#heapscope-timer";

#[derive(Debug, Error)]
pub enum LogError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{source_name}:{line}: malformed record: {reason}")]
    MalformedLine {
        source_name: String,
        line: usize,
        reason: String,
    },
    #[error("{source_name}: format version {found} unsupported (this build reads version {supported})")]
    VersionMismatch {
        source_name: String,
        found: String,
        supported: u32,
    },
    #[error("{source_name}: missing or foreign header line")]
    MissingHeader { source_name: String },
}

/// Config echo carried in the sample-file header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogConfig {
    pub threshold_bytes: u64,
    pub copy_rate_multiple: u64,
    pub quantum_ns: u64,
    pub seed: Option<u64>,
}

impl LogConfig {
    pub fn copy_rate(&self) -> u64 {
        self.copy_rate_multiple.saturating_mul(self.threshold_bytes)
    }
}

/// Run totals written in the sample-file footer. The diagnostic fields prove
/// the reentrancy guard did its job: `guarded_forwards` counts allocator
/// entries forwarded because profiler code was already on the stack, and
/// `internal_samples` counts samples emitted on behalf of such entries
/// (always zero unless the guard is broken).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LogTotals {
    pub events: u64,
    pub alloc_events: u64,
    pub free_events: u64,
    pub copy_events: u64,
    pub samples: u64,
    pub peak_footprint: u64,
    pub elapsed_ns: u64,
    pub guarded_forwards: u64,
    pub internal_samples: u64,
    pub unknown_size_frees: u64,
}

fn escape_field(field: &str) -> String {
    if !field.contains(['\t', '\n', '\\']) {
        return field.to_string();
    }
    field
        .replace('\\', "\\\\")
        .replace('\t', "\\t")
        .replace('\n', "\\n")
}

fn unescape_field(field: &str) -> String {
    if !field.contains('\\') {
        return field.to_string();
    }
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

fn fraction(f: f64) -> String {
    format!("{f:.6}")
}

// ---------------------------------------------------------------------------
// Sample file
// ---------------------------------------------------------------------------

/// Streams sample records to an append-only log.
#[derive(Debug)]
pub struct SampleLogWriter<W: Write> {
    out: W,
    samples_written: u64,
}

impl<W: Write> SampleLogWriter<W> {
    pub fn new(mut out: W, config: &LogConfig) -> io::Result<Self> {
        let seed = match config.seed {
            Some(s) => s.to_string(),
            None => "-".to_string(),
        };
        writeln!(
            out,
            "{SAMPLE_MAGIC}\t{FORMAT_VERSION}\tthreshold={}\tcopy_rate_multiple={}\tquantum_ns={}\tseed={}",
            config.threshold_bytes, config.copy_rate_multiple, config.quantum_ns, seed
        )?;
        Ok(SampleLogWriter {
            out,
            samples_written: 0,
        })
    }

    pub fn write_sample(&mut self, sample: &SampleRecord) -> io::Result<()> {
        let alloc_id = match sample.alloc_id {
            Some(id) => id.to_string(),
            None => "-".to_string(),
        };
        writeln!(
            self.out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            sample.kind.as_str(),
            sample.timestamp_ns,
            sample.net_delta,
            sample.footprint,
            sample.peak_footprint,
            fraction(sample.managed_fraction),
            escape_field(sample.callsite.file()),
            sample.callsite.line(),
            alloc_id,
        )?;
        self.samples_written += 1;
        Ok(())
    }

    pub fn write_leak_score(&mut self, callsite: &Callsite, score: LeakScore) -> io::Result<()> {
        writeln!(
            self.out,
            "#leak\t{}\t{}\t{}\t{}",
            escape_field(callsite.file()),
            callsite.line(),
            score.mallocs,
            score.frees,
        )
    }

    pub fn samples_written(&self) -> u64 {
        self.samples_written
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }

    /// Abandons the log without a footer (simulates abnormal termination).
    pub fn into_inner(self) -> W {
        self.out
    }

    /// Writes the footer and returns the underlying writer.
    pub fn finish(mut self, totals: &LogTotals) -> io::Result<W> {
        writeln!(
            self.out,
            "#footer\tevents={}\talloc_events={}\tfree_events={}\tcopy_events={}\tsamples={}\tpeak={}\telapsed_ns={}\tguarded_forwards={}\tinternal_samples={}\tunknown_size_frees={}",
            totals.events,
            totals.alloc_events,
            totals.free_events,
            totals.copy_events,
            totals.samples,
            totals.peak_footprint,
            totals.elapsed_ns,
            totals.guarded_forwards,
            totals.internal_samples,
            totals.unknown_size_frees,
        )?;
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Parsed sample file. `totals` is absent when the run never finalized;
/// `warnings` collects recoverable oddities (truncation, missing footer).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleLog {
    pub config: LogConfig,
    pub samples: Vec<SampleRecord>,
    pub leak_scores: Vec<(Callsite, LeakScore)>,
    pub totals: Option<LogTotals>,
    pub warnings: Vec<String>,
}

struct RawLines {
    lines: Vec<String>,
    last_complete: bool,
}

fn read_raw_lines(reader: impl io::Read) -> io::Result<RawLines> {
    let mut reader = BufReader::new(reader);
    let mut content = String::new();
    reader.read_to_string(&mut content)?;
    let last_complete = content.is_empty() || content.ends_with('\n');
    let lines = content.lines().map(str::to_string).collect();
    Ok(RawLines {
        lines,
        last_complete,
    })
}

fn malformed(source_name: &str, line: usize, reason: impl Into<String>) -> LogError {
    LogError::MalformedLine {
        source_name: source_name.to_string(),
        line,
        reason: reason.into(),
    }
}

fn parse_kv<'a>(field: &'a str, key: &str, source_name: &str, line: usize) -> Result<&'a str, LogError> {
    field
        .strip_prefix(key)
        .and_then(|rest| rest.strip_prefix('='))
        .ok_or_else(|| malformed(source_name, line, format!("expected `{key}=...`, got `{field}`")))
}

fn parse_u64(s: &str, what: &str, source_name: &str, line: usize) -> Result<u64, LogError> {
    s.parse::<u64>()
        .map_err(|_| malformed(source_name, line, format!("bad {what}: `{s}`")))
}

fn parse_i64(s: &str, what: &str, source_name: &str, line: usize) -> Result<i64, LogError> {
    s.parse::<i64>()
        .map_err(|_| malformed(source_name, line, format!("bad {what}: `{s}`")))
}

fn parse_f64(s: &str, what: &str, source_name: &str, line: usize) -> Result<f64, LogError> {
    s.parse::<f64>()
        .map_err(|_| malformed(source_name, line, format!("bad {what}: `{s}`")))
}

fn parse_callsite(
    file_field: &str,
    line_field: &str,
    source_name: &str,
    line_no: usize,
) -> Result<Callsite, LogError> {
    let file = unescape_field(file_field);
    let line = parse_u64(line_field, "line number", source_name, line_no)? as u32;
    Callsite::new(file, line)
        .map_err(|e| malformed(source_name, line_no, format!("bad callsite: {e}")))
}

fn check_version(
    found: &str,
    source_name: &str,
) -> Result<(), LogError> {
    match found.parse::<u32>() {
        Ok(v) if v == FORMAT_VERSION => Ok(()),
        _ => Err(LogError::VersionMismatch {
            source_name: source_name.to_string(),
            found: found.to_string(),
            supported: FORMAT_VERSION,
        }),
    }
}

pub fn read_sample_log(reader: impl io::Read, source_name: &str) -> Result<SampleLog, LogError> {
    let raw = read_raw_lines(reader)?;
    let mut warnings = Vec::new();
    if raw.lines.is_empty() {
        return Err(LogError::MissingHeader {
            source_name: source_name.to_string(),
        });
    }

    let header_fields: Vec<&str> = raw.lines[0].split('\t').collect();
    if header_fields[0] != SAMPLE_MAGIC {
        return Err(LogError::MissingHeader {
            source_name: source_name.to_string(),
        });
    }
    if header_fields.len() < 6 {
        return Err(malformed(source_name, 1, "incomplete header"));
    }
    check_version(header_fields[1], source_name)?;
    let threshold_bytes = parse_u64(
        parse_kv(header_fields[2], "threshold", source_name, 1)?,
        "threshold",
        source_name,
        1,
    )?;
    let copy_rate_multiple = parse_u64(
        parse_kv(header_fields[3], "copy_rate_multiple", source_name, 1)?,
        "copy_rate_multiple",
        source_name,
        1,
    )?;
    let quantum_ns = parse_u64(
        parse_kv(header_fields[4], "quantum_ns", source_name, 1)?,
        "quantum_ns",
        source_name,
        1,
    )?;
    let seed_str = parse_kv(header_fields[5], "seed", source_name, 1)?;
    let seed = if seed_str == "-" {
        None
    } else {
        Some(parse_u64(seed_str, "seed", source_name, 1)?)
    };
    let config = LogConfig {
        threshold_bytes,
        copy_rate_multiple,
        quantum_ns,
        seed,
    };

    let mut samples = Vec::new();
    let mut leak_scores = Vec::new();
    let mut totals = None;

    let body = &raw.lines[1..];
    for (i, line) in body.iter().enumerate() {
        let line_no = i + 2;
        let is_last = i + 1 == body.len();
        let fields: Vec<&str> = line.split('\t').collect();

        let result = parse_sample_body_line(&fields, source_name, line_no);
        match result {
            Ok(BodyLine::Sample(sample)) => samples.push(sample),
            Ok(BodyLine::Leak(cs, score)) => leak_scores.push((cs, score)),
            Ok(BodyLine::Footer(t)) => {
                if !is_last {
                    warnings.push(format!("{source_name}:{line_no}: footer before end of file"));
                }
                totals = Some(t);
            }
            Err(e) => {
                if is_last && !raw.last_complete {
                    warnings.push(format!(
                        "{source_name}:{line_no}: dropped truncated final record"
                    ));
                } else {
                    return Err(e);
                }
            }
        }
    }

    if totals.is_none() {
        warnings.push(format!(
            "{source_name}: no footer (run did not finalize); totals unavailable"
        ));
    }

    Ok(SampleLog {
        config,
        samples,
        leak_scores,
        totals,
        warnings,
    })
}

enum BodyLine {
    Sample(SampleRecord),
    Leak(Callsite, LeakScore),
    Footer(LogTotals),
}

fn parse_sample_body_line(
    fields: &[&str],
    source_name: &str,
    line_no: usize,
) -> Result<BodyLine, LogError> {
    match fields[0] {
        "#leak" => {
            if fields.len() != 5 {
                return Err(malformed(source_name, line_no, "leak line needs 5 fields"));
            }
            let callsite = parse_callsite(fields[1], fields[2], source_name, line_no)?;
            let mallocs = parse_u64(fields[3], "mallocs", source_name, line_no)?;
            let frees = parse_u64(fields[4], "frees", source_name, line_no)?;
            if frees > mallocs {
                return Err(malformed(source_name, line_no, "frees exceed mallocs"));
            }
            Ok(BodyLine::Leak(callsite, LeakScore { mallocs, frees }))
        }
        "#footer" => {
            if fields.len() != 11 {
                return Err(malformed(source_name, line_no, "footer needs 11 fields"));
            }
            let keys = [
                "events",
                "alloc_events",
                "free_events",
                "copy_events",
                "samples",
                "peak",
                "elapsed_ns",
                "guarded_forwards",
                "internal_samples",
                "unknown_size_frees",
            ];
            let mut values = [0u64; 10];
            for (slot, (field, key)) in values.iter_mut().zip(fields[1..].iter().zip(keys)) {
                *slot = parse_u64(
                    parse_kv(field, key, source_name, line_no)?,
                    key,
                    source_name,
                    line_no,
                )?;
            }
            Ok(BodyLine::Footer(LogTotals {
                events: values[0],
                alloc_events: values[1],
                free_events: values[2],
                copy_events: values[3],
                samples: values[4],
                peak_footprint: values[5],
                elapsed_ns: values[6],
                guarded_forwards: values[7],
                internal_samples: values[8],
                unknown_size_frees: values[9],
            }))
        }
        kind_str => {
            if fields.len() != 9 {
                return Err(malformed(
                    source_name,
                    line_no,
                    format!("sample line needs 9 fields, got {}", fields.len()),
                ));
            }
            let kind = match kind_str {
                "growth" => SampleKind::Growth,
                "decline" => SampleKind::Decline,
                "copy" => SampleKind::Copy,
                other => {
                    return Err(malformed(
                        source_name,
                        line_no,
                        format!("unknown sample kind `{other}`"),
                    ))
                }
            };
            let timestamp_ns = parse_u64(fields[1], "timestamp", source_name, line_no)?;
            let net_delta = parse_i64(fields[2], "net_delta", source_name, line_no)?;
            let footprint = parse_u64(fields[3], "footprint", source_name, line_no)?;
            let peak_footprint = parse_u64(fields[4], "peak", source_name, line_no)?;
            let managed_fraction = parse_f64(fields[5], "managed_fraction", source_name, line_no)?;
            if !(0.0..=1.0).contains(&managed_fraction) {
                return Err(malformed(source_name, line_no, "managed_fraction out of [0,1]"));
            }
            if footprint > peak_footprint {
                return Err(malformed(source_name, line_no, "footprint exceeds peak"));
            }
            let callsite = parse_callsite(fields[6], fields[7], source_name, line_no)?;
            let alloc_id = if fields[8] == "-" {
                None
            } else {
                Some(parse_u64(fields[8], "alloc_id", source_name, line_no)?)
            };
            Ok(BodyLine::Sample(SampleRecord {
                kind,
                timestamp_ns,
                net_delta,
                footprint,
                peak_footprint,
                managed_fraction,
                callsite,
                alloc_id,
            }))
        }
    }
}

pub fn read_sample_log_file(path: impl AsRef<Path>) -> Result<SampleLog, LogError> {
    let path = path.as_ref();
    let file = File::open(path)?;
    read_sample_log(file, &path.display().to_string())
}

// ---------------------------------------------------------------------------
// Trace file
// ---------------------------------------------------------------------------

pub fn write_trace(mut out: impl Write, events: &[AllocEvent]) -> io::Result<()> {
    writeln!(out, "{TRACE_MAGIC}\t{FORMAT_VERSION}")?;
    for e in events {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            e.kind.as_str(),
            e.size,
            e.alloc_id,
            e.domain.as_str(),
            escape_field(e.callsite.file()),
            e.callsite.line(),
            e.timestamp_ns,
        )?;
    }
    out.flush()
}

pub fn read_trace(reader: impl io::Read, source_name: &str) -> Result<Vec<AllocEvent>, LogError> {
    let raw = read_raw_lines(reader)?;
    if raw.lines.is_empty() || !raw.lines[0].starts_with(TRACE_MAGIC) {
        return Err(LogError::MissingHeader {
            source_name: source_name.to_string(),
        });
    }
    let header: Vec<&str> = raw.lines[0].split('\t').collect();
    if header.len() < 2 {
        return Err(malformed(source_name, 1, "incomplete header"));
    }
    check_version(header[1], source_name)?;

    let mut events = Vec::with_capacity(raw.lines.len().saturating_sub(1));
    for (i, line) in raw.lines[1..].iter().enumerate() {
        let line_no = i + 2;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 7 {
            return Err(malformed(
                source_name,
                line_no,
                format!("trace line needs 7 fields, got {}", fields.len()),
            ));
        }
        let kind = match fields[0] {
            "alloc" => EventKind::Alloc,
            "free" => EventKind::Free,
            "copy" => EventKind::Copy,
            other => {
                return Err(malformed(
                    source_name,
                    line_no,
                    format!("unknown event kind `{other}`"),
                ))
            }
        };
        let domain = match fields[3] {
            "managed" => DomainTag::Managed,
            "native" => DomainTag::Native,
            other => {
                return Err(malformed(
                    source_name,
                    line_no,
                    format!("unknown domain `{other}`"),
                ))
            }
        };
        events.push(AllocEvent {
            kind,
            size: parse_u64(fields[1], "size", source_name, line_no)?,
            alloc_id: parse_u64(fields[2], "alloc_id", source_name, line_no)?,
            domain,
            callsite: parse_callsite(fields[4], fields[5], source_name, line_no)?,
            timestamp_ns: parse_u64(fields[6], "timestamp", source_name, line_no)?,
            thread: ThreadId(0),
        });
    }
    Ok(events)
}

pub fn read_trace_file(path: impl AsRef<Path>) -> Result<Vec<AllocEvent>, LogError> {
    let path = path.as_ref();
    let file = File::open(path)?;
    read_trace(file, &path.display().to_string())
}

// ---------------------------------------------------------------------------
// Timer log
// ---------------------------------------------------------------------------

/// Streams timer samples; each sample line may be followed by thread lines.
#[derive(Debug)]
pub struct TimerLogWriter<W: Write> {
    out: W,
    samples_written: u64,
    total_elapsed_ns: u64,
}

impl<W: Write> TimerLogWriter<W> {
    pub fn new(mut out: W, quantum_ns: u64) -> io::Result<Self> {
        writeln!(out, "{TIMER_MAGIC}\t{FORMAT_VERSION}\tquantum_ns={quantum_ns}")?;
        Ok(TimerLogWriter {
            out,
            samples_written: 0,
            total_elapsed_ns: 0,
        })
    }

    /// Writes a sample with its main attribution already resolved.
    pub fn write_sample(&mut self, sample: &TimerSample) -> io::Result<()> {
        let main = if sample.main_stack.is_empty() {
            crate::cpu::foreign_callsite()
        } else {
            crate::cpu::resolve_attribution(&sample.main_stack)
        };
        writeln!(
            self.out,
            "sample\t{}\t{}\t{}\t{}",
            sample.elapsed_virtual_ns,
            sample.quantum_ns,
            escape_field(main.file()),
            main.line(),
        )?;
        for snap in &sample.thread_snapshots {
            writeln!(
                self.out,
                "thread\t{}\t{}\t{}\t{}\t{}",
                snap.thread,
                snap.status.as_str(),
                snap.in_call as u8,
                escape_field(snap.callsite.file()),
                snap.callsite.line(),
            )?;
        }
        self.samples_written += 1;
        self.total_elapsed_ns += sample.elapsed_virtual_ns;
        Ok(())
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }

    pub fn finish(mut self) -> io::Result<W> {
        writeln!(
            self.out,
            "#footer\tsamples={}\ttotal_elapsed_ns={}",
            self.samples_written, self.total_elapsed_ns
        )?;
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Parsed timer log. Each sample's main stack is reconstructed as a single
/// profiled frame at the logged callsite.
#[derive(Debug, Clone, PartialEq)]
pub struct TimerLog {
    pub quantum_ns: u64,
    pub samples: Vec<TimerSample>,
    pub warnings: Vec<String>,
}

pub fn read_timer_log(reader: impl io::Read, source_name: &str) -> Result<TimerLog, LogError> {
    let raw = read_raw_lines(reader)?;
    if raw.lines.is_empty() || !raw.lines[0].starts_with(TIMER_MAGIC) {
        return Err(LogError::MissingHeader {
            source_name: source_name.to_string(),
        });
    }
    let header: Vec<&str> = raw.lines[0].split('\t').collect();
    if header.len() < 3 {
        return Err(malformed(source_name, 1, "incomplete header"));
    }
    check_version(header[1], source_name)?;
    let quantum_ns = parse_u64(
        parse_kv(header[2], "quantum_ns", source_name, 1)?,
        "quantum_ns",
        source_name,
        1,
    )?;

    let mut samples: Vec<TimerSample> = Vec::new();
    let mut warnings = Vec::new();
    let mut saw_footer = false;
    let body = &raw.lines[1..];
    for (i, line) in body.iter().enumerate() {
        let line_no = i + 2;
        let is_last = i + 1 == body.len();
        let fields: Vec<&str> = line.split('\t').collect();
        let parsed: Result<(), LogError> = (|| {
            match fields[0] {
                "sample" => {
                    if fields.len() != 5 {
                        return Err(malformed(source_name, line_no, "sample line needs 5 fields"));
                    }
                    let elapsed = parse_u64(fields[1], "elapsed", source_name, line_no)?;
                    let quantum = parse_u64(fields[2], "quantum", source_name, line_no)?;
                    let callsite = parse_callsite(fields[3], fields[4], source_name, line_no)?;
                    samples.push(TimerSample {
                        elapsed_virtual_ns: elapsed,
                        quantum_ns: quantum,
                        main_stack: vec![FrameInfo {
                            callsite,
                            in_profiled_code: true,
                        }],
                        thread_snapshots: Vec::new(),
                    });
                    Ok(())
                }
                "thread" => {
                    if fields.len() != 6 {
                        return Err(malformed(source_name, line_no, "thread line needs 6 fields"));
                    }
                    let sample = samples.last_mut().ok_or_else(|| {
                        malformed(source_name, line_no, "thread line before any sample")
                    })?;
                    let tid = parse_u64(fields[1], "tid", source_name, line_no)?;
                    let status = match fields[2] {
                        "executing" => ThreadStatus::Executing,
                        "sleeping" => ThreadStatus::Sleeping,
                        other => {
                            return Err(malformed(
                                source_name,
                                line_no,
                                format!("unknown thread status `{other}`"),
                            ))
                        }
                    };
                    let in_call = match fields[3] {
                        "0" => false,
                        "1" => true,
                        other => {
                            return Err(malformed(
                                source_name,
                                line_no,
                                format!("bad in_call flag `{other}`"),
                            ))
                        }
                    };
                    let callsite = parse_callsite(fields[4], fields[5], source_name, line_no)?;
                    sample.thread_snapshots.push(ThreadSnapshot {
                        thread: ThreadId(tid),
                        status,
                        callsite,
                        in_call,
                    });
                    Ok(())
                }
                "#footer" => {
                    saw_footer = true;
                    Ok(())
                }
                other => Err(malformed(
                    source_name,
                    line_no,
                    format!("unknown timer record `{other}`"),
                )),
            }
        })();
        if let Err(e) = parsed {
            if is_last && !raw.last_complete {
                warnings.push(format!(
                    "{source_name}:{line_no}: dropped truncated final record"
                ));
            } else {
                return Err(e);
            }
        }
    }
    if !saw_footer {
        warnings.push(format!("{source_name}: no footer (run did not finalize)"));
    }
    Ok(TimerLog {
        quantum_ns,
        samples,
        warnings,
    })
}

pub fn read_timer_log_file(path: impl AsRef<Path>) -> Result<TimerLog, LogError> {
    let path = path.as_ref();
    let file = File::open(path)?;
    read_timer_log(file, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SampleKind;

    fn config() -> LogConfig {
        LogConfig {
            threshold_bytes: 1048583,
            copy_rate_multiple: 2,
            quantum_ns: 10_000_000,
            seed: None,
        }
    }

    fn sample(ts: u64) -> SampleRecord {
        SampleRecord {
            kind: SampleKind::Growth,
            timestamp_ns: ts,
            net_delta: 1048583,
            footprint: 1048583,
            peak_footprint: 1048583,
            managed_fraction: 0.25,
            callsite: Callsite::new("src/a.rs", 10).unwrap(),
            alloc_id: Some(7),
        }
    }

    fn write_log(samples: &[SampleRecord], totals: Option<&LogTotals>) -> Vec<u8> {
        let mut w = SampleLogWriter::new(Vec::new(), &config()).unwrap();
        for s in samples {
            w.write_sample(s).unwrap();
        }
        match totals {
            Some(t) => w.finish(t).unwrap(),
            None => w.into_inner(),
        }
    }

    #[test]
    fn sample_log_round_trips() {
        let totals = LogTotals {
            events: 2,
            alloc_events: 2,
            samples: 1,
            peak_footprint: 1048583,
            elapsed_ns: 500,
            ..Default::default()
        };
        let bytes = write_log(&[sample(42)], Some(&totals));
        let log = read_sample_log(&bytes[..], "test.log").unwrap();
        assert_eq!(log.config, config());
        assert_eq!(log.samples, vec![sample(42)]);
        assert_eq!(log.totals, Some(totals));
        assert!(log.warnings.is_empty());
    }

    #[test]
    fn empty_run_is_header_plus_footer_only() {
        let bytes = write_log(&[], Some(&LogTotals::default()));
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert_eq!(text.lines().count(), 2);
        let log = read_sample_log(&bytes[..], "empty.log").unwrap();
        assert!(log.samples.is_empty());
        assert!(log.totals.is_some());
    }

    #[test]
    fn truncated_final_record_is_dropped_with_warning() {
        let mut bytes = write_log(&[sample(1), sample(2)], None);
        // chop the final newline and some bytes: a crash mid-append
        bytes.truncate(bytes.len() - 7);
        let log = read_sample_log(&bytes[..], "trunc.log").unwrap();
        assert_eq!(log.samples.len(), 1);
        assert!(log
            .warnings
            .iter()
            .any(|w| w.contains("truncated")));
        assert!(log.warnings.iter().any(|w| w.contains("no footer")));
    }

    #[test]
    fn malformed_interior_line_names_file_and_line() {
        let mut bytes = write_log(&[sample(1)], None);
        bytes.extend_from_slice(b"growth\tnot_a_number\n");
        bytes.extend_from_slice(b"decline\t1\t-5\t0\t5\t0.000000\tx.rs\t1\t3\n");
        let err = read_sample_log(&bytes[..], "bad.log").unwrap_err();
        match err {
            LogError::MalformedLine { source_name, line, .. } => {
                assert_eq!(source_name, "bad.log");
                assert_eq!(line, 3);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_refused_with_both_versions() {
        let text = "#heapscope\t99\tthreshold=1\tcopy_rate_multiple=1\tquantum_ns=1\tseed=-\n";
        let err = read_sample_log(text.as_bytes(), "v.log").unwrap_err();
        match err {
            LogError::VersionMismatch { found, supported, .. } => {
                assert_eq!(found, "99");
                assert_eq!(supported, FORMAT_VERSION);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn leak_lines_round_trip() {
        let mut w = SampleLogWriter::new(Vec::new(), &config()).unwrap();
        let cs = Callsite::new("leaky.rs", 3).unwrap();
        w.write_leak_score(&cs, LeakScore { mallocs: 19, frees: 0 }).unwrap();
        let bytes = w.finish(&LogTotals::default()).unwrap();
        let log = read_sample_log(&bytes[..], "leak.log").unwrap();
        assert_eq!(log.leak_scores, vec![(cs, LeakScore { mallocs: 19, frees: 0 })]);
    }

    #[test]
    fn field_escaping_survives_hostile_paths() {
        let cs = Callsite::new("weird\tname\\with\njunk.rs", 9).unwrap();
        let mut rec = sample(5);
        rec.callsite = cs.clone();
        let bytes = write_log(&[rec.clone()], Some(&LogTotals::default()));
        let log = read_sample_log(&bytes[..], "esc.log").unwrap();
        assert_eq!(log.samples[0].callsite, cs);
    }

    #[test]
    fn trace_round_trips() {
        use crate::model::{AllocEvent, DomainTag, EventKind, ThreadId};
        let events = vec![
            AllocEvent {
                kind: EventKind::Alloc,
                size: 16384,
                alloc_id: 1,
                domain: DomainTag::Managed,
                callsite: Callsite::new("gen.rs", 4).unwrap(),
                timestamp_ns: 1000,
                thread: ThreadId(0),
            },
            AllocEvent {
                kind: EventKind::Free,
                size: 16384,
                alloc_id: 1,
                domain: DomainTag::Managed,
                callsite: Callsite::new("gen.rs", 5).unwrap(),
                timestamp_ns: 2000,
                thread: ThreadId(0),
            },
        ];
        let mut buf = Vec::new();
        write_trace(&mut buf, &events).unwrap();
        let back = read_trace(&buf[..], "t.trace").unwrap();
        assert_eq!(back, events);
    }

    #[test]
    fn timer_log_round_trips() {
        use crate::cpu::{FrameInfo, ThreadSnapshot, ThreadStatus, TimerSample};
        let cs = Callsite::new("hot.py", 7).unwrap();
        let t = TimerSample {
            elapsed_virtual_ns: 50_000_000,
            quantum_ns: 10_000_000,
            main_stack: vec![FrameInfo { callsite: cs.clone(), in_profiled_code: true }],
            thread_snapshots: vec![ThreadSnapshot {
                thread: ThreadId(3),
                status: ThreadStatus::Sleeping,
                callsite: cs,
                in_call: true,
            }],
        };
        let mut w = TimerLogWriter::new(Vec::new(), 10_000_000).unwrap();
        w.write_sample(&t).unwrap();
        let bytes = w.finish().unwrap();
        let log = read_timer_log(&bytes[..], "t.timer").unwrap();
        assert_eq!(log.quantum_ns, 10_000_000);
        assert_eq!(log.samples, vec![t]);
        assert!(log.warnings.is_empty());
    }
}
