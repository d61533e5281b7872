//! Shared data vocabulary: callsites, allocator events, emitted samples,
//! footprint trend points, and profiler configuration.
//!
//! Everything here is a plain value type, safe to move between threads.

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use thiserror::Error;

/// Source attribution unit. All metrics accrue to a `(file, line)` pair,
/// optionally annotated with a function name.
///
/// The file string is reference-counted so events can carry callsites cheaply.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Callsite {
    file: Arc<str>,
    line: u32,
    function: Option<Arc<str>>,
}

impl Callsite {
    /// Creates a callsite. `file` must be non-empty and `line` must be >= 1.
    pub fn new(file: impl Into<Arc<str>>, line: u32) -> Result<Self, ModelError> {
        let file = file.into();
        if file.is_empty() {
            return Err(ModelError::EmptyFile);
        }
        if line == 0 {
            return Err(ModelError::ZeroLine);
        }
        Ok(Callsite {
            file,
            line,
            function: None,
        })
    }

    /// Sentinel callsite for code that cannot be attributed to a real
    /// source location (`<unknown>`, `<foreign>`). Uses line 1.
    pub fn synthetic(name: &str) -> Self {
        Callsite {
            file: Arc::from(name),
            line: 1,
            function: None,
        }
    }

    pub fn with_function(mut self, function: impl Into<Arc<str>>) -> Self {
        self.function = Some(function.into());
        self
    }

    pub fn file(&self) -> &str {
        &self.file
    }

    pub fn line(&self) -> u32 {
        self.line
    }

    pub fn function(&self) -> Option<&str> {
        self.function.as_deref()
    }
}

impl fmt::Display for Callsite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.function {
            Some(func) => write!(f, "{}:{} ({})", self.file, self.line, func),
            None => write!(f, "{}:{}", self.file, self.line),
        }
    }
}

/// Whether an allocation (or time slice) belongs to the embedding runtime's
/// own allocator/interpreter or to external native code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DomainTag {
    Managed,
    Native,
}

impl DomainTag {
    pub fn as_str(self) -> &'static str {
        match self {
            DomainTag::Managed => "managed",
            DomainTag::Native => "native",
        }
    }
}

/// Allocator action kinds observed by the interposition layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Alloc,
    Free,
    Copy,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Alloc => "alloc",
            EventKind::Free => "free",
            EventKind::Copy => "copy",
        }
    }
}

/// Thread identifier, opaque beyond equality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct ThreadId(pub u64);

impl fmt::Display for ThreadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One allocator action: an allocation, a free, or a bulk copy.
///
/// `alloc_id` is an opaque 64-bit identity: the allocation's address in the
/// live shim, a synthetic counter in replay. Frees carry the size recorded
/// at the matching alloc.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocEvent {
    pub kind: EventKind,
    pub size: u64,
    pub alloc_id: u64,
    pub domain: DomainTag,
    pub callsite: Callsite,
    pub timestamp_ns: u64,
    pub thread: ThreadId,
}

/// Sample kinds written to the sample file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleKind {
    Growth,
    Decline,
    Copy,
}

impl SampleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleKind::Growth => "growth",
            SampleKind::Decline => "decline",
            SampleKind::Copy => "copy",
        }
    }
}

/// One emitted sample: the unit written to the sample file.
///
/// For growth/decline samples `net_delta` is allocated minus freed bytes
/// since the last counter reset; for copy samples it is the credited copy
/// bytes. `alloc_id` identifies the triggering allocation and is absent for
/// copy samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub kind: SampleKind,
    pub timestamp_ns: u64,
    pub net_delta: i64,
    pub footprint: u64,
    pub peak_footprint: u64,
    pub managed_fraction: f64,
    pub callsite: Callsite,
    pub alloc_id: Option<u64>,
}

/// Timestamped footprint snapshot; one per threshold crossing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FootprintPoint {
    pub timestamp_ns: u64,
    pub footprint: u64,
}

/// Profiler configuration shared by the live shim and the replay harness.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfilerConfig {
    /// Sampling threshold T in bytes; must be prime.
    pub threshold_bytes: u64,
    /// Requested virtual-time interval q between CPU timer samples.
    pub quantum_seconds: f64,
    /// Copy sampling rate as a multiple of `threshold_bytes`.
    pub copy_rate_multiple: u64,
    pub output_path: Option<PathBuf>,
    /// Seed for the copy/rate samplers. `None` selects deterministic
    /// countdown mode (reproducible tests, not statistical sampling).
    pub deterministic_rng_seed: Option<u64>,
}

impl Default for ProfilerConfig {
    fn default() -> Self {
        ProfilerConfig {
            threshold_bytes: crate::threshold::DEFAULT_SAMPLING_THRESHOLD,
            quantum_seconds: 0.01,
            copy_rate_multiple: 2,
            output_path: None,
            deterministic_rng_seed: None,
        }
    }
}

impl ProfilerConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !crate::threshold::is_prime(self.threshold_bytes) {
            return Err(ModelError::ThresholdNotPrime(self.threshold_bytes));
        }
        if !self.quantum_seconds.is_finite() || self.quantum_seconds <= 0.0 {
            return Err(ModelError::NonPositiveQuantum(self.quantum_seconds));
        }
        if self.copy_rate_multiple == 0 {
            return Err(ModelError::ZeroCopyMultiple);
        }
        Ok(())
    }

    /// Copy sampling rate R_copy in bytes.
    pub fn copy_rate(&self) -> u64 {
        self.copy_rate_multiple.saturating_mul(self.threshold_bytes)
    }

    pub fn quantum_ns(&self) -> u64 {
        (self.quantum_seconds * 1e9).round() as u64
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("callsite file must be non-empty")]
    EmptyFile,
    #[error("callsite line must be >= 1")]
    ZeroLine,
    #[error("threshold {0} is not prime")]
    ThresholdNotPrime(u64),
    #[error("quantum must be positive, got {0}")]
    NonPositiveQuantum(f64),
    #[error("copy_rate_multiple must be >= 1")]
    ZeroCopyMultiple,
}

/// Why an event stream failed validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    /// Alloc or copy with size 0.
    ZeroSize,
    /// Alloc reusing an id that is still live.
    DuplicateLiveAllocId(u64),
    /// Free of an id with no live prior alloc.
    FreeWithoutAlloc(u64),
    /// Free size differs from the size recorded at the matching alloc.
    SizeMismatch { alloc_id: u64, expected: u64, found: u64 },
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::ZeroSize => write!(f, "alloc/copy size must be > 0"),
            ViolationKind::DuplicateLiveAllocId(id) => {
                write!(f, "alloc id {id} is already live")
            }
            ViolationKind::FreeWithoutAlloc(id) => {
                write!(f, "free of id {id} without a live alloc")
            }
            ViolationKind::SizeMismatch {
                alloc_id,
                expected,
                found,
            } => write!(
                f,
                "free of id {alloc_id} carries size {found}, alloc recorded {expected}"
            ),
        }
    }
}

/// First violation found in an event stream.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("event {index}: {kind}")]
pub struct StreamViolation {
    pub index: usize,
    pub kind: ViolationKind,
}

/// Checks that every free matches a live prior alloc with a consistent size
/// and that alloc/copy sizes are positive. Returns the first offending event.
pub fn validate_event_stream(events: &[AllocEvent]) -> Result<(), StreamViolation> {
    let mut live: std::collections::HashMap<u64, u64> = std::collections::HashMap::new();
    for (index, event) in events.iter().enumerate() {
        let violation = |kind| StreamViolation { index, kind };
        match event.kind {
            EventKind::Alloc => {
                if event.size == 0 {
                    return Err(violation(ViolationKind::ZeroSize));
                }
                if live.insert(event.alloc_id, event.size).is_some() {
                    return Err(violation(ViolationKind::DuplicateLiveAllocId(
                        event.alloc_id,
                    )));
                }
            }
            EventKind::Free => match live.remove(&event.alloc_id) {
                None => {
                    return Err(violation(ViolationKind::FreeWithoutAlloc(event.alloc_id)))
                }
                Some(expected) if expected != event.size => {
                    return Err(violation(ViolationKind::SizeMismatch {
                        alloc_id: event.alloc_id,
                        expected,
                        found: event.size,
                    }))
                }
                Some(_) => {}
            },
            EventKind::Copy => {
                if event.size == 0 {
                    return Err(violation(ViolationKind::ZeroSize));
                }
            }
        }
    }
    Ok(())
}
