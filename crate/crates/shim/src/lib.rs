//! Preloadable interposition shim.
//!
//! Exports the platform allocator entry points (`malloc`, `free`, `calloc`,
//! `realloc`, `posix_memalign`, `aligned_alloc`, `memalign`) plus `memcpy`,
//! forwards every call to glibc, and feeds the heapscope samplers on the
//! side. Inject with `LD_PRELOAD=libheapscope_shim.so`.
//!
//! Reentrancy: profiler code allocates through the same interposed symbols,
//! so every entry point first checks a thread-local in-profiler flag. With
//! the flag set the call is forwarded untouched; this both prevents double
//! counting and lets the recording paths allocate freely.
//!
//! Sizes are recovered with `malloc_usable_size`, for allocations and frees
//! alike, so the footprint arithmetic is self-consistent without a side
//! table.
//!
//! Environment:
//!
//! * `HEAPSCOPE_OUT` - sample file path (default `heapscope-<pid>.out`);
//!   timer samples, if any, go to `<out>.timer`
//! * `HEAPSCOPE_THRESHOLD` - sampling threshold base in bytes, rounded up
//!   to the next prime (default: smallest prime >= 10 MiB)
//! * `HEAPSCOPE_COPY_MULTIPLE` - copy rate as a multiple of the threshold
//!   (default 2)
//! * `HEAPSCOPE_SEED` - integer seed for copy sampling, or `det` for the
//!   deterministic countdown (tests only); default is a time-derived seed
//!
//! Embedders attribute allocations and declare scheduling state through the
//! C API in `include/heapscope.h` (`heapscope_set_callsite`,
//! `heapscope_domain_push`/`pop`, `heapscope_set_thread_status`,
//! `heapscope_set_in_call`, `heapscope_safepoint`, `heapscope_flush`).

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::ffi::CStr;
use std::fs::File;
use std::io::LineWriter;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Mutex, OnceLock, PoisonError};

use libc::{c_char, c_int, c_void, size_t};

use heapscope::copyvol::CopyVolumeSampler;
use heapscope::cpu::{FrameInfo, ThreadSnapshot, ThreadStatus, TimerSample};
use heapscope::leak::LeakDetector;
use heapscope::logfmt::{LogConfig, LogTotals, SampleLogWriter, TimerLogWriter};
use heapscope::model::{Callsite, EventKind, SampleKind, SampleRecord, ThreadId};
use heapscope::threshold::{choose_sampling_threshold, ThresholdSampler, DEFAULT_SAMPLING_THRESHOLD};

extern "C" {
    #[link_name = "__libc_malloc"]
    fn libc_malloc(size: size_t) -> *mut c_void;
    #[link_name = "__libc_calloc"]
    fn libc_calloc(count: size_t, element_size: size_t) -> *mut c_void;
    #[link_name = "__libc_realloc"]
    fn libc_realloc(ptr: *mut c_void, size: size_t) -> *mut c_void;
    #[link_name = "__libc_free"]
    fn libc_free(ptr: *mut c_void);
    #[link_name = "__libc_memalign"]
    fn libc_memalign(alignment: size_t, size: size_t) -> *mut c_void;
}

pub const HEAPSCOPE_OK: c_int = 0;
pub const HEAPSCOPE_ERR_INVALID: c_int = -1;
pub const HEAPSCOPE_ERR_IMBALANCE: c_int = -2;

pub const HEAPSCOPE_DOMAIN_NATIVE: c_int = 0;
pub const HEAPSCOPE_DOMAIN_MANAGED: c_int = 1;

pub const HEAPSCOPE_THREAD_EXECUTING: c_int = 0;
pub const HEAPSCOPE_THREAD_SLEEPING: c_int = 1;

// --- thread-local state ----------------------------------------------------

/// Managed/native scopes as a bit stack: no heap, no drop glue, safe to
/// touch from any allocator context.
#[derive(Clone, Copy, Default)]
struct DomainStack {
    bits: u32,
    depth: u8,
}

impl DomainStack {
    fn push(&mut self, managed: bool) -> bool {
        if self.depth as u32 >= u32::BITS {
            return false;
        }
        self.bits = (self.bits << 1) | managed as u32;
        self.depth += 1;
        true
    }

    fn pop(&mut self) -> bool {
        if self.depth == 0 {
            return false;
        }
        self.bits >>= 1;
        self.depth -= 1;
        true
    }

    fn managed(&self) -> bool {
        self.depth > 0 && self.bits & 1 == 1
    }
}

#[derive(Default)]
struct CallsiteSlot {
    // pointer identity of the last `file` argument, to skip re-parsing
    cached_ptr: usize,
    cached_line: u32,
    site: Option<Callsite>,
}

/// Per-thread hot state, one TLS block so the allocator fast path resolves
/// thread storage exactly once per call.
///
/// Byte counts accumulate here without any synchronization and fold into
/// the global sampler once `pending_alloc + pending_freed` reaches the
/// flush quantum (a fraction of the sampling threshold), so the common
/// path is plain arithmetic. A thread can hold back less than one quantum
/// of unflushed bytes at any time.
struct TlsState {
    in_profiler: Cell<bool>,
    domain: Cell<DomainStack>,
    pending_alloc: Cell<u64>,
    pending_managed: Cell<u64>,
    pending_freed: Cell<u64>,
    pending_alloc_events: Cell<u64>,
    pending_free_events: Cell<u64>,
}

thread_local! {
    static TLS: TlsState = const {
        TlsState {
            in_profiler: Cell::new(false),
            domain: Cell::new(DomainStack { bits: 0, depth: 0 }),
            pending_alloc: Cell::new(0),
            pending_managed: Cell::new(0),
            pending_freed: Cell::new(0),
            pending_alloc_events: Cell::new(0),
            pending_free_events: Cell::new(0),
        }
    };
    static CALLSITE: RefCell<CallsiteSlot> = RefCell::new(CallsiteSlot::default());
}

/// Runs `f` with the in-profiler flag held. Returns `None` without running
/// `f` when the thread is already inside profiler code (or its TLS is gone
/// during teardown); callers must then forward untouched.
#[inline]
fn enter_recording<R>(f: impl FnOnce(&TlsState) -> R) -> Option<R> {
    TLS.try_with(|t| {
        if t.in_profiler.get() {
            None
        } else {
            t.in_profiler.set(true);
            let result = f(t);
            t.in_profiler.set(false);
            Some(result)
        }
    })
    .ok()
    .flatten()
}

/// RAII flavor of the in-profiler flag for the (cold) embedder API.
struct Guard;

impl Guard {
    fn enter() -> Option<Guard> {
        let entered = TLS.try_with(|t| {
            if t.in_profiler.get() {
                false
            } else {
                t.in_profiler.set(true);
                true
            }
        });
        match entered {
            Ok(true) => Some(Guard),
            _ => None,
        }
    }
}

impl Drop for Guard {
    fn drop(&mut self) {
        let _ = TLS.try_with(|t| t.in_profiler.set(false));
    }
}

// --- global profiler state ---------------------------------------------------

/// Allocator entries forwarded because profiler code was already on the
/// stack. Kept outside the state mutex: the guarded path must stay trivial.
static GUARDED_FORWARDS: AtomicU64 = AtomicU64::new(0);
static WRITE_FAILED: AtomicBool = AtomicBool::new(false);

struct ThreadState {
    status: ThreadStatus,
    in_call: bool,
    callsite: Option<Callsite>,
}

#[derive(Default)]
struct Counters {
    allocs: u64,
    frees: u64,
    copies: u64,
    samples: u64,
    internal_samples: u64,
    unknown_size_frees: u64,
}

struct Core {
    sampler: ThresholdSampler,
    detector: LeakDetector,
    copies: CopyVolumeSampler,
    writer: Option<SampleLogWriter<LineWriter<File>>>,
    timer: Option<TimerLogWriter<LineWriter<File>>>,
    threads: HashMap<u64, ThreadState>,
    last_virtual_ns: u64,
    counters: Counters,
    sealed: bool,
}

struct Profiler {
    core: Mutex<Core>,
    start_mono_ns: u64,
    quantum_ns: u64,
    out_path: std::path::PathBuf,
}

static PROFILER: OnceLock<Profiler> = OnceLock::new();

fn clock_ns(clock: libc::clockid_t) -> u64 {
    let mut ts = libc::timespec {
        tv_sec: 0,
        tv_nsec: 0,
    };
    unsafe {
        libc::clock_gettime(clock, &mut ts);
    }
    ts.tv_sec as u64 * 1_000_000_000 + ts.tv_nsec as u64
}

fn now_mono_ns() -> u64 {
    clock_ns(libc::CLOCK_MONOTONIC)
}

fn now_virtual_ns() -> u64 {
    clock_ns(libc::CLOCK_PROCESS_CPUTIME_ID)
}

fn parse_env_u64(name: &str) -> Option<u64> {
    match std::env::var(name) {
        Ok(value) => match value.trim().parse() {
            Ok(n) => Some(n),
            Err(_) => {
                eprintln!("heapscope: ignoring bad {name}={value}");
                None
            }
        },
        Err(_) => None,
    }
}

/// Builds the profiler on first use. Runs with the guard held, so its own
/// allocations are forwarded straight to glibc.
fn init_profiler() -> Profiler {
    let pid = std::process::id();
    let out_path = std::env::var_os("HEAPSCOPE_OUT")
        .map(Into::into)
        .unwrap_or_else(|| std::path::PathBuf::from(format!("heapscope-{pid}.out")));

    let threshold = parse_env_u64("HEAPSCOPE_THRESHOLD")
        .map(choose_sampling_threshold)
        .unwrap_or(DEFAULT_SAMPLING_THRESHOLD);
    let copy_rate_multiple = parse_env_u64("HEAPSCOPE_COPY_MULTIPLE")
        .filter(|&m| m >= 1)
        .unwrap_or(2);

    // `det` selects the deterministic countdown; otherwise seeded geometric
    // draws, from the env seed or from the clock.
    let seed = match std::env::var("HEAPSCOPE_SEED") {
        Ok(s) if s.trim() == "det" => None,
        Ok(s) => match s.trim().parse() {
            Ok(n) => Some(n),
            Err(_) => {
                eprintln!("heapscope: ignoring bad HEAPSCOPE_SEED={s}");
                Some(now_mono_ns() ^ pid as u64)
            }
        },
        Err(_) => Some(now_mono_ns() ^ pid as u64),
    };

    let quantum_ns = 10_000_000; // 10 ms
    let log_config = LogConfig {
        threshold_bytes: threshold,
        copy_rate_multiple,
        quantum_ns,
        seed,
    };
    let writer = match File::create(&out_path) {
        Ok(file) => match SampleLogWriter::new(LineWriter::new(file), &log_config) {
            Ok(w) => Some(w),
            Err(e) => {
                eprintln!("heapscope: cannot write header to {}: {e}", out_path.display());
                None
            }
        },
        Err(e) => {
            eprintln!("heapscope: cannot open {}: {e}", out_path.display());
            None
        }
    };

    let r_copy = copy_rate_multiple.saturating_mul(threshold);
    let copies = CopyVolumeSampler::new(r_copy, seed).expect("rate >= 1");

    // Threads hold back less than one flush quantum of unflushed bytes;
    // keep it well under the threshold so crossings are never masked.
    FLUSH_QUANTUM.store(
        (threshold / 8).clamp(1, 256 * 1024),
        Ordering::Relaxed,
    );

    unsafe {
        libc::atexit(finalize_at_exit);
    }

    Profiler {
        core: Mutex::new(Core {
            sampler: ThresholdSampler::new(threshold),
            detector: LeakDetector::new(),
            copies,
            writer,
            timer: None,
            threads: HashMap::new(),
            last_virtual_ns: 0,
            counters: Counters::default(),
            sealed: false,
        }),
        start_mono_ns: now_mono_ns(),
        quantum_ns,
        out_path,
    }
}

fn profiler() -> &'static Profiler {
    PROFILER.get_or_init(init_profiler)
}

/// Eager initialization at library load: even a process that never crosses
/// a flush quantum gets a sample file with header and footer.
#[link_section = ".init_array"]
#[used]
static INIT_ON_LOAD: extern "C" fn() = {
    extern "C" fn init_on_load() {
        let _guard = Guard::enter();
        let _ = profiler();
    }
    init_on_load
};

/// Threads that ever flushed get their tail flushed again at exit, so a
/// dying thread abandons less than one quantum of bytes only if it never
/// produced any.
struct FlushOnExit;

impl Drop for FlushOnExit {
    fn drop(&mut self) {
        let _ = TLS.try_with(|t| {
            if !t.in_profiler.get() {
                t.in_profiler.set(true);
                flush_locals(t, EventKind::Copy, 0, false);
                t.in_profiler.set(false);
            }
        });
    }
}

thread_local! {
    static FLUSH_ON_EXIT: FlushOnExit = const { FlushOnExit };
}

fn lock_core(p: &Profiler) -> std::sync::MutexGuard<'_, Core> {
    p.core.lock().unwrap_or_else(PoisonError::into_inner)
}

fn report_write_error(e: std::io::Error) {
    if !WRITE_FAILED.swap(true, Ordering::Relaxed) {
        eprintln!("heapscope: sample write failed, recording stopped: {e}");
    }
}

fn current_callsite() -> Callsite {
    static UNKNOWN: OnceLock<Callsite> = OnceLock::new();
    let hooked = CALLSITE
        .try_with(|slot| slot.borrow().site.clone())
        .ok()
        .flatten();
    hooked.unwrap_or_else(|| UNKNOWN.get_or_init(|| Callsite::synthetic("<unknown>")).clone())
}

fn write_sample(core: &mut Core, sample: &SampleRecord) {
    core.counters.samples += 1;
    if let Some(writer) = core.writer.as_mut() {
        if let Err(e) = writer.write_sample(sample) {
            core.writer = None;
            report_write_error(e);
        }
    }
}

/// Flush quantum for the per-thread byte accumulators; set from the
/// threshold at init, conservative before that.
static FLUSH_QUANTUM: AtomicU64 = AtomicU64::new(64 * 1024);
/// Mirror of the leak detector's tracked allocation id (0 = none), so the
/// free path can do its identity comparison without taking the state lock.
static TRACKED_ID: AtomicU64 = AtomicU64::new(0);

/// Records one allocation on the fast path: accumulate, flush on quantum.
#[inline]
fn note_alloc(t: &TlsState, size: u64, alloc_id: u64) {
    let pending = t.pending_alloc.get() + size;
    t.pending_alloc.set(pending);
    t.pending_alloc_events.set(t.pending_alloc_events.get() + 1);
    if t.domain.get().managed() {
        t.pending_managed.set(t.pending_managed.get() + size);
    }
    if pending + t.pending_freed.get() >= FLUSH_QUANTUM.load(Ordering::Relaxed) {
        flush_locals(t, EventKind::Alloc, alloc_id, false);
    }
}

/// Records one free on the fast path. The leak check is a single atomic
/// load and comparison; only a match (almost never) takes the lock.
#[inline]
fn note_free(t: &TlsState, size: u64, alloc_id: u64) {
    let pending = t.pending_freed.get() + size;
    t.pending_freed.set(pending);
    t.pending_free_events.set(t.pending_free_events.get() + 1);
    if size == 0 {
        // size query came back empty; the free still forwards and counts
        // as zero bytes
        unknown_size_free();
    }
    if TRACKED_ID.load(Ordering::Relaxed) == alloc_id {
        tracked_free(alloc_id);
    }
    if t.pending_alloc.get() + pending >= FLUSH_QUANTUM.load(Ordering::Relaxed) {
        flush_locals(t, EventKind::Free, alloc_id, false);
    }
}

#[cold]
fn unknown_size_free() {
    let p = profiler();
    let mut core = lock_core(p);
    core.counters.unknown_size_frees += 1;
}

#[cold]
fn tracked_free(alloc_id: u64) {
    let p = profiler();
    let mut core = lock_core(p);
    core.detector.on_free(alloc_id);
}

/// Folds this thread's pending bytes into the global sampler. The half
/// matching the triggering event is applied last so a crossing it causes is
/// attributed to the live allocation id; samples emitted by the other half
/// carry no id (the leak detector then skips tracking rather than adopt a
/// stale pointer).
///
/// `entry_was_guarded` is threaded through to the emission point: a sample
/// charged to a guarded entry would mean the reentrancy protection failed,
/// and is counted as such.
#[cold]
fn flush_locals(t: &TlsState, trigger: EventKind, trigger_id: u64, entry_was_guarded: bool) {
    // register the exit-time flush for this thread (no-op once initialized)
    let _ = FLUSH_ON_EXIT.try_with(|_| ());
    let alloc_bytes = t.pending_alloc.replace(0);
    let managed_bytes = t.pending_managed.replace(0);
    let freed_bytes = t.pending_freed.replace(0);
    let alloc_events = t.pending_alloc_events.replace(0);
    let free_events = t.pending_free_events.replace(0);
    if alloc_bytes == 0 && freed_bytes == 0 && alloc_events == 0 && free_events == 0 {
        return;
    }

    let p = profiler();
    let mut core = lock_core(p);
    if core.sealed {
        return;
    }
    core.counters.allocs += alloc_events;
    core.counters.frees += free_events;

    let native_bytes = alloc_bytes - managed_bytes;
    let halves: [(EventKind, u64, bool); 3] = match trigger {
        EventKind::Free => [
            (EventKind::Alloc, native_bytes, false),
            (EventKind::Alloc, managed_bytes, true),
            (EventKind::Free, freed_bytes, false),
        ],
        _ => [
            (EventKind::Free, freed_bytes, false),
            (EventKind::Alloc, managed_bytes, true),
            (EventKind::Alloc, native_bytes, false),
        ],
    };
    for (kind, bytes, managed) in halves {
        if bytes == 0 {
            continue;
        }
        let crossing = core
            .sampler
            .apply(kind, bytes, managed, now_mono_ns)
            .expect("alloc/free only");
        if let Some(c) = crossing {
            let id = (kind == trigger).then_some(trigger_id);
            emit_sample(&mut core, c, id, entry_was_guarded);
        }
    }
}

#[cold]
fn emit_sample(
    core: &mut Core,
    c: heapscope::threshold::Crossing,
    alloc_id: Option<u64>,
    entry_was_guarded: bool,
) {
    if entry_was_guarded {
        core.counters.internal_samples += 1;
    }
    let sample = SampleRecord {
        kind: c.kind,
        timestamp_ns: c.timestamp_ns,
        net_delta: c.net_delta,
        footprint: c.footprint,
        peak_footprint: c.peak_footprint,
        managed_fraction: c.managed_fraction,
        callsite: current_callsite(),
        alloc_id,
    };
    if sample.kind == SampleKind::Growth {
        core.detector.on_growth_sample(&sample);
        TRACKED_ID.store(
            core.detector.tracked().map_or(0, |t| t.alloc_id),
            Ordering::Relaxed,
        );
    }
    write_sample(core, &sample);
}

fn record_copy(n: u64) {
    let p = profiler();
    let mut core = lock_core(p);
    if core.sealed {
        return;
    }
    core.counters.copies += 1;
    let callsite = current_callsite();
    let mut records = core.copies.record_copy(n, &callsite, now_mono_ns());
    if records.is_empty() {
        return;
    }
    let footprint = core.sampler.footprint();
    let peak = core.sampler.peak_footprint();
    for r in &mut records {
        r.footprint = footprint;
        r.peak_footprint = peak;
    }
    for r in records {
        write_sample(&mut core, &r);
    }
}

fn usable_size(ptr: *mut c_void) -> u64 {
    if ptr.is_null() {
        0
    } else {
        unsafe { libc::malloc_usable_size(ptr) as u64 }
    }
}

extern "C" fn finalize_at_exit() {
    finalize();
}

fn finalize() {
    let Some(p) = PROFILER.get() else { return };
    let _guard = Guard::enter(); // may be None during teardown; proceed anyway

    // Fold this thread's pending bytes in first. `Copy` matches neither
    // flush half, so any samples this forces carry no allocation id.
    let _ = TLS.try_with(|t| flush_locals(t, EventKind::Copy, 0, false));

    let mut core = lock_core(p);
    if core.sealed {
        return;
    }
    core.sealed = true;

    let scores: Vec<_> = {
        let mut scores: Vec<_> = core
            .detector
            .scores()
            .iter()
            .map(|(cs, s)| (cs.clone(), *s))
            .collect();
        scores.sort_by(|a, b| a.0.cmp(&b.0));
        scores
    };
    let totals = LogTotals {
        events: core.counters.allocs + core.counters.frees + core.counters.copies,
        alloc_events: core.counters.allocs,
        free_events: core.counters.frees,
        copy_events: core.counters.copies,
        samples: core.counters.samples,
        peak_footprint: core.sampler.peak_footprint(),
        elapsed_ns: now_mono_ns().saturating_sub(p.start_mono_ns),
        guarded_forwards: GUARDED_FORWARDS.load(Ordering::Relaxed),
        internal_samples: core.counters.internal_samples,
        unknown_size_frees: core.counters.unknown_size_frees,
    };
    if let Some(writer) = core.writer.take() {
        let write_all = move || -> std::io::Result<()> {
            let mut writer = writer;
            for (cs, score) in &scores {
                writer.write_leak_score(cs, *score)?;
            }
            writer.finish(&totals)?;
            Ok(())
        };
        if let Err(e) = write_all() {
            report_write_error(e);
        }
    }
    if let Some(timer) = core.timer.take() {
        if let Err(e) = timer.finish() {
            report_write_error(e);
        }
    }
}

// --- interposed allocator symbols -------------------------------------------

#[inline]
fn record_alloc_entry(ptr: *mut c_void) {
    let recorded = enter_recording(|t| note_alloc(t, usable_size(ptr), ptr as u64));
    if recorded.is_none() {
        GUARDED_FORWARDS.fetch_add(1, Ordering::Relaxed);
    }
}

#[no_mangle]
pub extern "C" fn malloc(size: size_t) -> *mut c_void {
    let ptr = unsafe { libc_malloc(size) };
    if !ptr.is_null() {
        record_alloc_entry(ptr);
    }
    ptr
}

#[no_mangle]
pub extern "C" fn calloc(count: size_t, element_size: size_t) -> *mut c_void {
    let ptr = unsafe { libc_calloc(count, element_size) };
    if !ptr.is_null() {
        record_alloc_entry(ptr);
    }
    ptr
}

/// # Safety
/// `ptr` must be null or a pointer obtained from this allocator family.
#[no_mangle]
pub unsafe extern "C" fn free(ptr: *mut c_void) {
    if ptr.is_null() {
        unsafe { libc_free(ptr) };
        return;
    }
    let recorded = enter_recording(|t| {
        // bookkeeping first: the address may be recycled the instant glibc
        // gets it back
        note_free(t, usable_size(ptr), ptr as u64);
        unsafe { libc_free(ptr) };
    });
    if recorded.is_none() {
        GUARDED_FORWARDS.fetch_add(1, Ordering::Relaxed);
        unsafe { libc_free(ptr) };
    }
}

/// # Safety
/// Same contract as libc `realloc`.
#[no_mangle]
pub unsafe extern "C" fn realloc(ptr: *mut c_void, size: size_t) -> *mut c_void {
    let recorded = enter_recording(|t| {
        let old_size = usable_size(ptr);
        let new_ptr = unsafe { libc_realloc(ptr, size) };
        // Model as free(old) + alloc(new). glibc frees on success, and
        // always when size == 0; a failed grow (null result, size > 0)
        // leaves the old allocation untouched.
        if !ptr.is_null() && (size == 0 || !new_ptr.is_null()) {
            note_free(t, old_size, ptr as u64);
        }
        if !new_ptr.is_null() && size > 0 {
            note_alloc(t, usable_size(new_ptr), new_ptr as u64);
        }
        new_ptr
    });
    match recorded {
        Some(new_ptr) => new_ptr,
        None => {
            GUARDED_FORWARDS.fetch_add(1, Ordering::Relaxed);
            unsafe { libc_realloc(ptr, size) }
        }
    }
}

/// # Safety
/// Same contract as POSIX `posix_memalign`.
#[no_mangle]
pub unsafe extern "C" fn posix_memalign(
    memptr: *mut *mut c_void,
    alignment: size_t,
    size: size_t,
) -> c_int {
    if memptr.is_null()
        || !alignment.is_power_of_two()
        || !alignment.is_multiple_of(std::mem::size_of::<*mut c_void>())
    {
        return libc::EINVAL;
    }
    let ptr = unsafe { libc_memalign(alignment, size) };
    if ptr.is_null() {
        return libc::ENOMEM;
    }
    unsafe { *memptr = ptr };
    record_alloc_entry(ptr);
    0
}

#[no_mangle]
pub extern "C" fn aligned_alloc(alignment: size_t, size: size_t) -> *mut c_void {
    memalign(alignment, size)
}

#[no_mangle]
pub extern "C" fn memalign(alignment: size_t, size: size_t) -> *mut c_void {
    let ptr = unsafe { libc_memalign(alignment, size) };
    if !ptr.is_null() {
        record_alloc_entry(ptr);
    }
    ptr
}

/// # Safety
/// Same contract as libc `memcpy`: non-overlapping regions valid for `n`.
#[no_mangle]
pub unsafe extern "C" fn memcpy(dst: *mut c_void, src: *const c_void, n: size_t) -> *mut c_void {
    // memmove handles the non-overlap case identically and is not
    // interposed here, so forwarding needs no symbol lookup.
    let result = unsafe { libc::memmove(dst, src, n) };
    if n > 0 {
        let recorded = enter_recording(|_t| record_copy(n as u64));
        if recorded.is_none() {
            GUARDED_FORWARDS.fetch_add(1, Ordering::Relaxed);
        }
    }
    result
}

// --- embedder API ------------------------------------------------------------

/// Attributes subsequent events on this thread to `file:line`. Pass the same
/// pointer repeatedly to skip re-parsing. Clears on `heapscope_clear_callsite`.
///
/// # Safety
/// `file` must be null or a NUL-terminated string valid for the call.
#[no_mangle]
pub unsafe extern "C" fn heapscope_set_callsite(file: *const c_char, line: u32) -> c_int {
    if file.is_null() || line == 0 {
        return HEAPSCOPE_ERR_INVALID;
    }
    let _guard = Guard::enter();
    let result = CALLSITE.try_with(|slot| {
        let mut slot = slot.borrow_mut();
        if slot.cached_ptr == file as usize && slot.cached_line == line && slot.site.is_some() {
            return HEAPSCOPE_OK;
        }
        let text = match unsafe { CStr::from_ptr(file) }.to_str() {
            Ok(s) if !s.is_empty() => s,
            _ => return HEAPSCOPE_ERR_INVALID,
        };
        match Callsite::new(text, line) {
            Ok(site) => {
                slot.cached_ptr = file as usize;
                slot.cached_line = line;
                slot.site = Some(site);
                HEAPSCOPE_OK
            }
            Err(_) => HEAPSCOPE_ERR_INVALID,
        }
    });
    result.unwrap_or(HEAPSCOPE_ERR_INVALID)
}

#[no_mangle]
pub extern "C" fn heapscope_clear_callsite() {
    let _guard = Guard::enter();
    let _ = CALLSITE.try_with(|slot| {
        let mut slot = slot.borrow_mut();
        slot.cached_ptr = 0;
        slot.cached_line = 0;
        slot.site = None;
    });
}

/// Opens a managed/native attribution scope on this thread.
#[no_mangle]
pub extern "C" fn heapscope_domain_push(domain: c_int) -> c_int {
    let managed = match domain {
        HEAPSCOPE_DOMAIN_NATIVE => false,
        HEAPSCOPE_DOMAIN_MANAGED => true,
        _ => return HEAPSCOPE_ERR_INVALID,
    };
    let pushed = TLS.try_with(|t| {
        let mut stack = t.domain.get();
        let ok = stack.push(managed);
        t.domain.set(stack);
        ok
    });
    match pushed {
        Ok(true) => HEAPSCOPE_OK,
        Ok(false) => HEAPSCOPE_ERR_IMBALANCE,
        Err(_) => HEAPSCOPE_ERR_INVALID,
    }
}

#[no_mangle]
pub extern "C" fn heapscope_domain_pop() -> c_int {
    let popped = TLS.try_with(|t| {
        let mut stack = t.domain.get();
        let ok = stack.pop();
        t.domain.set(stack);
        ok
    });
    match popped {
        Ok(true) => HEAPSCOPE_OK,
        Ok(false) => HEAPSCOPE_ERR_IMBALANCE,
        Err(_) => HEAPSCOPE_ERR_INVALID,
    }
}

fn update_thread_state(f: impl FnOnce(&mut ThreadState)) {
    let tid = unsafe { libc::gettid() } as u64;
    let callsite = CALLSITE
        .try_with(|slot| slot.borrow().site.clone())
        .ok()
        .flatten();
    let p = profiler();
    let mut core = lock_core(p);
    let entry = core.threads.entry(tid).or_insert(ThreadState {
        status: ThreadStatus::Executing,
        in_call: false,
        callsite: None,
    });
    if callsite.is_some() {
        entry.callsite = callsite;
    }
    f(entry);
}

/// Declares this thread executing (0) or sleeping (1); sleeping threads
/// receive no CPU attribution. Threads may appear at any time.
#[no_mangle]
pub extern "C" fn heapscope_set_thread_status(status: c_int) -> c_int {
    let status = match status {
        HEAPSCOPE_THREAD_EXECUTING => ThreadStatus::Executing,
        HEAPSCOPE_THREAD_SLEEPING => ThreadStatus::Sleeping,
        _ => return HEAPSCOPE_ERR_INVALID,
    };
    let Some(_guard) = Guard::enter() else {
        return HEAPSCOPE_ERR_INVALID;
    };
    update_thread_state(|t| t.status = status);
    HEAPSCOPE_OK
}

/// Marks this thread as sitting in a call into native code (nonzero) or not.
#[no_mangle]
pub extern "C" fn heapscope_set_in_call(in_call: c_int) -> c_int {
    let Some(_guard) = Guard::enter() else {
        return HEAPSCOPE_ERR_INVALID;
    };
    update_thread_state(|t| t.in_call = in_call != 0);
    HEAPSCOPE_OK
}

/// Safe point for CPU timing. The embedder's interpreter loop calls this
/// regularly; once a quantum of virtual time has elapsed since the last
/// sample, the call becomes the (deferred) timer delivery, and any delay
/// beyond the quantum is attributed to native execution. Timer samples are
/// appended to `<out>.timer` for `heapscope report --timer-log`.
#[no_mangle]
pub extern "C" fn heapscope_safepoint() {
    let Some(_guard) = Guard::enter() else { return };
    let p = profiler();
    let now = now_virtual_ns();
    let tid = unsafe { libc::gettid() } as u64;
    let main_stack = CALLSITE
        .try_with(|slot| slot.borrow().site.clone())
        .ok()
        .flatten()
        .map(|callsite| {
            vec![FrameInfo {
                callsite,
                in_profiled_code: true,
            }]
        })
        .unwrap_or_default();

    let mut core = lock_core(p);
    if core.sealed {
        return;
    }
    if core.last_virtual_ns == 0 {
        core.last_virtual_ns = now;
        return;
    }
    let elapsed = now.saturating_sub(core.last_virtual_ns);
    if elapsed < p.quantum_ns {
        return;
    }
    core.last_virtual_ns = now;

    let thread_snapshots: Vec<ThreadSnapshot> = core
        .threads
        .iter()
        .filter(|(&other_tid, _)| other_tid != tid)
        .map(|(&other_tid, state)| ThreadSnapshot {
            thread: ThreadId(other_tid),
            status: state.status,
            callsite: state
                .callsite
                .clone()
                .unwrap_or_else(|| Callsite::synthetic("<unknown>")),
            in_call: state.in_call,
        })
        .collect();
    let sample = TimerSample {
        elapsed_virtual_ns: elapsed,
        quantum_ns: p.quantum_ns,
        main_stack,
        thread_snapshots,
    };

    if core.timer.is_none() && !WRITE_FAILED.load(Ordering::Relaxed) {
        let mut timer_path = p.out_path.clone().into_os_string();
        timer_path.push(".timer");
        match File::create(&timer_path) {
            Ok(file) => match TimerLogWriter::new(LineWriter::new(file), p.quantum_ns) {
                Ok(w) => core.timer = Some(w),
                Err(e) => report_write_error(e),
            },
            Err(e) => report_write_error(e),
        }
    }
    if let Some(timer) = core.timer.as_mut() {
        if let Err(e) = timer.write_sample(&sample) {
            core.timer = None;
            report_write_error(e);
        }
    }
}

/// Flushes buffered samples to disk without sealing the log. Also folds the
/// calling thread's pending byte counts into the sampler first.
#[no_mangle]
pub extern "C" fn heapscope_flush() -> c_int {
    let Some(_guard) = Guard::enter() else {
        return HEAPSCOPE_ERR_INVALID;
    };
    let _ = TLS.try_with(|t| flush_locals(t, EventKind::Copy, 0, false));
    let p = profiler();
    let mut core = lock_core(p);
    let mut ok = true;
    if let Some(writer) = core.writer.as_mut() {
        if let Err(e) = writer.flush() {
            core.writer = None;
            report_write_error(e);
            ok = false;
        }
    }
    if let Some(timer) = core.timer.as_mut() {
        if let Err(e) = timer.flush() {
            core.timer = None;
            report_write_error(e);
            ok = false;
        }
    }
    if ok {
        HEAPSCOPE_OK
    } else {
        HEAPSCOPE_ERR_INVALID
    }
}
