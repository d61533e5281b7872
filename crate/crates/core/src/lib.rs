//! heapscope: a sampling CPU + memory profiling toolkit.
//!
//! The pieces fit together like this:
//!
//! * [`model`] — events, samples, callsites, configuration.
//! * [`threshold`] — threshold-based allocation sampling (emit on
//!   `|allocated - freed| >= T`, reset, repeat) with exact footprint and
//!   peak accounting and the footprint trend series.
//! * [`rate`] — classical geometric-countdown byte sampling, the baseline
//!   the threshold sampler is measured against and the engine behind copy
//!   sampling.
//! * [`leak`] — high-water-mark allocation tracking with Rule-of-Succession
//!   leak scoring and filtered, rate-sorted reports.
//! * [`cpu`] — delay-based attribution of virtual time to managed vs native
//!   execution, with per-thread status flags.
//! * [`copyvol`] — rate-sampled copy volume per callsite in MB/s.
//! * [`logfmt`] — the line-delimited sample, trace, and timer-log formats.
//! * [`tracegen`] — deterministic synthetic trace generators.
//! * [`replay`] — the replay laboratory: exact footprint oracle,
//!   threshold-vs-rate comparison, and leak detection over recorded traces.
//! * [`report`] — aggregation of sample/timer files into per-callsite
//!   profiles with text and JSON rendering.
//!
//! The live interposition shim (preloadable dynamic library) lives in the
//! `heapscope-shim` crate and feeds the same samplers; the `heapscope`
//! binary exposes `replay` and `report` subcommands over these modules.

pub mod copyvol;
pub mod cpu;
pub mod leak;
pub mod logfmt;
pub mod model;
pub mod rate;
pub mod replay;
pub mod report;
pub mod threshold;
pub mod tracegen;
