//! Shared plumbing for the live-shim integration and acceptance suites:
//! building the preloadable library, running the workload binary under it,
//! and parsing what comes back.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};

use heapscope::logfmt::{self, SampleLog};

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .expect("workspace root")
}

/// Path to the release build of the preloadable shim, building it if needed.
/// The shim is always exercised optimized; the overhead bound would be
/// meaningless for a debug build.
pub fn shim_path() -> &'static Path {
    static SHIM: OnceLock<PathBuf> = OnceLock::new();
    SHIM.get_or_init(|| {
        let root = workspace_root();
        let cargo = std::env::var_os("CARGO").unwrap_or_else(|| "cargo".into());
        let status = Command::new(cargo)
            .args(["build", "--release", "-p", "heapscope-shim"])
            .current_dir(&root)
            .status()
            .expect("spawn cargo build for the shim");
        assert!(status.success(), "shim build failed");
        let so = root.join("target/release/libheapscope_shim.so");
        assert!(so.exists(), "missing {}", so.display());
        so
    })
}

pub fn workload_bin() -> &'static str {
    env!("CARGO_BIN_EXE_heapscope-workload")
}

pub fn heapscope_bin() -> &'static str {
    env!("CARGO_BIN_EXE_heapscope")
}

/// Serializes the timing-sensitive and CPU-heavy tests so they do not skew
/// each other's measurements.
pub fn bench_lock() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(std::sync::PoisonError::into_inner)
}

pub struct ShimRun {
    pub stdout: String,
    pub log: SampleLog,
    pub out_path: PathBuf,
    pub timer_path: PathBuf,
}

/// Runs the workload under the preloaded shim and parses the sample file.
pub fn run_under_shim(dir: &Path, envs: &[(&str, &str)], args: &[&str]) -> ShimRun {
    let out_path = dir.join("shim.out");
    let mut timer_path = out_path.clone().into_os_string();
    timer_path.push(".timer");
    let output = Command::new(workload_bin())
        .args(args)
        .env("LD_PRELOAD", shim_path())
        .env("HEAPSCOPE_OUT", &out_path)
        .envs(envs.iter().copied())
        .output()
        .expect("spawn workload under shim");
    assert!(
        output.status.success(),
        "workload failed: {}\n{}",
        output.status,
        String::from_utf8_lossy(&output.stderr)
    );
    let log = logfmt::read_sample_log_file(&out_path).expect("parse shim sample file");
    ShimRun {
        stdout: String::from_utf8_lossy(&output.stdout).into_owned(),
        log,
        out_path,
        timer_path: timer_path.into(),
    }
}

/// Runs the workload without the shim.
pub fn run_plain(args: &[&str]) -> String {
    let output = Command::new(workload_bin())
        .args(args)
        .output()
        .expect("spawn workload");
    assert!(output.status.success(), "workload failed: {}", output.status);
    String::from_utf8_lossy(&output.stdout).into_owned()
}

/// Pulls `key=value` integers out of workload stdout.
pub fn stdout_field(stdout: &str, key: &str) -> u64 {
    stdout
        .split_whitespace()
        .find_map(|tok| tok.strip_prefix(&format!("{key}=")))
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| panic!("no {key}= in output: {stdout}"))
}
