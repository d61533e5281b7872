//! heapscope CLI: deterministic trace replay and profile reporting.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use heapscope::logfmt::{self, LogConfig, LogTotals, SampleLogWriter};
use heapscope::model::ProfilerConfig;
use heapscope::replay::{compare_log_sizes, render_replay_json, replay};
use heapscope::report::{self, SortKey};
use heapscope::threshold::choose_sampling_threshold;
use heapscope::tracegen::{generate_trace, parse_trace_spec};

#[derive(Parser)]
#[command(
    name = "heapscope",
    about = "Sampling CPU+memory profiler: trace replay laboratory and report tool",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a recorded or generated allocation trace through the exact
    /// footprint oracle, the threshold sampler, and the rate-based baseline.
    Replay(ReplayArgs),
    /// Aggregate sample files (and an optional timer log) into a profile.
    Report(ReportArgs),
}

#[derive(Args)]
struct ReplayArgs {
    /// Trace file to replay (see `--generate` for the synthetic alternative).
    #[arg(long, value_name = "FILE", conflicts_with = "generate")]
    trace: Option<PathBuf>,
    /// Synthetic trace spec: `churn:pairs=..,size=..,drift=..`,
    /// `staircase:steps=..,step=..`, `leak:rounds=..,step=..`,
    /// `random:events=..,seed=..,max_size=..,callsites=..`.
    #[arg(long, value_name = "SPEC")]
    generate: Option<String>,
    /// Sampling threshold base in bytes; rounded up to the next prime.
    #[arg(long, value_name = "BYTES")]
    threshold: Option<u64>,
    /// Seed for the rate/copy samplers (omit for deterministic countdowns).
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Copy sampling rate multiple.
    #[arg(long, value_name = "N", default_value_t = 2)]
    copy_multiple: u64,
    /// Write the full replay result as JSON.
    #[arg(long, value_name = "FILE")]
    emit_json: Option<PathBuf>,
    /// Write the threshold sampler's output as a sample file.
    #[arg(long, value_name = "FILE")]
    emit_log: Option<PathBuf>,
    /// Save the (generated) trace for later replays.
    #[arg(long, value_name = "FILE")]
    save_trace: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Sample files from one run.
    #[arg(long = "in", value_name = "FILE", num_args = 1.., required_unless_present = "timer_log")]
    inputs: Vec<PathBuf>,
    /// Timer-sample log for the CPU columns.
    #[arg(long, value_name = "FILE")]
    timer_log: Option<PathBuf>,
    /// Row sort key: cpu, peak_mem, copy, or leak_rate.
    #[arg(long, value_name = "KEY", default_value = "cpu")]
    sort: String,
    /// Also write the machine-readable profile document.
    #[arg(long, value_name = "FILE")]
    json: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Replay(args) => run_replay(args),
        Command::Report(args) => run_report(args),
    }
}

fn run_replay(args: ReplayArgs) -> Result<()> {
    let events = match (&args.trace, &args.generate) {
        (Some(path), None) => logfmt::read_trace_file(path)
            .with_context(|| format!("reading trace {}", path.display()))?,
        (None, Some(spec)) => {
            let spec = parse_trace_spec(spec)?;
            generate_trace(&spec)?
        }
        (None, None) => bail!("nothing to replay: pass --trace or --generate"),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };

    if let Some(path) = &args.save_trace {
        let file = File::create(path)
            .with_context(|| format!("creating {}", path.display()))?;
        logfmt::write_trace(BufWriter::new(file), &events)?;
    }

    let mut config = ProfilerConfig::default();
    if let Some(base) = args.threshold {
        config.threshold_bytes = choose_sampling_threshold(base);
    }
    config.copy_rate_multiple = args.copy_multiple.max(1);
    config.deterministic_rng_seed = args.seed;

    let started = Instant::now();
    let result = replay(&events, &config)?;
    let elapsed = started.elapsed();

    println!(
        "replayed {} events in {:.3}s (threshold={} B)",
        result.event_count,
        elapsed.as_secs_f64(),
        result.threshold_bytes
    );
    println!(
        "threshold samples: {}   rate samples: {}   reduction: {}",
        result.threshold_sample_count(),
        result.rate_sample_count,
        if result.threshold_sample_count() > 0 {
            format!(
                "{:.1}x",
                result.rate_sample_count as f64 / result.threshold_sample_count() as f64
            )
        } else {
            "n/a".to_string()
        }
    );
    println!(
        "peak footprint: {} B   final: {} B   max reconstruction error: {} B (< T)",
        result.peak_footprint, result.final_footprint, result.max_reconstruction_error
    );
    if result.copy_sample_count > 0 {
        println!("copy samples: {}", result.copy_sample_count);
    }
    if result.leak_report.is_empty() {
        println!("leak report: empty");
    } else {
        println!("leak report ({} entries):", result.leak_report.len());
        for entry in &result.leak_report {
            println!(
                "  {}  p={:.6}  rate={:.3} MB/s  score=({}, {})",
                entry.callsite,
                entry.probability,
                entry.leak_rate_mb_s,
                entry.score.mallocs,
                entry.score.frees
            );
        }
    }

    let (threshold_log, rate_log) = compare_log_sizes(&events, &config)?;
    println!("log sizes: threshold={threshold_log} B rate={rate_log} B");

    if let Some(path) = &args.emit_json {
        let mut file = File::create(path)
            .with_context(|| format!("creating {}", path.display()))?;
        file.write_all(render_replay_json(&result).as_bytes())?;
        println!("wrote {}", path.display());
    }
    if let Some(path) = &args.emit_log {
        let file = File::create(path)
            .with_context(|| format!("creating {}", path.display()))?;
        let log_config = LogConfig {
            threshold_bytes: config.threshold_bytes,
            copy_rate_multiple: config.copy_rate_multiple,
            quantum_ns: config.quantum_ns(),
            seed: config.deterministic_rng_seed,
        };
        let mut writer = SampleLogWriter::new(BufWriter::new(file), &log_config)?;
        for sample in result.threshold_samples.iter().chain(&result.copy_samples) {
            writer.write_sample(sample)?;
        }
        for (callsite, score) in &result.leak_scores {
            writer.write_leak_score(callsite, *score)?;
        }
        let totals = LogTotals {
            events: result.event_count,
            samples: result.threshold_sample_count() + result.copy_sample_count,
            peak_footprint: result.peak_footprint,
            elapsed_ns: result.elapsed_ns,
            ..Default::default()
        };
        writer.finish(&totals)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn run_report(args: ReportArgs) -> Result<()> {
    let sort: SortKey = args.sort.parse()?;
    let doc = report::aggregate(&args.inputs, args.timer_log.as_deref())?;
    print!("{}", report::render_text(&doc, sort));
    if let Some(path) = &args.json {
        let mut file = File::create(path)
            .with_context(|| format!("creating {}", path.display()))?;
        file.write_all(report::render_json(&doc).as_bytes())?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}
