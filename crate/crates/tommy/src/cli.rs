//! Command implementations behind the `tommy` binary. Each one reads
//! files, runs the library, and writes to the supplied streams, so they are
//! testable without a process boundary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::clock::{preceding_prob, ClockModel};
use crate::error::{Error, Result};
use crate::formats;
use crate::online::{OnlineConfig, OnlineSequencer};
use crate::order::sequence_report;
use crate::sim::run_sweep;

/// Pairwise preceding probability between one timestamp from each of two
/// clients. Prints the probability and which evaluation path produced it.
pub fn cmd_probe(
    models_path: &Path,
    client_i: &str,
    client_j: &str,
    t_i: f64,
    t_j: f64,
    resolution: f64,
    out: &mut dyn Write,
) -> Result<()> {
    let models = formats::parse_models(&fs::read_to_string(models_path)?)?;
    let ci = models
        .get(client_i)
        .ok_or_else(|| Error::UnknownClient(client_i.to_string()))?;
    let cj = models
        .get(client_j)
        .ok_or_else(|| Error::UnknownClient(client_j.to_string()))?;
    let p = preceding_prob(t_i, t_j, ci, cj, resolution)?;
    let path = match (ci, cj) {
        (ClockModel::Gaussian { .. }, ClockModel::Gaussian { .. }) => "closed-form",
        _ => "empirical",
    };
    writeln!(out, "{p:.6} {path}")?;
    Ok(())
}

/// Order a message file into ranked batches (JSON). The number of edges
/// dropped by cycle breaking goes to the status stream.
pub fn cmd_order(
    messages_path: &Path,
    models_path: &Path,
    threshold: f64,
    resolution: f64,
    mut out: &mut dyn Write,
    status: &mut dyn Write,
) -> Result<()> {
    let models = formats::parse_models(&fs::read_to_string(models_path)?)?;
    let messages = formats::parse_messages(&fs::read_to_string(messages_path)?)?;
    let report = sequence_report(&messages, &models, threshold, resolution)?;
    formats::write_sequenced_json(&mut out, &report.output)?;
    writeln!(status, "cycle edges removed: {}", report.removed_edges.len())?;
    Ok(())
}

/// Replay an event trace through the online sequencer, writing the
/// emission log. An empty trace produces an empty log.
pub fn cmd_replay(
    trace_path: &Path,
    models_path: &Path,
    config: OnlineConfig,
    mut out: &mut dyn Write,
) -> Result<()> {
    let models = formats::parse_models(&fs::read_to_string(models_path)?)?;
    let events = formats::parse_trace(&fs::read_to_string(trace_path)?)?;
    if events.is_empty() {
        return Ok(());
    }
    let mut seq = OnlineSequencer::new(models, config)?;
    let mut emitted = Vec::new();
    for (line, event) in events {
        let released = seq.ingest(event).map_err(|e| match e {
            Error::Parse { .. } | Error::Protocol { .. } => e,
            other => Error::Protocol { line, msg: other.to_string() },
        })?;
        emitted.extend(released);
    }
    formats::write_emission_log(&mut out, &emitted, seq.violations())?;
    Ok(())
}

/// Run a sweep from a config (or a previous run's manifest), write the CSV
/// and a manifest sidecar that reproduces the run.
pub fn cmd_simulate(
    config_path: &Path,
    output_path: &Path,
    seed_override: Option<u64>,
    status: &mut dyn Write,
) -> Result<()> {
    let mut cfg = formats::parse_sweep_input(&fs::read_to_string(config_path)?)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    let rows = run_sweep(&cfg)?;

    let mut csv = Vec::new();
    formats::write_sweep_csv(&mut csv, &rows)?;
    fs::write(output_path, &csv)?;

    let manifest = formats::RunManifest::new(cfg);
    let manifest_path = manifest_sidecar(output_path);
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;

    writeln!(status, "wrote {} rows to {}", rows.len(), output_path.display())?;
    writeln!(status, "manifest: {}", manifest_path.display())?;
    Ok(())
}

/// `results.csv` gets `results.manifest.json` next to it.
pub fn manifest_sidecar(output: &Path) -> PathBuf {
    output.with_extension("manifest.json")
}
