//! Text formats shared by the command-line tools.
//!
//! Clock models travel as a JSON map from client id to model. Message files
//! are line oriented: `id client local_ts [true_ts]`, with `#` comments and
//! blank lines ignored. Event traces are line oriented too:
//!
//! ```text
//! M <client> <local_ts> <id>    message arrival
//! H <client> <local_ts>         heartbeat
//! T <now>                       sequencer clock tick
//! ```
//!
//! Emission logs mirror replay output: one `B <rank> <id,id,...>
//! <emit_time>` line per batch, then a `V <count>` violation trailer.
//! Sweep results are CSV with a fixed column set; every simulate run also
//! writes a JSON manifest that can be fed back to `simulate` to reproduce
//! the run.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::clock::ClockModel;
use crate::error::{Error, Result};
use crate::online::{EmittedBatch, Event};
use crate::order::{ClientId, Message, SequencedOutput};
use crate::sim::{SequencerKind, SweepConfig, SweepRow};

/// Parse and validate a client-to-model map.
pub fn parse_models(text: &str) -> Result<BTreeMap<ClientId, ClockModel>> {
    let models: BTreeMap<ClientId, ClockModel> = serde_json::from_str(text)?;
    for (client, model) in &models {
        model
            .validate()
            .map_err(|e| Error::InvalidConfig(format!("model for {client}: {e}")))?;
    }
    Ok(models)
}

fn parse_f64(token: &str, line: usize, what: &str) -> Result<f64> {
    token.parse::<f64>().map_err(|_| Error::Parse {
        line,
        msg: format!("{what} is not a number: {token}"),
    })
}

/// Parse a message file: `id client local_ts [true_ts]` per line.
pub fn parse_messages(text: &str) -> Result<Vec<Message>> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.len() < 3 || fields.len() > 4 {
            return Err(Error::Parse {
                line,
                msg: format!("expected `id client local_ts [true_ts]`, got {} fields", fields.len()),
            });
        }
        let local_ts = parse_f64(fields[2], line, "local_ts")?;
        let true_ts = match fields.get(3) {
            Some(t) => Some(parse_f64(t, line, "true_ts")?),
            None => None,
        };
        out.push(Message {
            id: fields[0].to_string(),
            client: fields[1].to_string(),
            local_ts,
            true_ts,
        });
    }
    Ok(out)
}

/// Parse an event trace, keeping line numbers for protocol errors.
pub fn parse_trace(text: &str) -> Result<Vec<(usize, Event)>> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        let event = match fields[0] {
            "M" => {
                if fields.len() != 4 {
                    return Err(Error::Parse {
                        line,
                        msg: format!("M takes `client local_ts id`, got {} fields", fields.len() - 1),
                    });
                }
                Event::Arrival(Message {
                    id: fields[3].to_string(),
                    client: fields[1].to_string(),
                    local_ts: parse_f64(fields[2], line, "local_ts")?,
                    true_ts: None,
                })
            }
            "H" => {
                if fields.len() != 3 {
                    return Err(Error::Parse {
                        line,
                        msg: format!("H takes `client local_ts`, got {} fields", fields.len() - 1),
                    });
                }
                Event::Heartbeat {
                    client: fields[1].to_string(),
                    local_ts: parse_f64(fields[2], line, "local_ts")?,
                }
            }
            "T" => {
                if fields.len() != 2 {
                    return Err(Error::Parse {
                        line,
                        msg: format!("T takes `now`, got {} fields", fields.len() - 1),
                    });
                }
                Event::Tick { now: parse_f64(fields[1], line, "now")? }
            }
            tag => {
                return Err(Error::Parse { line, msg: format!("unknown event tag {tag}") });
            }
        };
        out.push((line, event));
    }
    Ok(out)
}

/// Emission log: `B` lines in emission order, then the violation trailer.
pub fn write_emission_log<W: Write>(
    w: &mut W,
    batches: &[EmittedBatch],
    violations: usize,
) -> Result<()> {
    for b in batches {
        writeln!(w, "B {} {} {}", b.rank, b.ids.join(","), b.emit_time)?;
    }
    writeln!(w, "V {violations}")?;
    Ok(())
}

/// Ranked batches as pretty JSON (the `order` command's output).
pub fn write_sequenced_json<W: Write>(w: &mut W, out: &SequencedOutput) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, &out.batches)?;
    writeln!(w)?;
    Ok(())
}

pub const SWEEP_CSV_HEADER: &str = "trial,seed,n_clients,sigma_scale,mean_gap_us,threshold,p_safe,ras_tommy,ras_truetime,ras_wfo,batches_tommy,violations_online";

/// Sweep rows as CSV. Absent measurements (baseline not requested, offline
/// trial without violation counts) become empty cells.
pub fn write_sweep_csv<W: Write>(w: &mut W, rows: &[SweepRow]) -> Result<()> {
    writeln!(w, "{SWEEP_CSV_HEADER}")?;
    for row in rows {
        let r = &row.result;
        let cell_i64 = |v: Option<&i64>| v.map(|x| x.to_string()).unwrap_or_default();
        let cell_usize = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            row.trial,
            r.seed,
            r.config.n_clients,
            row.sigma_scale,
            r.config.mean_gap_us,
            r.config.threshold,
            r.config.p_safe,
            cell_i64(r.ras.get(&SequencerKind::Tommy)),
            cell_i64(r.ras.get(&SequencerKind::Truetime)),
            cell_i64(r.ras.get(&SequencerKind::Wfo)),
            cell_usize(r.batches),
            cell_usize(r.violations),
        )?;
    }
    Ok(())
}

/// Everything needed to reproduce a simulate run. Feeding a manifest file
/// back to `simulate` re-runs its embedded config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub unix_time_s: u64,
    pub config: SweepConfig,
}

impl RunManifest {
    pub fn new(config: SweepConfig) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            unix_time_s: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            config,
        }
    }
}

/// Accept either a bare sweep config or a previously written manifest.
pub fn parse_sweep_input(text: &str) -> Result<SweepConfig> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    if value.get("config").is_some() {
        let manifest: RunManifest = serde_json::from_value(value)?;
        Ok(manifest.config)
    } else {
        Ok(serde_json::from_value(value)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{GapKind, Mode, ModelSource, NetworkModel, TrialResult};

    #[test]
    fn models_roundtrip_and_validate() {
        let text = r#"{
            "c1": {"kind": "gaussian", "mean": 0.0, "std": 0.35},
            "c2": {"kind": "empirical", "bin_edges": [0.0, 1.0], "densities": [1.0]}
        }"#;
        let models = parse_models(text).unwrap();
        assert_eq!(models.len(), 2);
        assert!(models["c2"].validate().is_ok());

        let bad = r#"{"c1": {"kind": "gaussian", "mean": 0.0, "std": -2.0}}"#;
        match parse_models(bad) {
            Err(Error::InvalidConfig(msg)) => assert!(msg.contains("c1"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn message_files_parse_with_comments_and_truth() {
        let text = "\n# header comment\nm1 c1 100.0\nm2 c2 100.6 99.9  # trailing comment\n";
        let msgs = parse_messages(text).unwrap();
        assert_eq!(msgs.len(), 2);
        assert_eq!(msgs[0].id, "m1");
        assert_eq!(msgs[0].true_ts, None);
        assert_eq!(msgs[1].true_ts, Some(99.9));
    }

    #[test]
    fn message_parse_errors_carry_line_numbers() {
        match parse_messages("m1 c1 100.0\nm2 c2\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse_messages("m1 c1 abc\n") {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 1);
                assert!(msg.contains("local_ts"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(parse_messages("m1 c1 1.0 2.0 3.0\n").is_err());
    }

    #[test]
    fn traces_parse_all_event_kinds() {
        let text = "M c1 100.0 1a\nH c1 115\nT 110\n";
        let events = parse_trace(text).unwrap();
        assert_eq!(events.len(), 3);
        assert_eq!(events[0].0, 1);
        assert!(matches!(&events[0].1, Event::Arrival(m) if m.id == "1a" && m.local_ts == 100.0));
        assert!(matches!(&events[1].1, Event::Heartbeat { client, local_ts }
            if client == "c1" && *local_ts == 115.0));
        assert!(matches!(&events[2].1, Event::Tick { now } if *now == 110.0));
    }

    #[test]
    fn trace_parse_errors() {
        for (text, want_line) in [
            ("M c1 100.0\n", 1),
            ("H c1\n", 1),
            ("T\n", 1),
            ("M c1 100.0 a\nX what\n", 2),
            ("T abc\n", 1),
        ] {
            match parse_trace(text) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, want_line, "for {text:?}"),
                other => panic!("expected parse error for {text:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn emission_log_format() {
        let batches = vec![
            EmittedBatch { rank: 0, ids: vec!["1a".into(), "1b".into(), "2".into()], emit_time: 110.0 },
            EmittedBatch { rank: 1, ids: vec!["3".into()], emit_time: 120.5 },
        ];
        let mut buf = Vec::new();
        write_emission_log(&mut buf, &batches, 0).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "B 0 1a,1b,2 110\nB 1 3 120.5\nV 0\n"
        );
    }

    fn tiny_sweep_config() -> SweepConfig {
        SweepConfig {
            n_clients: 2,
            n_messages_per_client: 3,
            sigma_us: vec![1.0],
            mean_gap_us: vec![50.0],
            trials_per_point: 1,
            seed: 5,
            mu_us: 0.0,
            threshold: 0.75,
            p_safe: 0.999,
            resolution_us: 1.0,
            baselines: vec![SequencerKind::Tommy, SequencerKind::Wfo],
            mode: Mode::Offline,
            gap: GapKind::Exponential,
            network: NetworkModel::default(),
            heartbeat_interval_us: None,
        }
    }

    #[test]
    fn csv_rows_with_missing_cells() {
        let cfg = crate::sim::SimConfig {
            n_clients: 2,
            n_messages_per_client: 3,
            mean_gap_us: 50.0,
            rng_seed: 9,
            models: ModelSource::Generator { sigma_range: (1.0, 1.0), mu_range: (0.0, 0.0) },
            gap: GapKind::Exponential,
            threshold: 0.75,
            p_safe: 0.999,
            resolution_us: 1.0,
            baselines: vec![SequencerKind::Tommy],
            mode: Mode::Offline,
            network: NetworkModel::default(),
            heartbeat_interval_us: None,
        };
        let result = TrialResult {
            seed: 9,
            ras: [(SequencerKind::Tommy, 3i64)].into(),
            batches: Some(2),
            mean_batch_size: Some(3.0),
            violations: None,
            post_emission_arrivals: None,
            forced_emissions: None,
            config: cfg,
            wall_time_s: 0.1,
        };
        let rows = vec![SweepRow { trial: 0, sigma_scale: 1.0, result }];
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), SWEEP_CSV_HEADER);
        assert_eq!(lines.next().unwrap(), "0,9,2,1,50,0.75,0.999,3,,,2,");
        assert!(lines.next().is_none());
    }

    #[test]
    fn manifest_feeds_back_as_config() {
        let cfg = tiny_sweep_config();
        let manifest = RunManifest::new(cfg.clone());
        assert_eq!(manifest.seed, 5);
        let json = serde_json::to_string_pretty(&manifest).unwrap();
        let back = parse_sweep_input(&json).unwrap();
        assert_eq!(back, cfg);

        let direct = serde_json::to_string(&cfg).unwrap();
        let again = parse_sweep_input(&direct).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn sweep_config_rejects_unknown_fields() {
        let mut v = serde_json::to_value(tiny_sweep_config()).unwrap();
        v.as_object_mut().unwrap().insert("typo_field".into(), 1.into());
        let text = serde_json::to_string(&v).unwrap();
        assert!(parse_sweep_input(&text).is_err());
    }
}
