//! Drive the streaming sequencer by hand: arrivals, heartbeats, ticks.
//!
//! Emission needs two things per batch: the sequencer clock must pass the
//! batch's safe emission time, and every client's watermark must prove no
//! earlier message can still arrive. Watch the second gate hold a batch back.

use std::collections::BTreeMap;

use tommy::{ClockModel, Event, Message, OnlineConfig, OnlineSequencer};

fn main() -> tommy::Result<()> {
    let mut models = BTreeMap::new();
    models.insert("fast".to_string(), ClockModel::gaussian(0.0, 0.35)?);
    models.insert("loose".to_string(), ClockModel::gaussian(0.0, 2.5)?);

    let mut seq = OnlineSequencer::new(models, OnlineConfig::default())?;

    for (client, ts, id) in
        [("fast", 100.0, "f1"), ("loose", 100.6, "l1"), ("fast", 100.3, "f2")]
    {
        seq.ingest(Event::Arrival(Message::new(id, client, ts)))?;
    }
    println!("3 arrivals buffered: {}", seq.buffered());

    // Plenty of wall time, but no heartbeats yet: nothing can go out,
    // because "loose" might still send something stamped before 100.6.
    let out = seq.ingest(Event::Tick { now: 109.0 })?;
    println!("tick 109 before heartbeats: emitted {} batches", out.len());

    // Both clients vouch their clocks moved past the buffered region.
    seq.ingest(Event::Heartbeat { client: "fast".into(), local_ts: 115.0 })?;
    seq.ingest(Event::Heartbeat { client: "loose".into(), local_ts: 120.0 })?;

    for batch in seq.ingest(Event::Tick { now: 110.0 })? {
        println!(
            "tick 110: emitted rank {} [{}] at {}",
            batch.rank,
            batch.ids.join(", "),
            batch.emit_time
        );
    }
    println!(
        "left buffered: {}, ordering violations so far: {}",
        seq.buffered(),
        seq.violations()
    );
    Ok(())
}
