//! Order a small message log into ranked batches.
//!
//! Four messages from two clients whose clocks are each good to ~10us.
//! Messages 12us apart get separated; messages 8us apart share a batch
//! because neither order is believable at the 0.75 level.

use std::collections::BTreeMap;

use tommy::{sequence_report, ClockModel, Message};

fn main() -> tommy::Result<()> {
    let mut models = BTreeMap::new();
    models.insert("alpha".to_string(), ClockModel::gaussian(0.0, 10.0)?);
    models.insert("beta".to_string(), ClockModel::gaussian(0.0, 10.0)?);

    let messages = vec![
        Message::new("a", "alpha", 0.0),
        Message::new("b", "beta", 12.0),
        Message::new("c", "alpha", 20.0),
        Message::new("d", "beta", 32.0),
    ];

    let report = sequence_report(&messages, &models, 0.75, 1.0)?;
    println!("removed {} cycle edges", report.removed_edges.len());
    for batch in &report.output.batches {
        println!("rank {}: {}", batch.rank, batch.ids.join(", "));
    }
    for (k, p) in report.output.boundary_ps.iter().enumerate() {
        println!("boundary {}|{} believed at p = {:.3}", k, k + 1, p);
    }

    // Raising the bar to 0.9 erases both boundaries: no adjacent pair is
    // that certain, so everything collapses into one batch.
    let strict = tommy::sequence(&messages, &models, 0.9, 1.0)?;
    println!("at threshold 0.9: {} batch(es)", strict.batches.len());
    Ok(())
}
