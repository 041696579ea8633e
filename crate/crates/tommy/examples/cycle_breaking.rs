//! Pairwise "probably before" is not transitive, so the tournament over
//! messages can contain cycles. This example builds one on purpose and shows
//! how it is broken.
//!
//! The trick is three intransitive offset distributions (the dice that beat
//! each other in a ring): uniform spikes at {2,4,9}, {1,6,8}, {3,5,7}. Each
//! client's message wins against the next with probability 5/9.

use std::collections::BTreeMap;

use tommy::{sequence_report, ClockModel, Message, Tournament};

fn spikes(atoms: [f64; 3]) -> ClockModel {
    let edges: Vec<f64> = atoms.iter().flat_map(|a| [a - 0.1, a + 0.1]).collect();
    let dens: Vec<f64> = (0..edges.len() - 1)
        .map(|k| if k % 2 == 0 { (1.0 / 3.0) / 0.2 } else { 0.0 })
        .collect();
    ClockModel::empirical(edges, dens).unwrap()
}

fn main() -> tommy::Result<()> {
    let models: BTreeMap<String, ClockModel> = [
        ("red".to_string(), spikes([2.0, 4.0, 9.0])),
        ("green".to_string(), spikes([1.0, 6.0, 8.0])),
        ("blue".to_string(), spikes([3.0, 5.0, 7.0])),
    ]
    .into();
    // All three stamped the same local time; only the offsets differ.
    let messages = vec![
        Message::new("R", "red", 0.0),
        Message::new("G", "green", 0.0),
        Message::new("B", "blue", 0.0),
    ];

    let t = Tournament::build(&messages, &models, 0.05)?;
    for (from, to) in [("R", "B"), ("B", "G"), ("G", "R")] {
        println!("P({from} before {to}) = {:.4}", t.edge_weight(from, to).unwrap());
    }
    match t.detect_cycle() {
        Some(cycle) => println!("cycle found: {}", cycle.join(" -> ")),
        None => println!("no cycle (unexpected here)"),
    }

    let report = sequence_report(&messages, &models, 0.75, 0.05)?;
    for e in &report.removed_edges {
        println!("dropped weakest cycle edge {} -> {} (w = {:.4})", e.from, e.to, e.weight);
    }
    // With every surviving edge at 5/9, no boundary clears 0.75: one batch.
    for batch in &report.output.batches {
        println!("rank {}: {}", batch.rank, batch.ids.join(", "));
    }
    Ok(())
}
