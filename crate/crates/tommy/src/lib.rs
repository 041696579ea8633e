//! Probabilistic fair ordering for messages stamped by drifty clocks.
//!
//! A sequencer that receives timestamped messages from clients whose clocks
//! drift can't trust raw timestamp order. This crate models each client's
//! clock offset as a distribution ([`ClockModel`]), computes the probability
//! that one message really happened before another ([`preceding_prob`]), and
//! turns those pairwise probabilities into a total order with explicit
//! confidence structure: messages whose order is uncertain share a batch,
//! batch boundaries carry the probability that justified them.
//!
//! The pieces, bottom up:
//!
//! - [`clock`]: offset distributions, their difference densities (exact for
//!   Gaussians, grid convolution otherwise), and safe-time quantiles.
//! - [`order`]: the offline pipeline. Build a weighted tournament over
//!   messages, break cycles, order topologically, cut into ranked batches
//!   at a confidence threshold. Entry point: [`sequence`].
//! - [`online`]: the streaming version. Buffers arrivals, emits a batch only
//!   once its safe emission time has passed and every client's watermark
//!   covers it. Entry point: [`OnlineSequencer`].
//! - [`sim`]: synthetic workloads, the rank agreement score, baselines
//!   (uncertainty intervals, raw timestamp order), parallel parameter sweeps.
//! - [`formats`] and [`cli`]: the file formats and commands exposed by the
//!   `tommy` binary (`probe`, `order`, `replay`, `simulate`).
//!
//! The `examples/` directory has one runnable walkthrough per capability;
//! start with `pairwise_probability`.

pub mod cli;
pub mod clock;
pub mod error;
pub mod formats;
pub mod online;
pub mod order;
pub mod sim;

pub use clock::{
    difference_pdf, offset_quantile, preceding_prob, preceding_prob_gaussian, ClockModel,
    DifferencePdf,
};
pub use error::{Error, Result};
pub use online::{
    batch_emission_time, safe_time, EmittedBatch, Event, OnlineConfig, OnlineSequencer,
};
pub use order::{
    sequence, sequence_report, ClientId, Message, MessageId, RankedBatch, RemovedEdge,
    SequenceReport, SequencedOutput, Tournament,
};
pub use sim::{
    generate_workload, ras, run_sweep, run_trial, truetime_rank, wfo_rank, GapKind, Mode,
    ModelSource, NetworkModel, SequencerKind, SimConfig, SweepConfig, SweepRow, TrialResult,
};
