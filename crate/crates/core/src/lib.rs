//! Throughput workbench for an IRS-assisted wireless-powered network with
//! external interference.
//!
//! A multi-antenna power beacon charges a single-antenna source through a
//! direct link and an N-element reflecting surface; the source then uses the
//! harvested energy to transmit to a destination, again assisted by the
//! surface, while an interferer degrades both phases. The decision variables
//! are the two surface phase-shift vectors (one per protocol phase) and the
//! time split `tau` between energy transfer and information transfer.
//!
//! The crate is organised around the closed-form throughput expression:
//!
//! * [`channel`] — block-fading channel draws, path-loss model, the cascaded
//!   feature representation consumed by every solver, and the binary dataset
//!   format.
//! * [`evaluator`] — harvested energy, SINR, and throughput from a feature
//!   vector and a candidate configuration; the single source of truth for
//!   the objective.
//! * [`autodiff`] — a reverse-mode tape over real tensors, rich enough to
//!   express the throughput formula and a fully-connected network.
//! * [`irsnet`] — the unsupervised phase-shift network: architecture sizing,
//!   batch-norm forward pass, Adam training against the negative mean
//!   throughput, and checkpoint I/O.
//! * [`baselines`] — a real-coded genetic algorithm, the random-configuration
//!   baseline, and small-instance exhaustive oracles.

pub mod autodiff;
pub mod baselines;
pub mod channel;
pub mod evaluator;
pub mod irsnet;
pub mod rng;
