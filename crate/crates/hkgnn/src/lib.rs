//! Next-POI recommendation over a hyper-relational knowledge graph.
//!
//! The pipeline has four stages, each usable on its own:
//!
//! 1. [`data`] ingests raw LBSN files (check-ins, POIs, friendships), applies
//!    the preprocessing conventions (weekly half-hour time slots, multi-level
//!    geohash, side-information binning, chronological 70/10/20 splits), and
//!    can generate deterministic synthetic datasets for experiments.
//! 2. [`hkg`] builds the hyper-relational knowledge graph (n-ary facts over a
//!    shared entity vocabulary) and its clique-expansion adjacency.
//! 3. [`embed`] learns entity/relation vectors from the facts with the
//!    HSimplE score and negative sampling; [`gnn`] refines them with a
//!    graph-attention network over the expanded adjacency.
//! 4. [`asm`] trains the attention encoder/decoder that ranks candidate POIs
//!    for a user at a query time; [`eval`] computes Acc@K / MRR / AR reports.
//!
//! Everything is driven by a single [`config::RunConfig`] and a single seed;
//! all stages are deterministic and checkpointable. The `examples/` directory
//! walks through each capability; the `hkgnn` binary wires the same library
//! calls into a command line.

pub mod asm;
pub mod checkpoint;
pub mod config;
pub mod container;
pub mod data;
pub mod embed;
pub mod error;
pub mod eval;
pub mod geo;
pub mod gnn;
pub mod hkg;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
