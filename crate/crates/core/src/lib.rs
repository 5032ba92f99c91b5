//! Core algorithms for a behavior-aware dual-channel preference learning
//! recommender over heterogeneous (examination / purchase) interaction
//! sequences.
//!
//! The crate is `no_std` + `alloc`: everything here is pure computation over
//! owned buffers. File formats, the CLI, and wall-clock timing live in the
//! companion `bdpl` crate.
//!
//! Pipeline, bottom to top:
//!
//! * [`numerics`]: dense-tensor tape with reverse-mode gradients, Adam, and
//!   a finite-difference gradient checker.
//! * [`data`]: interaction parsing, preprocessing, leave-one-out splitting,
//!   batching, and synthetic dataset generation.
//! * [`behavior_graph`]: per-sequence transition subgraphs with six typed
//!   relations over the examination and purchase views.
//! * [`graph_encoder`]: relation-attentive propagation with a cascade from
//!   the purchase pass into the examination pass.
//! * [`short_term`] / [`long_term`]: the two preference branches and their
//!   contrastive losses.
//! * [`model`]: parameter set, end-to-end forward, joint loss, training
//!   loop with early stopping.
//! * [`eval`]: full-ranking HR@N / NDCG@N.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod behavior_graph;
pub mod data;
pub mod eval;
pub mod graph_encoder;
pub mod long_term;
pub mod model;
pub mod numerics;
pub mod short_term;
