//! IO, file formats, and command implementations for the `bdpl` binary.
//!
//! The algorithmic core lives in `bdpl-core`; this crate adds everything
//! that touches the outside world: the JSON run config, the raw-interaction
//! reader, the processed-split cache, the versioned checkpoint container,
//! telemetry/metric writers, wall clocks, and the five subcommands.

pub mod cache;
pub mod checkpoint;
pub mod clock;
pub mod commands;
pub mod config;
pub mod ingest;
pub mod report;
