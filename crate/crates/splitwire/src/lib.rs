//! Host-side companion to `splitwire-core`: real loopback transports, the
//! in-memory link adapter with fault injection, the two-node split-inference
//! session runtime, the OTA rollout demo, and the file formats the CLI
//! reads and writes.

pub mod cli;
pub mod formats;
pub mod ota_runner;
pub mod report;
pub mod session;
pub mod transport;

pub use splitwire_core as core;
