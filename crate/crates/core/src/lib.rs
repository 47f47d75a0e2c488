//! Core algorithms for split inference over constrained wireless links.
//!
//! Everything in this crate is pure computation: model catalogs and split
//! planning, affine int8 quantization, the chunked wire frame format, link
//! timing models calibrated from testbed measurements, a small int8 dense
//! inference engine, and the OTA update state machine. IO, sockets, file
//! formats and the CLI live in the companion `splitwire` crate.
//!
//! The crate is `no_std` (with `alloc`) so the same logic can run on the
//! microcontroller side of a deployment.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod catalog;
pub mod frame;
pub mod link;
pub mod message;
pub mod ota;
pub mod planner;
pub mod quant;
pub mod testbed;
pub mod toymodel;

mod math;

pub use catalog::{LayerKind, LayerSpec, ModelGraph};
pub use frame::{Frame, MsgType, Reassembled, Reassembler};
pub use link::{
    Calibration, ConnectionType, LinkModel, Measurement, Protocol, ProtocolProfile, RttBreakdown,
    RttStage, StageTimings, StallModel,
};
pub use planner::{packet_count, split, SplitPlan};
pub use quant::{QuantParams, QuantTensor};
pub use toymodel::{Prediction, ToyModel};
