//! Packet-level, slot-synchronous simulation of random multi-hop ad hoc
//! networks on the sphere of unit area, together with checkers for the
//! geometric and SINR bounds that govern their throughput scaling.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod engine;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod link;
pub mod rng;
pub mod routing;
pub mod schedule;
pub mod stats;
pub mod tessellation;
pub mod verify;

pub use error::{Error, Result};
