//! Deterministic simulation and history checking for causally consistent
//! transactional key-value stores.
//!
//! The crate is organised around four pieces:
//!
//! * [`history`]: operation histories and the causal order over them.
//! * [`simnet`]: a seeded discrete-event network simulator that runs protocol
//!   state machines and records histories and message logs.
//! * [`protocol`] and [`protocols`]: the node API and the shipped bindings.
//! * [`checkers`] and [`adversary`]: property checkers over recorded runs and
//!   the scripted executions that drive protocols into corner cases.

pub mod adversary;
mod bits;
pub mod checkers;
pub mod harness;
pub mod history;
pub mod protocol;
pub mod protocols;
pub mod simnet;

pub use bits::BitMatrix;
