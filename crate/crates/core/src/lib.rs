//! Black-box exploration of microarchitectural timing channels.
//!
//! The fuzzer mutates combinations of instruction *classes* (ISA-sets), picks
//! a category-specific mutation space for each combination length, executes
//! paired test cases on an [`backend::ExecutionBackend`] and keeps the
//! combinations whose timing differs. A coverage ledger over class tuples
//! steers mutation away from combinations that were already exercised.
//!
//! The crate ships a deterministic simulated microarchitecture
//! ([`backend::SimBackend`]) with planted channels so that every stage can be
//! exercised without access to real hardware.
//!
//! Module map:
//!
//! * [`catalog`]: instruction list loading, sanitizing, fault filtering and
//!   classification.
//! * [`seed`]: 6-bit-per-slot seed encoding, seed set mutation and the tested
//!   ledger.
//! * [`mutation`]: mutation spaces and data/address/opcode mutators.
//! * [`testcase`]: reset/trigger/measurement layouts and paired test cases.
//! * [`backend`]: the execution contract, simulated backend and the
//!   subprocess wire protocol.
//! * [`pipeline`]: the campaign loop, filter and confirmation.
//! * [`analysis`]: clustering, covert/transient verification and reports.
//! * [`fixtures`]: deterministic generators for the bundled fixtures.

pub mod analysis;
pub mod backend;
pub mod catalog;
pub mod error;
pub mod fixtures;
pub mod mutation;
pub mod pipeline;
pub mod rng;
pub mod seed;
pub mod testcase;

pub use error::{Error, Result};
