//! The execution contract and its implementations.
//!
//! The fuzzer only ever talks to an [`ExecutionBackend`]. The simulated
//! backend owns the [`ChannelManifest`]; nothing in the campaign loop can read
//! it.

mod external;
mod manifest;
mod sim;

use serde::{Deserialize, Serialize};

pub use external::{ExecuteRequest, ExecuteResponse, ExternalBackend, Handshake, ProbeRequest, ProbeResponse, Request};
pub use manifest::{
    AddrRelation, ChannelManifest, DataPredicate, DataRule, FaultDef, FaultPredicate, FaultRule, Noise, PersistentRule,
    RuleTarget, VolatileRule,
};
pub use sim::SimBackend;

use crate::catalog::{InitPolicy, InstructionSpec};
use crate::error::Result;
use crate::mutation::ExecLevel;
use crate::rng::Rng;
use crate::testcase::TestCasePair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Signal {
    SIGSEGV,
    SIGILL,
    SIGFPE,
    SIGTRAP,
    SIGBUS,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultOutcome {
    Ok,
    Fault(Signal),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub fault_probe: bool,
    pub levels: Vec<ExecLevel>,
    pub transient: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    Normal,
    /// The trigger runs under speculation and is squashed afterwards.
    Transient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementResult {
    pub median_with: f64,
    pub median_without: f64,
    /// `median_with - median_without`.
    pub diff: f64,
    pub runs: usize,
    pub runs_with: Vec<i64>,
    pub runs_without: Vec<i64>,
}

impl MeasurementResult {
    pub fn from_runs(runs_with: Vec<i64>, runs_without: Vec<i64>) -> Self {
        let median_with = median(&runs_with);
        let median_without = median(&runs_without);
        MeasurementResult {
            median_with,
            median_without,
            diff: median_with - median_without,
            runs: runs_with.len(),
            runs_with,
            runs_without,
        }
    }
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(xs: &[i64]) -> f64 {
    assert!(!xs.is_empty(), "median of nothing");
    let mut v = xs.to_vec();
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] as f64 + v[n / 2] as f64) / 2.0
    }
}

pub fn median_f64(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "median of nothing");
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Anything that can time test case pairs.
///
/// Implementations must be reproducible given the generator state passed to
/// [`execute`](ExecutionBackend::execute) and must tolerate concurrent calls.
pub trait ExecutionBackend: Send + Sync {
    fn capabilities(&self) -> Capabilities;

    /// Executes a single instruction under `init` and reports whether it
    /// faults.
    fn probe_fault(&self, spec: &InstructionSpec, init: &InitPolicy) -> Result<FaultOutcome>;

    /// Runs each side of the pair `runs` times and reports medians.
    fn execute(&self, pair: &TestCasePair, runs: usize, mode: ExecMode, rng: &mut Rng) -> Result<MeasurementResult>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3, 1, 2]), 2.0);
        assert_eq!(median(&[4, 1, 3, 2]), 2.5);
        assert_eq!(median_f64(&[5.0]), 5.0);
        let m = MeasurementResult::from_runs(vec![10, 12, 11], vec![1, 2, 3]);
        assert_eq!(m.diff, 9.0);
        assert_eq!(m.runs, 3);
    }
}
