use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Signal;
use crate::error::{Error, Result};
use crate::mutation::ExecLevel;

/// Operand conditions a data rule can key on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataPredicate {
    IntZero,
    IntMax,
    IntMin,
    FpSubnormal,
    FpNan,
    FpNegOneOrMax,
    /// The access straddles a 4 KiB page boundary.
    AddrCrossPage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleTarget {
    /// Every member of the class with this ISA-set.
    Class(String),
    Spec(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataRule {
    pub target: RuleTarget,
    pub predicate: DataPredicate,
    pub delta_cycles: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolatileRule {
    pub measured_class: String,
    pub contender_class: String,
    pub level: ExecLevel,
    pub delta_cycles: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddrRelation {
    Same,
    Different,
    Any,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersistentRule {
    pub reset_class: String,
    pub trigger_class: String,
    pub measure_class: String,
    pub addr_relation: AddrRelation,
    pub delta_cycles: i64,
    pub transient_visible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    pub sigma: f64,
    pub spike_prob: f64,
    pub spike_magnitude: i64,
    /// Both sides of run `i` see the same noise sample.
    #[serde(default = "yes")]
    pub paired: bool,
}

fn yes() -> bool {
    true
}

impl Default for Noise {
    fn default() -> Self {
        Noise {
            sigma: 3.0,
            spike_prob: 0.05,
            spike_magnitude: 300,
            paired: true,
        }
    }
}

impl Noise {
    pub fn silent() -> Self {
        Noise {
            sigma: 0.0,
            spike_prob: 0.0,
            spike_magnitude: 0,
            paired: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultPredicate {
    Always,
    /// Any operand initialized to zero.
    OperandZero,
    OperandAbove {
        limit: u64,
    },
    RegisterAbove {
        reg: String,
        limit: u64,
    },
    RegisterMisaligned {
        reg: String,
        align: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultDef {
    pub predicate: FaultPredicate,
    pub signal: Signal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultRule {
    pub spec_id: String,
    pub predicate: FaultPredicate,
    pub signal: Signal,
}

/// Ground truth for the simulated backend. Rules refer to classes by ISA-set
/// name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelManifest {
    pub base_latency: BTreeMap<String, i64>,
    /// Latency of classes missing from `base_latency`.
    #[serde(default = "one")]
    pub default_latency: i64,
    #[serde(default)]
    pub data_rules: Vec<DataRule>,
    #[serde(default)]
    pub volatile_rules: Vec<VolatileRule>,
    #[serde(default)]
    pub persistent_rules: Vec<PersistentRule>,
    #[serde(default)]
    pub noise: Noise,
    #[serde(default)]
    pub fault_rules: Vec<FaultRule>,
    /// Named faults that catalog records attach through their `fault_rule`
    /// field. Entries here extend or replace [`ChannelManifest::builtin_faults`].
    #[serde(default)]
    pub fault_library: BTreeMap<String, FaultDef>,
}

fn one() -> i64 {
    1
}

impl Default for ChannelManifest {
    fn default() -> Self {
        ChannelManifest {
            base_latency: BTreeMap::new(),
            default_latency: 1,
            data_rules: Vec::new(),
            volatile_rules: Vec::new(),
            persistent_rules: Vec::new(),
            noise: Noise::default(),
            fault_rules: Vec::new(),
            fault_library: BTreeMap::new(),
        }
    }
}

impl ChannelManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: ChannelManifest = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("manifest: {m}")));
        if let Some((k, v)) = self.base_latency.iter().find(|(_, &v)| v <= 0) {
            return bad(format!("base latency of {k} must be positive, got {v}"));
        }
        if self.default_latency <= 0 {
            return bad("default latency must be positive".into());
        }
        let deltas = self
            .data_rules
            .iter()
            .map(|r| r.delta_cycles)
            .chain(self.volatile_rules.iter().map(|r| r.delta_cycles))
            .chain(self.persistent_rules.iter().map(|r| r.delta_cycles));
        for d in deltas {
            if d == 0 {
                return bad("rule deltas must be nonzero".into());
            }
        }
        let n = &self.noise;
        if !(n.sigma >= 0.0) || !(0.0..=1.0).contains(&n.spike_prob) || n.spike_magnitude < 0 {
            return bad("noise parameters out of range".into());
        }
        Ok(())
    }

    /// Faults resolvable through a catalog record's `fault_rule` name.
    pub fn builtin_faults() -> BTreeMap<String, FaultDef> {
        let def = |predicate, signal| FaultDef { predicate, signal };
        [
            ("fp_zero_divide", def(FaultPredicate::OperandZero, Signal::SIGFPE)),
            ("int_zero_divide", def(FaultPredicate::OperandZero, Signal::SIGFPE)),
            (
                "rcx_large",
                def(
                    FaultPredicate::RegisterAbove {
                        reg: "RCX".into(),
                        limit: 4096,
                    },
                    Signal::SIGSEGV,
                ),
            ),
            (
                "aligned16",
                def(
                    FaultPredicate::RegisterMisaligned {
                        reg: "R8".into(),
                        align: 16,
                    },
                    Signal::SIGSEGV,
                ),
            ),
            ("illegal", def(FaultPredicate::Always, Signal::SIGILL)),
            ("trap", def(FaultPredicate::Always, Signal::SIGTRAP)),
            ("bus", def(FaultPredicate::Always, Signal::SIGBUS)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}
