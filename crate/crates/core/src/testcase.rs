//! Executable test layouts and the paired with/without-trigger runs.
//!
//! Positional roles for a combination of `L` instructions:
//!
//! | L   | reset        | trigger        | measurement |
//! |-----|--------------|----------------|-------------|
//! | 1   | -            | -              | slot 0      |
//! | 2   | -            | slot 1 (x64)   | slot 0      |
//! | ≥3  | slots 0..L-2 | slot L-2       | slot L-1    |
//!
//! Only the measurement sequence is timed. Fences separate every sequence.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{InitPolicy, InstructionSpec, SLEEP_ID};
use crate::error::{Error, Result};
use crate::mutation::{
    self, AddressMutation, ChannelCategory, DataRegion, DataValue, Dim, ExecLevel, MutationSpace, PAGE_SIZE,
};
use crate::seed::ClassTuple;

pub const NOP_ID: &str = "NOP";
pub const CONTENDER_REPEAT: u32 = 64;
pub const DEFAULT_SLEEP_CYCLES: u64 = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceRole {
    Reset,
    Trigger,
    Measurement,
}

/// One concrete instruction with its operand values and, for memory
/// instructions, the address held in the unified memory register.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Binding {
    pub spec: String,
    /// One entry per operand; `None` for operands that carry no data value.
    pub values: Vec<Option<DataValue>>,
    pub address: Option<u64>,
}

impl Binding {
    pub fn nop() -> Self {
        Binding {
            spec: NOP_ID.to_string(),
            values: Vec::new(),
            address: None,
        }
    }

    pub fn is_nop(&self) -> bool {
        self.spec == NOP_ID
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RoleTagged {
    pub role: SequenceRole,
    pub binding: Binding,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sequences {
    pub reset: Vec<Binding>,
    pub trigger: Vec<Binding>,
    pub measure: Vec<Binding>,
}

impl Sequences {
    pub fn flatten(&self) -> Vec<RoleTagged> {
        let tag = |role| {
            move |b: &Binding| RoleTagged {
                role,
                binding: b.clone(),
            }
        };
        self.reset
            .iter()
            .map(tag(SequenceRole::Reset))
            .chain(self.trigger.iter().map(tag(SequenceRole::Trigger)))
            .chain(self.measure.iter().map(tag(SequenceRole::Measurement)))
            .collect()
    }

    pub fn from_flat(items: Vec<RoleTagged>) -> Self {
        let mut s = Sequences::default();
        for it in items {
            match it.role {
                SequenceRole::Reset => s.reset.push(it.binding),
                SequenceRole::Trigger => s.trigger.push(it.binding),
                SequenceRole::Measurement => s.measure.push(it.binding),
            }
        }
        s
    }
}

/// A single executable layout. Field order is the canonical serialization
/// order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub level: ExecLevel,
    pub sequences: Sequences,
    /// How many times each trigger instruction is repeated.
    #[serde(rename = "repeat")]
    pub contender_repeat: u32,
    pub init: Arc<InitPolicy>,
    pub layout: ChannelCategory,
    pub fences_between: bool,
    pub data_pages: u8,
    /// The memory register points away from the data other registers use.
    pub r8_disjoint: bool,
    pub sleep_cycles: u64,
}

impl TestCase {
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("test case serializes")
    }

    pub fn trigger_executed(&self) -> bool {
        self.sequences.trigger.iter().any(|b| !b.is_nop())
    }

    /// `SLEEP` placed anywhere but the reset sequence.
    pub fn sleep_outside_reset(&self) -> bool {
        self.sequences
            .trigger
            .iter()
            .chain(&self.sequences.measure)
            .any(|b| b.spec == SLEEP_ID)
    }

    fn check(&self) -> Result<()> {
        if self.sequences.measure.len() != 1 {
            return Err(Error::Structural(format!(
                "expected one measurement instruction, found {}",
                self.sequences.measure.len()
            )));
        }
        if self.sequences.trigger.len() > 1 {
            return Err(Error::Structural("more than one trigger instruction".into()));
        }
        Ok(())
    }
}

/// The two runs compared for one draw.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCasePair {
    pub tuple: ClassTuple,
    /// Original data and addresses, trigger executed.
    pub with_trigger: TestCase,
    /// Mutated data or addresses, trigger replaced by `NOP`.
    pub without_trigger: TestCase,
    pub mutated_dim: Dim,
    /// Values written into the measured instruction's operands when the data
    /// dimension was mutated.
    pub data_mutation: Option<Vec<Option<DataValue>>>,
    pub addr_mutation: Option<AddressMutation>,
}

/// Settings shared by every pair of a campaign.
#[derive(Debug, Clone)]
pub struct BuildContext {
    pub region: DataRegion,
    pub sleep_cycles: u64,
    pub init: Arc<InitPolicy>,
    /// Levels the level dimension may move to; all levels when empty.
    pub levels: Vec<ExecLevel>,
}

fn roles(len: usize) -> Vec<SequenceRole> {
    match len {
        1 => vec![SequenceRole::Measurement],
        2 => vec![SequenceRole::Measurement, SequenceRole::Trigger],
        n => {
            let mut r = vec![SequenceRole::Reset; n - 2];
            r.push(SequenceRole::Trigger);
            r.push(SequenceRole::Measurement);
            r
        }
    }
}

/// The level after `level` in `levels`, cyclically.
fn next_level(level: ExecLevel, levels: &[ExecLevel]) -> ExecLevel {
    let levels = if levels.is_empty() { &ExecLevel::ALL[..] } else { levels };
    match levels.iter().position(|&l| l == level) {
        Some(i) => levels[(i + 1) % levels.len()],
        None => levels[0],
    }
}

/// Builds the pair for one draw of a class tuple.
///
/// `level` is the execution level of the original run; for data and
/// persistent layouts it should be [`ExecLevel::ST`].
pub fn build_pair<R: Rng + ?Sized>(
    tuple: &ClassTuple,
    concrete: &[&InstructionSpec],
    space: &MutationSpace,
    dim: Dim,
    level: ExecLevel,
    ctx: &BuildContext,
    rng: &mut R,
) -> Result<TestCasePair> {
    if !space.contains(dim) {
        return Err(Error::Contract(format!("{dim:?} is not in the mutation space")));
    }
    if concrete.len() != tuple.len() || tuple.is_empty() {
        return Err(Error::Contract(format!(
            "{} concrete instructions for a tuple of length {}",
            concrete.len(),
            tuple.len()
        )));
    }

    let addr = mutation::mutate_address(&ctx.region, rng)?;
    let layout = space.category;
    let data_pages = if layout == ChannelCategory::VolatileChannel {
        2
    } else {
        1
    };

    let tagged: Vec<RoleTagged> = roles(tuple.len())
        .into_iter()
        .zip(concrete)
        .map(|(role, spec)| {
            let values = spec
                .operands
                .iter()
                .map(|op| {
                    if op.is_data() {
                        mutation::random_normal(op, rng)
                    } else {
                        None
                    }
                })
                .collect();
            let address = spec.has_memory_operand().then(|| {
                if role == SequenceRole::Trigger && data_pages == 2 {
                    second_page(&ctx.region, addr.base)
                } else {
                    addr.base
                }
            });
            RoleTagged {
                role,
                binding: Binding {
                    spec: spec.id.clone(),
                    values,
                    address,
                },
            }
        })
        .collect();

    let with_trigger = TestCase {
        level,
        sequences: Sequences::from_flat(tagged.clone()),
        contender_repeat: if layout == ChannelCategory::VolatileChannel {
            CONTENDER_REPEAT
        } else {
            1
        },
        init: ctx.init.clone(),
        layout,
        fences_between: true,
        data_pages,
        r8_disjoint: layout == ChannelCategory::PersistentChannel,
        sleep_cycles: ctx.sleep_cycles,
    };
    with_trigger.check()?;

    let flat = if with_trigger.sequences.trigger.is_empty() {
        tagged
    } else {
        mutation::mutate_opcode(&tagged)?
    };
    let mut without_trigger = TestCase {
        sequences: Sequences::from_flat(flat),
        ..with_trigger.clone()
    };

    let measured_spec = concrete[measured_slot(tuple.len())];
    let mut data_mutation = None;
    let mut addr_mutation = None;
    match dim {
        Dim::Data => {
            let m = &mut without_trigger.sequences.measure[0];
            let mutated: Vec<Option<DataValue>> = measured_spec
                .operands
                .iter()
                .map(|op| {
                    if op.is_data() {
                        mutation::mutate_data(op, rng)
                    } else {
                        None
                    }
                })
                .collect();
            for (slot, v) in m.values.iter_mut().zip(&mutated) {
                if v.is_some() {
                    slot.clone_from(v);
                }
            }
            data_mutation = Some(mutated);
        }
        Dim::Addr => {
            let m = &mut without_trigger.sequences.measure[0];
            if m.address.is_some() {
                m.address = Some(addr.target());
            }
            addr_mutation = Some(addr);
        }
        Dim::Opcode => {}
        Dim::Level => without_trigger.level = next_level(level, &ctx.levels),
    }

    Ok(TestCasePair {
        tuple: tuple.clone(),
        with_trigger,
        without_trigger,
        mutated_dim: dim,
        data_mutation,
        addr_mutation,
    })
}

pub(crate) fn measured_slot(len: usize) -> usize {
    if len == 2 {
        0
    } else {
        len - 1
    }
}

fn second_page(region: &DataRegion, addr: u64) -> u64 {
    let page = region.page_of(addr);
    let other = (page + 1) % region.pages;
    region.base + other * PAGE_SIZE + (addr - region.base) % PAGE_SIZE
}
