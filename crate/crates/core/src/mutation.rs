//! Mutation spaces and the data, address and opcode mutators.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{OperandSpec, ValueClass};
use crate::error::{Error, Result};
use crate::testcase::{Binding, RoleTagged, SequenceRole};

pub const PAGE_SIZE: u64 = 4096;

/// A dimension of a test case the fuzzer may change between the two runs of
/// a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dim {
    Data,
    Addr,
    Opcode,
    Level,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelCategory {
    DataChannel,
    VolatileChannel,
    PersistentChannel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationSpace {
    pub dims: Vec<Dim>,
    pub category: ChannelCategory,
}

impl MutationSpace {
    pub fn contains(&self, d: Dim) -> bool {
        self.dims.contains(&d)
    }
}

/// One instruction can only leak through its operands; two can contend; three
/// or more form reset/trigger/measurement.
pub fn derive_space(combo_len: usize) -> Result<MutationSpace> {
    let (dims, category) = match combo_len {
        0 => return Err(Error::Argument("combination length must be at least 1".into())),
        1 => (vec![Dim::Data, Dim::Addr], ChannelCategory::DataChannel),
        2 => (
            vec![Dim::Opcode, Dim::Addr, Dim::Level],
            ChannelCategory::VolatileChannel,
        ),
        _ => (vec![Dim::Opcode, Dim::Addr], ChannelCategory::PersistentChannel),
    };
    Ok(MutationSpace { dims, category })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataTag {
    RandomNormal,
    Zero,
    Max,
    Min,
    Subnormal,
    Infinity,
    Nan,
    NegOne,
}

pub const INT_SPECIALS: [DataTag; 3] = [DataTag::Zero, DataTag::Max, DataTag::Min];

/// `NegOne` joins the floating point pool alongside the IEEE specials.
pub const FP_SPECIALS: [DataTag; 7] = [
    DataTag::Subnormal,
    DataTag::Zero,
    DataTag::Infinity,
    DataTag::Nan,
    DataTag::Max,
    DataTag::Min,
    DataTag::NegOne,
];

/// A concrete operand value, little-endian, `width_bits / 8` bytes long.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DataValue {
    pub value_class: ValueClass,
    pub width_bits: u16,
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
    pub tag: DataTag,
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        let hex: String = bytes.iter().rev().map(|b| format!("{b:02x}")).collect();
        s.serialize_str(&hex)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        if s.len() % 2 != 0 {
            return Err(serde::de::Error::custom("odd hex length"));
        }
        let mut out = (0..s.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&s[i..i + 2], 16))
            .collect::<Result<Vec<_>, _>>()
            .map_err(serde::de::Error::custom)?;
        out.reverse();
        Ok(out)
    }
}

/// Binary floating point layout. `explicit_int` marks the x87 extended
/// format, which stores the integer bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FpFormat {
    pub exp_bits: u32,
    pub frac_bits: u32,
    pub explicit_int: bool,
}

pub const HALF: FpFormat = FpFormat {
    exp_bits: 5,
    frac_bits: 10,
    explicit_int: false,
};
pub const SINGLE: FpFormat = FpFormat {
    exp_bits: 8,
    frac_bits: 23,
    explicit_int: false,
};
pub const DOUBLE: FpFormat = FpFormat {
    exp_bits: 11,
    frac_bits: 52,
    explicit_int: false,
};
pub const EXTENDED: FpFormat = FpFormat {
    exp_bits: 15,
    frac_bits: 63,
    explicit_int: true,
};

impl FpFormat {
    pub fn bits(self) -> u32 {
        1 + self.exp_bits + self.frac_bits + self.explicit_int as u32
    }

    fn exp_max(self) -> u128 {
        (1 << self.exp_bits) - 1
    }

    fn frac_mask(self) -> u128 {
        (1 << self.frac_bits) - 1
    }

    fn bias(self) -> u128 {
        (1 << (self.exp_bits - 1)) - 1
    }

    fn compose(self, sign: bool, exp: u128, int_bit: bool, frac: u128) -> u128 {
        let mut v = (sign as u128) << (self.bits() - 1);
        v |= exp << (self.frac_bits + self.explicit_int as u32);
        if self.explicit_int {
            v |= (int_bit as u128) << self.frac_bits;
        }
        v | (frac & self.frac_mask())
    }

    fn split(self, v: u128) -> (bool, u128, bool, u128) {
        let sign = (v >> (self.bits() - 1)) & 1 == 1;
        let exp = (v >> (self.frac_bits + self.explicit_int as u32)) & self.exp_max();
        let int_bit = self.explicit_int && (v >> self.frac_bits) & 1 == 1;
        (sign, exp, int_bit, v & self.frac_mask())
    }
}

/// Element format and lane count used for a floating point operand width.
/// Vector widths are treated as packed single precision lanes.
pub fn fp_layout(width_bits: u16) -> Option<(FpFormat, usize)> {
    match width_bits {
        16 => Some((HALF, 1)),
        32 => Some((SINGLE, 1)),
        64 => Some((DOUBLE, 1)),
        80 => Some((EXTENDED, 1)),
        128 | 256 | 512 => Some((SINGLE, width_bits as usize / 32)),
        _ => None,
    }
}

fn effective_class(class: ValueClass, width_bits: u16) -> ValueClass {
    match class {
        ValueClass::Fp if fp_layout(width_bits).is_none() => ValueClass::Int,
        c => c,
    }
}

/// Builds a value of the requested tag.
pub fn make_value<R: Rng + ?Sized>(class: ValueClass, width_bits: u16, tag: DataTag, rng: &mut R) -> Result<DataValue> {
    let class = effective_class(class, width_bits);
    let payload = match class {
        ValueClass::Int => int_payload(width_bits, tag, rng)?,
        ValueClass::Fp => fp_payload(width_bits, tag, rng)?,
        ValueClass::Other => return Err(Error::Argument("operands of class `other` carry no data value".into())),
    };
    Ok(DataValue {
        value_class: class,
        width_bits,
        payload,
        tag,
    })
}

fn int_payload<R: Rng + ?Sized>(width_bits: u16, tag: DataTag, rng: &mut R) -> Result<Vec<u8>> {
    let n = (width_bits as usize / 8).max(1);
    let mut b = vec![0u8; n];
    match tag {
        DataTag::Zero => {}
        DataTag::Max => {
            b.iter_mut().for_each(|x| *x = 0xFF);
            b[n - 1] = 0x7F;
        }
        DataTag::Min => b[n - 1] = 0x80,
        DataTag::RandomNormal => loop {
            // 1 ..= MAX-1
            rng.fill(&mut b[..]);
            b[n - 1] &= 0x7F;
            let zero = b.iter().all(|&x| x == 0);
            let max = b[..n - 1].iter().all(|&x| x == 0xFF) && b[n - 1] == 0x7F;
            if !zero && !max {
                break;
            }
        },
        other => {
            return Err(Error::Argument(format!("{other:?} is not an integer value tag")));
        }
    }
    Ok(b)
}

fn fp_payload<R: Rng + ?Sized>(width_bits: u16, tag: DataTag, rng: &mut R) -> Result<Vec<u8>> {
    let (fmt, lanes) = fp_layout(width_bits).expect("checked by effective_class");
    let exp_max = fmt.exp_max();
    let frac_all = fmt.frac_mask();
    let elem = match tag {
        DataTag::Zero => 0,
        DataTag::Subnormal => {
            let frac = rng.gen_range(1..=frac_all);
            fmt.compose(false, 0, false, frac)
        }
        DataTag::Infinity => fmt.compose(false, exp_max, true, 0),
        DataTag::Nan => {
            let quiet = 1 << (fmt.frac_bits - 1);
            fmt.compose(false, exp_max, true, quiet | rng.gen_range(0..quiet))
        }
        DataTag::Max => fmt.compose(false, exp_max - 1, true, frac_all),
        DataTag::Min => fmt.compose(true, exp_max - 1, true, frac_all),
        DataTag::NegOne => fmt.compose(true, fmt.bias(), true, 0),
        DataTag::RandomNormal => {
            let exp = rng.gen_range(1..=exp_max - 2);
            fmt.compose(false, exp, true, rng.gen_range(0..=frac_all))
        }
    };
    let elem_bytes = fmt.bits() as usize / 8;
    let one = elem.to_le_bytes();
    Ok((0..lanes).flat_map(|_| one[..elem_bytes].iter().copied()).collect())
}

/// Reads the tag back from the bit pattern (first lane for packed values).
pub fn inspect(v: &DataValue) -> DataTag {
    match effective_class(v.value_class, v.width_bits) {
        ValueClass::Fp => {
            let (fmt, _) = fp_layout(v.width_bits).expect("fp layout");
            let n = fmt.bits() as usize / 8;
            let mut buf = [0u8; 16];
            buf[..n].copy_from_slice(&v.payload[..n]);
            let (sign, exp, int_bit, frac) = fmt.split(u128::from_le_bytes(buf));
            let exp_max = fmt.exp_max();
            if exp == 0 {
                if frac == 0 && !int_bit {
                    DataTag::Zero
                } else {
                    DataTag::Subnormal
                }
            } else if exp == exp_max {
                if frac == 0 {
                    DataTag::Infinity
                } else {
                    DataTag::Nan
                }
            } else if fmt.explicit_int && !int_bit {
                // unnormal encodings are invalid operands on x87
                DataTag::Nan
            } else if exp == exp_max - 1 && frac == fmt.frac_mask() {
                if sign {
                    DataTag::Min
                } else {
                    DataTag::Max
                }
            } else if sign && exp == fmt.bias() && frac == 0 {
                DataTag::NegOne
            } else {
                DataTag::RandomNormal
            }
        }
        _ => {
            let b = &v.payload;
            let n = b.len();
            if b.iter().all(|&x| x == 0) {
                DataTag::Zero
            } else if b[..n - 1].iter().all(|&x| x == 0xFF) && b[n - 1] == 0x7F {
                DataTag::Max
            } else if b[..n - 1].iter().all(|&x| x == 0) && b[n - 1] == 0x80 {
                DataTag::Min
            } else {
                DataTag::RandomNormal
            }
        }
    }
}

/// A random value for the operand: a special of its class or a random normal,
/// drawn uniformly. Returns `None` for operands without a numeric class.
pub fn mutate_data<R: Rng + ?Sized>(op: &OperandSpec, rng: &mut R) -> Option<DataValue> {
    let class = effective_class(op.value_class, op.width_bits);
    let pool: &[DataTag] = match class {
        ValueClass::Int => &INT_SPECIALS,
        ValueClass::Fp => &FP_SPECIALS,
        ValueClass::Other => return None,
    };
    let i = rng.gen_range(0..=pool.len());
    let tag = if i == pool.len() {
        DataTag::RandomNormal
    } else {
        pool[i]
    };
    make_value(class, op.width_bits, tag, rng).ok()
}

/// The original (unmutated) value for a data operand.
pub fn random_normal<R: Rng + ?Sized>(op: &OperandSpec, rng: &mut R) -> Option<DataValue> {
    match op.value_class {
        ValueClass::Other => None,
        c => make_value(c, op.width_bits, DataTag::RandomNormal, rng).ok(),
    }
}

/// The memory region reserved for test data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataRegion {
    pub base: u64,
    pub pages: u64,
}

impl Default for DataRegion {
    fn default() -> Self {
        DataRegion {
            base: 0x10_0000,
            pages: 16,
        }
    }
}

impl DataRegion {
    pub fn end(&self) -> u64 {
        self.base + self.pages * PAGE_SIZE
    }

    pub fn contains(&self, addr: u64) -> bool {
        (self.base..self.end()).contains(&addr)
    }

    pub fn page_of(&self, addr: u64) -> u64 {
        (addr - self.base) / PAGE_SIZE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PageRelation {
    SamePage,
    DifferentPage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AddressMutation {
    pub base: u64,
    pub offset: i64,
    pub page_relation: PageRelation,
}

impl AddressMutation {
    pub fn target(&self) -> u64 {
        self.base.wrapping_add_signed(self.offset)
    }
}

pub const SAME_PAGE_PROBABILITY: f64 = 0.2;
const ADDR_ALIGN: u64 = 8;

/// Picks a base address and a nonzero offset landing on the same page with
/// probability 0.2, on a different page otherwise; both stay in the region.
pub fn mutate_address<R: Rng + ?Sized>(region: &DataRegion, rng: &mut R) -> Result<AddressMutation> {
    if region.pages < 2 {
        return Err(Error::Config(format!(
            "data region must span at least 2 pages, got {}",
            region.pages
        )));
    }
    let slots_per_page = PAGE_SIZE / ADDR_ALIGN;
    let base_page = rng.gen_range(0..region.pages);
    let base_slot = rng.gen_range(0..slots_per_page);
    let base = region.base + base_page * PAGE_SIZE + base_slot * ADDR_ALIGN;

    let (page, slot, relation) = if rng.gen_bool(SAME_PAGE_PROBABILITY) {
        let mut slot = rng.gen_range(0..slots_per_page - 1);
        if slot >= base_slot {
            slot += 1;
        }
        (base_page, slot, PageRelation::SamePage)
    } else {
        let mut page = rng.gen_range(0..region.pages - 1);
        if page >= base_page {
            page += 1;
        }
        (page, rng.gen_range(0..slots_per_page), PageRelation::DifferentPage)
    };
    let target = region.base + page * PAGE_SIZE + slot * ADDR_ALIGN;
    Ok(AddressMutation {
        base,
        offset: target as i64 - base as i64,
        page_relation: relation,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExecLevel {
    ST,
    SMT,
    MTCC,
}

impl ExecLevel {
    pub const ALL: [ExecLevel; 3] = [ExecLevel::ST, ExecLevel::SMT, ExecLevel::MTCC];
}

/// Replaces the single trigger-role instruction with `NOP`.
pub fn mutate_opcode(seq: &[RoleTagged]) -> Result<Vec<RoleTagged>> {
    let triggers = seq.iter().filter(|s| s.role == SequenceRole::Trigger).count();
    if triggers != 1 {
        return Err(Error::Structural(format!(
            "expected exactly one trigger instruction, found {triggers}"
        )));
    }
    Ok(seq
        .iter()
        .map(|s| {
            if s.role == SequenceRole::Trigger {
                RoleTagged {
                    role: s.role,
                    binding: Binding::nop(),
                }
            } else {
                s.clone()
            }
        })
        .collect())
}

/// Uniform choice of a dimension from the space.
pub fn choose_dim<R: Rng + ?Sized>(space: &MutationSpace, rng: &mut R) -> Dim {
    *space.dims.choose(rng).expect("spaces are nonempty")
}
