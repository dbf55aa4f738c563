//! Seeds: binary-encoded tuples of instruction-class indices.
//!
//! Each slot is a 6-bit big-endian code. Codes at or above the class count
//! decode modulo the class count, and deduplication keys on the decoded
//! [`ClassTuple`], so aliases collapse onto one tested combination.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SLOT_BITS: usize = 6;
pub const MAX_CODE: u8 = (1 << SLOT_BITS) - 1;

/// Ordered class indices, one per slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassTuple(pub Vec<usize>);

impl ClassTuple {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }
}

impl fmt::Display for ClassTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str(")")
    }
}

/// A bit string of `6 * slots` bits, stored one 6-bit code per slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Seed {
    codes: Vec<u8>,
}

impl Seed {
    pub fn from_codes(codes: Vec<u8>) -> Result<Self> {
        if codes.is_empty() {
            return Err(Error::Argument("a seed has at least one slot".into()));
        }
        if let Some(&c) = codes.iter().find(|&&c| c > MAX_CODE) {
            return Err(Error::SlotRange(c as usize));
        }
        Ok(Seed { codes })
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn slots(&self) -> usize {
        self.codes.len()
    }

    pub fn bit_len(&self) -> usize {
        self.codes.len() * SLOT_BITS
    }

    /// Bit `i` counted from the most significant bit of slot 0.
    pub fn bit(&self, i: usize) -> bool {
        let code = self.codes[i / SLOT_BITS];
        (code >> (SLOT_BITS - 1 - i % SLOT_BITS)) & 1 == 1
    }

    pub fn flip(&mut self, i: usize) {
        self.codes[i / SLOT_BITS] ^= 1 << (SLOT_BITS - 1 - i % SLOT_BITS);
    }

    pub fn bits(&self) -> Vec<bool> {
        (0..self.bit_len()).map(|i| self.bit(i)).collect()
    }

    pub fn bit_string(&self) -> String {
        self.codes
            .iter()
            .map(|c| format!("{c:06b}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn hamming(&self, other: &Seed) -> Option<u32> {
        (self.slots() == other.slots()).then(|| {
            self.codes
                .iter()
                .zip(&other.codes)
                .map(|(a, b)| (a ^ b).count_ones())
                .sum()
        })
    }

    fn appended(&self, code: u8) -> Seed {
        let mut codes = self.codes.clone();
        codes.push(code);
        Seed { codes }
    }

    fn inserted(&self, pos: usize, code: u8) -> Seed {
        let mut codes = self.codes.clone();
        codes.insert(pos, code);
        Seed { codes }
    }
}

/// `slots:0x<hex>`, the hex digits spelling the bit string left-padded to a
/// multiple of four bits, e.g. `2:0x042`.
impl fmt::Display for Seed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bits = self.bits();
        let pad = (4 - bits.len() % 4) % 4;
        let padded: Vec<bool> = std::iter::repeat_n(false, pad).chain(bits).collect();
        write!(f, "{}:0x", self.slots())?;
        for nibble in padded.chunks(4) {
            let v = nibble.iter().fold(0u8, |acc, &b| (acc << 1) | b as u8);
            write!(f, "{v:x}")?;
        }
        Ok(())
    }
}

impl FromStr for Seed {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Argument(format!("malformed seed line `{s}`"));
        let (slots, hex) = s.trim().split_once(':').ok_or_else(bad)?;
        let slots: usize = slots.parse().map_err(|_| bad())?;
        let hex = hex.strip_prefix("0x").ok_or_else(bad)?;
        let nbits = slots * SLOT_BITS;
        if slots == 0 || hex.len() != nbits.div_ceil(4) {
            return Err(bad());
        }
        let mut bits = Vec::with_capacity(hex.len() * 4);
        for ch in hex.chars() {
            let v = ch.to_digit(16).ok_or_else(bad)?;
            bits.extend((0..4).rev().map(|k| (v >> k) & 1 == 1));
        }
        let pad = bits.len() - nbits;
        if bits[..pad].iter().any(|&b| b) {
            return Err(bad());
        }
        let codes = bits[pad..]
            .chunks(SLOT_BITS)
            .map(|c| c.iter().fold(0u8, |acc, &b| (acc << 1) | b as u8))
            .collect();
        Seed::from_codes(codes)
    }
}

pub fn encode(tuple: &ClassTuple) -> Result<Seed> {
    let codes = tuple
        .0
        .iter()
        .map(|&i| {
            if i > MAX_CODE as usize {
                Err(Error::SlotRange(i))
            } else {
                Ok(i as u8)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Seed::from_codes(codes)
}

/// Each code `c` decodes to `c mod class_count`.
pub fn decode(seed: &Seed, class_count: usize) -> ClassTuple {
    assert!(class_count >= 1, "class_count must be at least 1");
    ClassTuple(seed.codes.iter().map(|&c| c as usize % class_count).collect())
}

/// Saturating binomial coefficient.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Seeds at Hamming distance exactly `k`.
///
/// When the neighborhood holds at most `budget` seeds it is returned in full;
/// otherwise `budget` distinct neighbors are drawn uniformly without
/// replacement. Output is sorted by bit string either way.
pub fn hamming_neighbors<R: Rng + ?Sized>(seed: &Seed, k: usize, budget: usize, rng: &mut R) -> Vec<Seed> {
    let n = seed.bit_len();
    assert!((1..=n).contains(&k), "k={k} outside 1..={n}");
    let total = binomial(n, k);
    let mut out = Vec::new();
    if total <= budget as u128 {
        out.reserve(total as usize);
        let mut positions: Vec<usize> = (0..k).collect();
        loop {
            let mut s = seed.clone();
            positions.iter().for_each(|&p| s.flip(p));
            out.push(s);
            // next k-combination in lexicographic order
            let mut i = k;
            while i > 0 && positions[i - 1] == n - k + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            positions[i - 1] += 1;
            for j in i..k {
                positions[j] = positions[j - 1] + 1;
            }
        }
    } else {
        let mut seen = HashSet::with_capacity(budget);
        while seen.len() < budget {
            let mut pick = index::sample(rng, n, k).into_vec();
            pick.sort_unstable();
            if seen.insert(pick.clone()) {
                let mut s = seed.clone();
                pick.iter().for_each(|&p| s.flip(p));
                out.push(s);
            }
        }
    }
    out.sort();
    out
}

/// Mutation probabilities and limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationParams {
    pub p_bitflip: f64,
    pub p_concat: f64,
    pub p_insert: f64,
    pub neighbor_budget: usize,
    pub max_slots: usize,
}

impl Default for MutationParams {
    fn default() -> Self {
        MutationParams {
            p_bitflip: 0.8,
            p_concat: 0.1,
            p_insert: 0.1,
            neighbor_budget: 4096,
            max_slots: 50,
        }
    }
}

impl MutationParams {
    pub fn validate(&self) -> Result<()> {
        let ps = [self.p_bitflip, self.p_concat, self.p_insert];
        if ps.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("mutation probabilities must lie in [0, 1]".into()));
        }
        if (ps.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("mutation probabilities must sum to 1".into()));
        }
        if self.max_slots == 0 || self.neighbor_budget == 0 {
            return Err(Error::Config("max_slots and neighbor_budget must be positive".into()));
        }
        Ok(())
    }
}

/// A collection of distinct seeds that never becomes empty.
#[derive(Debug, Clone)]
pub struct SeedSet {
    seeds: Vec<Seed>,
    initial: Seed,
}

impl SeedSet {
    pub fn new(initial: Seed) -> Self {
        SeedSet {
            seeds: vec![initial.clone()],
            initial,
        }
    }

    pub fn initial(&self) -> &Seed {
        &self.initial
    }

    pub fn seeds(&self) -> &[Seed] {
        &self.seeds
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn contains(&self, s: &Seed) -> bool {
        self.seeds.contains(s)
    }

    /// Returns false if the seed was already present.
    pub fn insert(&mut self, s: Seed) -> bool {
        if self.contains(&s) {
            return false;
        }
        self.seeds.push(s);
        true
    }

    pub fn dump(&self) -> String {
        self.seeds.iter().map(|s| format!("{s}\n")).collect()
    }

    pub fn restore(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let first: Seed = lines
            .next()
            .ok_or_else(|| Error::Argument("empty seed dump".into()))?
            .parse()?;
        let mut set = SeedSet::new(first);
        for line in lines {
            set.insert(line.parse()?);
        }
        Ok(set)
    }
}

/// Class tuples already tested, with per-length counts.
#[derive(Debug, Clone, Default)]
pub struct TestedLedger {
    tested: HashSet<ClassTuple>,
    per_length: BTreeMap<usize, u64>,
}

impl TestedLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, t: &ClassTuple) -> bool {
        self.tested.contains(t)
    }

    /// Returns false if the tuple had been recorded before.
    pub fn insert(&mut self, t: ClassTuple) -> bool {
        let len = t.len();
        if self.tested.insert(t) {
            *self.per_length.entry(len).or_default() += 1;
            true
        } else {
            false
        }
    }

    pub fn len(&self) -> usize {
        self.tested.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tested.is_empty()
    }

    pub fn count(&self, len: usize) -> u64 {
        self.per_length.get(&len).copied().unwrap_or(0)
    }

    pub fn per_length_counts(&self) -> &BTreeMap<usize, u64> {
        &self.per_length
    }

    /// Merges another ledger (set union), e.g. from a campaign shard.
    pub fn merge(&mut self, other: &TestedLedger) {
        for t in &other.tested {
            self.insert(t.clone());
        }
    }
}

/// Fraction of all `class_count^len` tuples of length `len` already tested.
///
/// When the denominator overflows it saturates at `u128::MAX`, so coverage at
/// such lengths never reaches 1.
pub fn coverage(ledger: &TestedLedger, len: usize, class_count: usize) -> f64 {
    assert!(len >= 1, "length must be at least 1");
    let denom = match (class_count as u128).checked_pow(len as u32) {
        Some(d) => d,
        None => {
            log::warn!("coverage denominator {class_count}^{len} saturated");
            u128::MAX
        }
    };
    if denom == 0 {
        return 0.0;
    }
    let count = ledger.count(len) as u128;
    if count >= denom {
        1.0
    } else {
        count as f64 / denom as f64
    }
}

/// Drops every seed whose length is fully covered. The initial seed is
/// retained if nothing else would remain. Returns the number removed.
pub fn prune_covered(set: &mut SeedSet, ledger: &TestedLedger, class_count: usize) -> usize {
    let before = set.seeds.len();
    set.seeds.retain(|s| coverage(ledger, s.slots(), class_count) < 1.0);
    if set.seeds.is_empty() {
        log::warn!("every seed length is fully covered; keeping the initial seed");
        set.seeds.push(set.initial.clone());
    }
    before.saturating_sub(set.seeds.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    BitFlip,
    Concat,
    Insert,
}

/// Outcome of one mutation step.
#[derive(Debug, Clone)]
pub struct Mutation {
    pub branch: Branch,
    pub parent: Seed,
    /// Hamming distance for the bit-flip branch.
    pub k: Option<usize>,
    /// Mutated seeds whose decoded tuple is not yet in the ledger, one per
    /// tuple.
    pub seeds: Vec<Seed>,
    /// Number of produced seeds dropped because their tuple was tested.
    pub skipped: usize,
    /// The mutated seed exceeded `max_slots`; the campaign must stop.
    pub exceeded_max: bool,
}

pub fn choose_branch<R: Rng + ?Sized>(params: &MutationParams, rng: &mut R) -> Branch {
    let u: f64 = rng.gen();
    if u < params.p_bitflip {
        Branch::BitFlip
    } else if u < params.p_bitflip + params.p_concat {
        Branch::Concat
    } else {
        Branch::Insert
    }
}

/// One mutation step over the seed set.
pub fn mutate<R: Rng + ?Sized>(
    set: &SeedSet,
    ledger: &TestedLedger,
    params: &MutationParams,
    class_count: usize,
    rng: &mut R,
) -> Mutation {
    let parent = set.seeds[rng.gen_range(0..set.seeds.len())].clone();
    let branch = choose_branch(params, rng);
    let mut k = None;
    let produced = match branch {
        Branch::BitFlip => {
            let kk = rng.gen_range(1..=parent.bit_len());
            k = Some(kk);
            hamming_neighbors(&parent, kk, params.neighbor_budget, rng)
        }
        Branch::Concat => vec![parent.appended(rng.gen_range(0..=MAX_CODE))],
        Branch::Insert => {
            let pos = rng.gen_range(0..=parent.slots());
            vec![parent.inserted(pos, rng.gen_range(0..=MAX_CODE))]
        }
    };
    if produced.iter().any(|s| s.slots() > params.max_slots) {
        return Mutation {
            branch,
            parent,
            k,
            seeds: Vec::new(),
            skipped: 0,
            exceeded_max: true,
        };
    }
    let mut seen = HashSet::new();
    let mut seeds = Vec::with_capacity(produced.len());
    let mut skipped = 0;
    for s in produced {
        let t = decode(&s, class_count);
        if ledger.contains(&t) || !seen.insert(t) {
            skipped += 1;
        } else {
            seeds.push(s);
        }
    }
    Mutation {
        branch,
        parent,
        k,
        seeds,
        skipped,
        exceeded_max: false,
    }
}
