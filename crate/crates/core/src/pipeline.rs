//! The campaign loop: seed mutation, per-tuple draws, filter, confirmation
//! and coverage feedback.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::backend::{median_f64, ExecMode, ExecutionBackend, MeasurementResult};
use crate::catalog::{Catalog, InitPolicy, InstructionSpec};
use crate::error::{Error, Result};
use crate::mutation::{self, ChannelCategory, DataRegion, Dim, ExecLevel};
use crate::rng::{self, Rng, Stream};
use crate::seed::{self, decode, encode, ClassTuple, MutationParams, Seed, SeedSet, TestedLedger};
use crate::testcase::{build_pair, BuildContext, TestCasePair, DEFAULT_SLEEP_CYCLES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CampaignMode {
    Guided,
    /// Uniform tuple draws with no ledger, pruning or seed feedback.
    UnguidedBaseline,
}

/// What to do when a mutated seed is longer than `max_slots`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExceedPolicy {
    /// End the campaign.
    Stop,
    /// Drop the mutated seed and keep going.
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub max_slots: usize,
    pub t_fraction: f64,
    pub repetitions: usize,
    pub threshold_short: f64,
    pub threshold_long: f64,
    /// Defaults to the confirmation threshold of each length.
    pub filter_threshold: Option<f64>,
    pub confirm_reps: usize,
    pub timeout_seconds: Option<f64>,
    pub rng_seed: u64,
    pub levels: Vec<ExecLevel>,
    pub mode: CampaignMode,
    /// ISA-set names of the initial seed; class 0 when empty.
    pub initial_seed: Vec<String>,
    pub p_bitflip: f64,
    pub p_concat: f64,
    pub p_insert: f64,
    pub neighbor_budget: usize,
    pub on_exceed_max: ExceedPolicy,
    pub max_invocations: Option<u64>,
    pub max_iterations: Option<u64>,
    /// Guided mode gives up after this many consecutive iterations that test
    /// nothing new.
    pub stall_iterations: u64,
    /// Stop once every listed tuple (ISA-set names) has a confirmed finding.
    pub stop_after: Vec<Vec<String>>,
    pub sleep_cycles: u64,
    pub region: DataRegion,
    /// Register and memory initialization; every register 1 and every byte
    /// 0x01 when absent.
    pub init: Option<InitPolicy>,
    pub audit: bool,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        let p = MutationParams::default();
        CampaignConfig {
            max_slots: p.max_slots,
            t_fraction: 0.5,
            repetitions: 10,
            threshold_short: 10.0,
            threshold_long: 20.0,
            filter_threshold: None,
            confirm_reps: 5,
            timeout_seconds: None,
            rng_seed: 0,
            levels: ExecLevel::ALL.to_vec(),
            mode: CampaignMode::Guided,
            initial_seed: Vec::new(),
            p_bitflip: p.p_bitflip,
            p_concat: p.p_concat,
            p_insert: p.p_insert,
            neighbor_budget: p.neighbor_budget,
            on_exceed_max: ExceedPolicy::Stop,
            max_invocations: None,
            max_iterations: None,
            stall_iterations: 100_000,
            stop_after: Vec::new(),
            sleep_cycles: DEFAULT_SLEEP_CYCLES,
            region: DataRegion::default(),
            init: None,
            audit: true,
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.threshold_short > 0.0 && self.threshold_long > 0.0) {
            return bad("thresholds must be positive");
        }
        if matches!(self.filter_threshold, Some(f) if !(f > 0.0)) {
            return bad("filter_threshold must be positive");
        }
        if !(self.t_fraction > 0.0 && self.t_fraction <= 1.0) {
            return bad("t_fraction must be in (0, 1]");
        }
        if self.repetitions == 0 || self.confirm_reps == 0 {
            return bad("repetitions and confirm_reps must be at least 1");
        }
        if self.levels.is_empty() {
            return bad("at least one execution level is required");
        }
        if matches!(self.timeout_seconds, Some(t) if !(t >= 0.0)) {
            return bad("timeout_seconds must be non-negative");
        }
        self.mutation_params().validate()
    }

    pub fn mutation_params(&self) -> MutationParams {
        MutationParams {
            p_bitflip: self.p_bitflip,
            p_concat: self.p_concat,
            p_insert: self.p_insert,
            neighbor_budget: self.neighbor_budget,
            max_slots: self.max_slots,
        }
    }

    /// 10 cycles for one or two instructions, 20 for longer combinations.
    pub fn confirm_threshold(&self, len: usize) -> f64 {
        if len <= 2 {
            self.threshold_short
        } else {
            self.threshold_long
        }
    }

    pub fn filter_threshold_for(&self, len: usize) -> f64 {
        self.filter_threshold.unwrap_or_else(|| self.confirm_threshold(len))
    }

    /// Draws for a tuple: `ceil(t_fraction * largest class)`, at least one.
    pub fn draws_for(&self, max_class_size: usize) -> usize {
        ((self.t_fraction * max_class_size as f64).ceil() as usize).max(1)
    }
}

/// A pair whose timing difference passed the filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub tuple: ClassTuple,
    /// ISA-set names, one per slot.
    pub classes: Vec<String>,
    /// Spec ids, one per slot.
    pub concrete: Vec<String>,
    pub dim: Dim,
    pub level: ExecLevel,
    pub diff: f64,
    /// The exact pair, replayed by confirmation and verification.
    pub pair: TestCasePair,
}

impl Candidate {
    pub fn category(&self) -> ChannelCategory {
        self.pair.with_trigger.layout
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfirmedFinding {
    pub candidate: Candidate,
    pub category: ChannelCategory,
    /// Median of the replayed differences.
    pub confirm_diff: f64,
    pub confirm_diffs: Vec<f64>,
    pub confirmations: usize,
    /// Backend invocations spent when the finding was confirmed.
    pub invocations: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    BelowThreshold,
    SignFlip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub median: f64,
    pub diffs: Vec<f64>,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Confirmed(Box<ConfirmedFinding>),
    Rejected(Rejection),
}

/// Keeps the pair when `|diff|` reaches the filter threshold of its length.
pub fn filter(m: &MeasurementResult, pair: &TestCasePair, cat: &Catalog, cfg: &CampaignConfig) -> Option<Candidate> {
    if m.diff.abs() < cfg.filter_threshold_for(pair.tuple.len()) {
        return None;
    }
    let flat = pair.with_trigger.sequences.flatten();
    let concrete: Vec<String> = slot_order(&pair.tuple, flat.into_iter().map(|r| r.binding.spec).collect());
    let classes = pair
        .tuple
        .indices()
        .iter()
        .map(|&i| {
            cat.classes()
                .get(i)
                .map_or_else(|| i.to_string(), |c| c.isa_set.clone())
        })
        .collect();
    Some(Candidate {
        tuple: pair.tuple.clone(),
        classes,
        concrete,
        dim: pair.mutated_dim,
        level: pair.with_trigger.level,
        diff: m.diff,
        pair: pair.clone(),
    })
}

/// Sequence order (reset, trigger, measure) back to slot order.
fn slot_order(tuple: &ClassTuple, mut seq: Vec<String>) -> Vec<String> {
    if tuple.len() == 2 && seq.len() == 2 {
        // slot 0 is measured, slot 1 the contender
        seq.swap(0, 1);
    }
    seq
}

/// Replays the candidate's pair `confirm_reps` times. Confirmed when the
/// median difference reaches the length threshold and every replay has the
/// median's sign.
pub fn confirm(c: &Candidate, backend: &dyn ExecutionBackend, cfg: &CampaignConfig, rng: &mut Rng) -> Result<Verdict> {
    let mut diffs = Vec::with_capacity(cfg.confirm_reps);
    for _ in 0..cfg.confirm_reps {
        diffs.push(backend.execute(&c.pair, cfg.repetitions, ExecMode::Normal, rng)?.diff);
    }
    let median = median_f64(&diffs);
    let threshold = cfg.confirm_threshold(c.tuple.len());
    if median.abs() < threshold {
        return Ok(Verdict::Rejected(Rejection {
            median,
            diffs,
            reason: RejectReason::BelowThreshold,
        }));
    }
    if diffs.iter().any(|d| d.signum() != median.signum() || *d == 0.0) {
        return Ok(Verdict::Rejected(Rejection {
            median,
            diffs,
            reason: RejectReason::SignFlip,
        }));
    }
    Ok(Verdict::Confirmed(Box::new(ConfirmedFinding {
        category: c.category(),
        confirm_diff: median,
        confirmations: diffs.len(),
        confirm_diffs: diffs,
        candidate: c.clone(),
        invocations: 0,
    })))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Timeout,
    /// A mutated seed exceeded `max_slots`.
    MaxSlots,
    InvocationBudget,
    IterationBudget,
    TargetsFound,
    /// Every tuple up to `max_slots` was tested.
    Exhausted,
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub config: CampaignConfig,
    pub findings: Vec<ConfirmedFinding>,
    /// Two per run per side pair: `2 * R` per built pair plus confirmation
    /// replays.
    pub backend_invocations: u64,
    pub pairs_built: u64,
    pub confirm_replays: u64,
    pub candidates: u64,
    pub rejected: u64,
    pub tuples_tested: u64,
    pub iterations: u64,
    pub coverage_by_length: BTreeMap<usize, f64>,
    pub seed_set: Vec<String>,
    pub stop_reason: StopReason,
    /// Invocations spent when the last finding was confirmed.
    pub invocations_at_last_finding: u64,
    /// Every tuple tested, in order, when auditing is on.
    pub audit: Vec<ClassTuple>,
    pub wall_time_seconds: f64,
}

impl CampaignReport {
    /// The findings alone, as written to `findings.json`.
    pub fn findings_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.findings).expect("findings serialize");
        s.push('\n');
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

pub fn run_campaign(cat: &Catalog, backend: &dyn ExecutionBackend, cfg: &CampaignConfig) -> Result<CampaignReport> {
    run_campaign_with(cat, backend, cfg, &mut |_| {})
}

/// Like [`run_campaign`], calling `on_finding` as each finding is confirmed.
pub fn run_campaign_with(
    cat: &Catalog,
    backend: &dyn ExecutionBackend,
    cfg: &CampaignConfig,
    on_finding: &mut dyn FnMut(&ConfirmedFinding),
) -> Result<CampaignReport> {
    cfg.validate()?;
    if !cat.is_classified() {
        return Err(Error::Contract("the catalog must be classified first".into()));
    }
    let class_count = cat.class_count();
    if class_count == 0 {
        return Err(Error::Config("the catalog has no classes".into()));
    }
    if class_count > 64 {
        return Err(Error::SlotRange(class_count - 1));
    }
    let caps = backend.capabilities();
    for l in &cfg.levels {
        if !caps.levels.contains(l) {
            return Err(Error::Capability(format!("execution level {l:?}")));
        }
    }
    let members: Vec<Vec<&InstructionSpec>> = cat
        .classes()
        .iter()
        .map(|c| {
            c.members
                .iter()
                .map(|id| cat.spec(id).expect("class members resolve"))
                .collect()
        })
        .collect();
    let by_name: BTreeMap<&str, usize> = cat.classes().iter().map(|c| (c.isa_set.as_str(), c.index)).collect();
    let resolve = |names: &[String]| -> Result<ClassTuple> {
        names
            .iter()
            .map(|n| {
                by_name
                    .get(n.as_str())
                    .copied()
                    .ok_or_else(|| Error::Config(format!("unknown class {n}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(ClassTuple)
    };
    let initial = if cfg.initial_seed.is_empty() {
        ClassTuple(vec![0])
    } else {
        resolve(&cfg.initial_seed)?
    };
    let targets: BTreeSet<ClassTuple> = cfg.stop_after.iter().map(|t| resolve(t)).collect::<Result<_>>()?;

    let init = match &cfg.init {
        Some(p) => {
            p.validate(cat)?;
            p.clone()
        }
        None => InitPolicy::uniform(cat, 1, 1),
    };
    let mut run = Runner {
        cfg,
        cat,
        backend,
        members,
        ctx: BuildContext {
            region: cfg.region,
            sleep_cycles: cfg.sleep_cycles,
            init: Arc::new(init),
            levels: cfg.levels.clone(),
        },
        sampling: rng::stream(cfg.rng_seed, Stream::Sampling),
        noise: rng::stream(cfg.rng_seed, Stream::Noise),
        start: Instant::now(),
        invocations: 0,
        pairs_built: 0,
        confirm_replays: 0,
        candidates: 0,
        rejected: 0,
        findings: Vec::new(),
        found: BTreeSet::new(),
        targets,
        on_finding,
    };

    let mut mutation_rng = rng::stream(cfg.rng_seed, Stream::Mutation);
    let mut ledger = TestedLedger::new();
    let mut audit = Vec::new();
    let mut iterations = 0u64;
    let mut tuples_tested = 0u64;
    let mut seed_set: Option<SeedSet> = None;

    let stop_reason = 'campaign: {
        if let Some(r) = run.budget_stop(iterations) {
            break 'campaign r;
        }
        match cfg.mode {
            CampaignMode::Guided => {
                let params = cfg.mutation_params();
                let initial_seed = encode(&initial)?;
                if initial_seed.slots() > cfg.max_slots {
                    return Err(Error::Config("initial seed is longer than max_slots".into()));
                }
                let set = seed_set.insert(SeedSet::new(initial_seed));
                let space: u128 = (1..=cfg.max_slots as u32)
                    .map(|l| (class_count as u128).saturating_pow(l))
                    .fold(0u128, |a, b| a.saturating_add(b));

                // the initial seed is known-interesting but still has to be
                // measured once
                ledger.insert(initial.clone());
                if cfg.audit {
                    audit.push(initial.clone());
                }
                tuples_tested += 1;
                if let Some(r) = run.test_tuple(&initial)? {
                    break 'campaign r;
                }
                let mut idle = 0u64;
                loop {
                    if let Some(r) = run.budget_stop(iterations) {
                        break 'campaign r;
                    }
                    if ledger.len() as u128 >= space {
                        break 'campaign StopReason::Exhausted;
                    }
                    if idle >= cfg.stall_iterations {
                        break 'campaign StopReason::Stalled;
                    }
                    iterations += 1;
                    let m = seed::mutate(set, &ledger, &params, class_count, &mut mutation_rng);
                    if m.exceeded_max {
                        match cfg.on_exceed_max {
                            ExceedPolicy::Stop => break 'campaign StopReason::MaxSlots,
                            ExceedPolicy::Skip => {
                                idle += 1;
                                continue;
                            }
                        }
                    }
                    if m.seeds.is_empty() {
                        idle += 1;
                        continue;
                    }
                    idle = 0;
                    for s in m.seeds {
                        let tuple = decode(&s, class_count);
                        if !ledger.insert(tuple.clone()) {
                            continue;
                        }
                        if cfg.audit {
                            audit.push(tuple.clone());
                        }
                        tuples_tested += 1;
                        let before = run.findings.len();
                        let stop = run.test_tuple(&tuple)?;
                        if run.findings.len() > before {
                            set.insert(s.clone());
                        }
                        if let Some(r) = stop {
                            break 'campaign r;
                        }
                    }
                    seed::prune_covered(set, &ledger, class_count);
                }
            }
            CampaignMode::UnguidedBaseline => loop {
                if let Some(r) = run.budget_stop(iterations) {
                    break 'campaign r;
                }
                iterations += 1;
                let len = mutation_rng.gen_range(1..=cfg.max_slots);
                let tuple = ClassTuple((0..len).map(|_| mutation_rng.gen_range(0..class_count)).collect());
                if cfg.audit {
                    audit.push(tuple.clone());
                }
                tuples_tested += 1;
                if let Some(r) = run.test_tuple(&tuple)? {
                    break 'campaign r;
                }
            },
        }
    };

    let coverage_by_length = (1..=cfg.max_slots.min(8))
        .filter(|&l| ledger.count(l) > 0 || cfg.mode == CampaignMode::Guided && l <= 3)
        .map(|l| (l, seed::coverage(&ledger, l, class_count)))
        .collect();
    let invocations_at_last_finding = run.findings.last().map_or(0, |f| f.invocations);
    Ok(CampaignReport {
        config: cfg.clone(),
        backend_invocations: run.invocations,
        pairs_built: run.pairs_built,
        confirm_replays: run.confirm_replays,
        candidates: run.candidates,
        rejected: run.rejected,
        tuples_tested,
        iterations,
        coverage_by_length,
        seed_set: seed_set
            .map(|s| s.seeds().iter().map(Seed::to_string).collect())
            .unwrap_or_default(),
        stop_reason,
        invocations_at_last_finding,
        audit,
        wall_time_seconds: run.start.elapsed().as_secs_f64(),
        findings: run.findings,
    })
}

struct Runner<'a> {
    cfg: &'a CampaignConfig,
    cat: &'a Catalog,
    backend: &'a dyn ExecutionBackend,
    members: Vec<Vec<&'a InstructionSpec>>,
    ctx: BuildContext,
    sampling: Rng,
    noise: Rng,
    start: Instant,
    invocations: u64,
    pairs_built: u64,
    confirm_replays: u64,
    candidates: u64,
    rejected: u64,
    findings: Vec<ConfirmedFinding>,
    found: BTreeSet<ClassTuple>,
    targets: BTreeSet<ClassTuple>,
    on_finding: &'a mut dyn FnMut(&ConfirmedFinding),
}

impl Runner<'_> {
    fn budget_stop(&self, iterations: u64) -> Option<StopReason> {
        if let Some(t) = self.cfg.timeout_seconds {
            if self.start.elapsed().as_secs_f64() >= t {
                return Some(StopReason::Timeout);
            }
        }
        if matches!(self.cfg.max_invocations, Some(m) if self.invocations >= m) {
            return Some(StopReason::InvocationBudget);
        }
        if matches!(self.cfg.max_iterations, Some(m) if iterations >= m) {
            return Some(StopReason::IterationBudget);
        }
        None
    }

    /// Draws up to T pairs for the tuple and stops at the first confirmed
    /// finding. Returns a stop reason when the campaign has to end.
    fn test_tuple(&mut self, tuple: &ClassTuple) -> Result<Option<StopReason>> {
        let cfg = self.cfg;
        let len = tuple.len();
        let space = mutation::derive_space(len)?;
        let largest = tuple
            .indices()
            .iter()
            .map(|&c| self.members[c].len())
            .max()
            .unwrap_or(1);
        let draws = cfg.draws_for(largest);
        let runs = cfg.repetitions;
        for j in 0..draws {
            if let Some(r) = self.budget_stop(0) {
                return Ok(Some(r));
            }
            let concrete: Vec<&InstructionSpec> = tuple
                .indices()
                .iter()
                .map(|&c| {
                    let m = &self.members[c];
                    m[self.sampling.gen_range(0..m.len())]
                })
                .collect();
            let dim = mutation::choose_dim(&space, &mut self.sampling);
            let level = if space.category == ChannelCategory::VolatileChannel {
                cfg.levels[j % cfg.levels.len()]
            } else if cfg.levels.contains(&ExecLevel::ST) {
                ExecLevel::ST
            } else {
                cfg.levels[0]
            };
            let pair = build_pair(tuple, &concrete, &space, dim, level, &self.ctx, &mut self.sampling)?;
            let m = self.backend.execute(&pair, runs, ExecMode::Normal, &mut self.noise)?;
            self.pairs_built += 1;
            self.invocations += 2 * runs as u64;

            let Some(c) = filter(&m, &pair, self.cat, cfg) else {
                continue;
            };
            self.candidates += 1;
            let verdict = confirm(&c, self.backend, cfg, &mut self.noise)?;
            self.confirm_replays += cfg.confirm_reps as u64;
            self.invocations += (cfg.confirm_reps * 2 * runs) as u64;
            match verdict {
                Verdict::Rejected(r) => {
                    self.rejected += 1;
                    log::debug!("{tuple} rejected: {:?} median {}", r.reason, r.median);
                }
                Verdict::Confirmed(mut f) => {
                    if !self.found.insert(tuple.clone()) {
                        // unguided draws revisit tuples
                        return Ok(None);
                    }
                    f.invocations = self.invocations;
                    log::info!(
                        "finding {} {:?} diff {} after {} invocations",
                        f.candidate.classes.join("-"),
                        f.category,
                        f.confirm_diff,
                        self.invocations
                    );
                    (self.on_finding)(&f);
                    self.findings.push(*f);
                    if !self.targets.is_empty() && self.targets.is_subset(&self.found) {
                        return Ok(Some(StopReason::TargetsFound));
                    }
                    return Ok(None);
                }
            }
        }
        Ok(None)
    }
}
