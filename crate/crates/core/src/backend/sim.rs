use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::manifest::{AddrRelation, ChannelManifest, DataPredicate, FaultDef, FaultPredicate, Noise, RuleTarget};
use super::{Capabilities, ExecMode, ExecutionBackend, FaultOutcome, MeasurementResult};
use crate::catalog::{Catalog, InitPolicy, InstructionSpec, OperandKind, ValueClass, SLEEP_ID};
use crate::error::{Error, Result};
use crate::mutation::{inspect, ChannelCategory, DataTag, DataValue, ExecLevel, PAGE_SIZE};
use crate::rng::Rng;
use crate::testcase::{Binding, TestCase, TestCasePair};

/// Simulated microarchitecture with planted channels.
///
/// Timing is a pure function of the test case plus a noise term drawn from
/// the generator handed to [`execute`](ExecutionBackend::execute); the
/// backend itself holds no mutable state.
#[derive(Debug, Clone)]
pub struct SimBackend {
    catalog: Arc<Catalog>,
    manifest: ChannelManifest,
    faults: BTreeMap<String, FaultDef>,
    caps: Capabilities,
}

impl SimBackend {
    /// Every class name used by a rule must occur in `catalog`.
    pub fn new(catalog: Arc<Catalog>, manifest: ChannelManifest) -> Result<Self> {
        manifest.validate()?;
        let known: BTreeSet<&str> = catalog.specs().iter().map(|s| s.isa_set.as_str()).collect();
        let check_class = |name: &str| {
            if known.contains(name) {
                Ok(())
            } else {
                Err(Error::Config(format!("manifest names unknown class {name}")))
            }
        };
        let check_spec = |id: &str| {
            if catalog.spec(id).is_some() {
                Ok(())
            } else {
                Err(Error::Config(format!("manifest names unknown spec {id}")))
            }
        };
        for r in &manifest.data_rules {
            match &r.target {
                RuleTarget::Class(c) => check_class(c)?,
                RuleTarget::Spec(s) => check_spec(s)?,
            }
        }
        for r in &manifest.volatile_rules {
            check_class(&r.measured_class)?;
            check_class(&r.contender_class)?;
        }
        for r in &manifest.persistent_rules {
            check_class(&r.reset_class)?;
            check_class(&r.trigger_class)?;
            check_class(&r.measure_class)?;
        }
        for r in &manifest.fault_rules {
            check_spec(&r.spec_id)?;
        }

        let mut faults = ChannelManifest::builtin_faults();
        faults.extend(manifest.fault_library.clone());
        for s in catalog.specs() {
            if let Some(name) = &s.fault_rule_id {
                if !faults.contains_key(name) {
                    return Err(Error::Config(format!(
                        "spec {} refers to unknown fault rule {name}",
                        s.id
                    )));
                }
            }
        }

        Ok(SimBackend {
            catalog,
            manifest,
            faults,
            caps: Capabilities {
                fault_probe: true,
                levels: ExecLevel::ALL.to_vec(),
                transient: true,
            },
        })
    }

    pub fn with_capabilities(mut self, caps: Capabilities) -> Self {
        self.caps = caps;
        self
    }

    pub fn manifest(&self) -> &ChannelManifest {
        &self.manifest
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    fn spec(&self, id: &str) -> Result<&InstructionSpec> {
        self.catalog
            .spec(id)
            .ok_or_else(|| Error::Structural(format!("unknown spec {id}")))
    }

    fn latency(&self, b: &Binding, tc: &TestCase) -> Result<i64> {
        if b.is_nop() {
            return Ok(0);
        }
        if b.spec == SLEEP_ID {
            return Ok(tc.sleep_cycles as i64);
        }
        let spec = self.spec(&b.spec)?;
        Ok(self
            .manifest
            .base_latency
            .get(&spec.isa_set)
            .copied()
            .unwrap_or(self.manifest.default_latency))
    }

    fn class_of(&self, b: &Binding) -> Option<&str> {
        if b.is_nop() {
            return None;
        }
        self.catalog.spec(&b.spec).map(|s| s.isa_set.as_str())
    }

    /// Noise-free cycle count of the measurement sequence.
    pub fn timed_cycles(&self, tc: &TestCase, mode: ExecMode) -> Result<i64> {
        let seq = &tc.sequences;
        let [measure] = seq.measure.as_slice() else {
            return Err(Error::Structural(format!(
                "expected one measurement instruction, found {}",
                seq.measure.len()
            )));
        };
        let mut cycles = 0;
        for b in &seq.measure {
            cycles += self.latency(b, tc)?;
        }
        if measure.is_nop() || measure.spec == SLEEP_ID {
            return Ok(cycles);
        }
        let mspec = self.spec(&measure.spec)?;
        let mclass = mspec.isa_set.as_str();

        if mode == ExecMode::Normal {
            for r in &self.manifest.data_rules {
                let hit = match &r.target {
                    RuleTarget::Class(c) => c == mclass,
                    RuleTarget::Spec(s) => *s == mspec.id,
                };
                if hit && data_predicate(r.predicate, mspec, measure) {
                    cycles += r.delta_cycles;
                }
            }
        }

        let trigger = seq.trigger.first().filter(|b| !b.is_nop());
        let Some(trigger) = trigger else {
            return Ok(cycles);
        };
        let tclass = self.class_of(trigger);

        if tc.layout == ChannelCategory::VolatileChannel && (mode == ExecMode::Normal || tc.level == ExecLevel::SMT) {
            for r in &self.manifest.volatile_rules {
                if r.measured_class == mclass && Some(r.contender_class.as_str()) == tclass && r.level == tc.level {
                    cycles += r.delta_cycles;
                }
            }
        }

        if tc.layout == ChannelCategory::PersistentChannel {
            for r in &self.manifest.persistent_rules {
                if (mode == ExecMode::Transient && !r.transient_visible)
                    || r.measure_class != mclass
                    || Some(r.trigger_class.as_str()) != tclass
                    || !seq
                        .reset
                        .iter()
                        .any(|b| self.class_of(b) == Some(r.reset_class.as_str()))
                {
                    continue;
                }
                if addr_relation_holds(r.addr_relation, trigger.address, measure.address) {
                    cycles += r.delta_cycles;
                }
            }
        }
        Ok(cycles)
    }

    /// One timed run: the noise-free count plus one noise sample.
    pub fn simulate_run(&self, tc: &TestCase, mode: ExecMode, rng: &mut Rng) -> Result<i64> {
        Ok(self.timed_cycles(tc, mode)? + noise_sample(&self.manifest.noise, rng))
    }

    fn fault_matches(&self, pred: &FaultPredicate, spec: &InstructionSpec, init: &InitPolicy) -> bool {
        let values = || {
            init.operand_values(spec)
                .into_iter()
                .zip(&spec.operands)
                .filter(|(_, op)| op.kind != OperandKind::Immediate)
                .map(|(v, _)| v)
                .collect::<Vec<_>>()
        };
        match pred {
            FaultPredicate::Always => true,
            FaultPredicate::OperandZero => values().contains(&0),
            FaultPredicate::OperandAbove { limit } => values().iter().any(|v| v > limit),
            FaultPredicate::RegisterAbove { reg, limit } => init.register(reg) > *limit,
            FaultPredicate::RegisterMisaligned { reg, align } => *align != 0 && !init.register(reg).is_multiple_of(*align),
        }
    }
}

fn addr_relation_holds(rel: AddrRelation, a: Option<u64>, b: Option<u64>) -> bool {
    match (rel, a, b) {
        (AddrRelation::Any, _, _) => true,
        (AddrRelation::Same, Some(a), Some(b)) => a / PAGE_SIZE == b / PAGE_SIZE,
        (AddrRelation::Different, Some(a), Some(b)) => a / PAGE_SIZE != b / PAGE_SIZE,
        _ => false,
    }
}

fn data_predicate(pred: DataPredicate, spec: &InstructionSpec, b: &Binding) -> bool {
    let tags = |class: ValueClass| {
        b.values
            .iter()
            .flatten()
            .filter(move |v: &&DataValue| v.value_class == class)
            .map(inspect)
    };
    match pred {
        DataPredicate::IntZero => tags(ValueClass::Int).any(|t| t == DataTag::Zero),
        DataPredicate::IntMax => tags(ValueClass::Int).any(|t| t == DataTag::Max),
        DataPredicate::IntMin => tags(ValueClass::Int).any(|t| t == DataTag::Min),
        DataPredicate::FpSubnormal => tags(ValueClass::Fp).any(|t| t == DataTag::Subnormal),
        DataPredicate::FpNan => tags(ValueClass::Fp).any(|t| t == DataTag::Nan),
        DataPredicate::FpNegOneOrMax => tags(ValueClass::Fp).any(|t| t == DataTag::NegOne || t == DataTag::Max),
        DataPredicate::AddrCrossPage => {
            let Some(addr) = b.address else { return false };
            let width = spec
                .operands
                .iter()
                .filter(|o| o.kind == OperandKind::Memory)
                .map(|o| (o.width_bits as u64 / 8).max(1))
                .max()
                .unwrap_or(1);
            addr % PAGE_SIZE + width > PAGE_SIZE
        }
    }
}

/// Integer-rounded gaussian jitter plus an occasional spike.
pub(crate) fn noise_sample(noise: &Noise, rng: &mut Rng) -> i64 {
    let gauss = if noise.sigma > 0.0 {
        Normal::new(0.0, noise.sigma)
            .expect("sigma validated")
            .sample(rng)
            .round() as i64
    } else {
        0
    };
    let spike = if noise.spike_prob > 0.0 && rng.gen_bool(noise.spike_prob) {
        noise.spike_magnitude
    } else {
        0
    };
    gauss + spike
}

impl ExecutionBackend for SimBackend {
    fn capabilities(&self) -> Capabilities {
        self.caps.clone()
    }

    fn probe_fault(&self, spec: &InstructionSpec, init: &InitPolicy) -> Result<FaultOutcome> {
        if !self.caps.fault_probe {
            return Err(Error::Capability("single-instruction fault probing".into()));
        }
        for r in self.manifest.fault_rules.iter().filter(|r| r.spec_id == spec.id) {
            if self.fault_matches(&r.predicate, spec, init) {
                return Ok(FaultOutcome::Fault(r.signal));
            }
        }
        if let Some(def) = spec.fault_rule_id.as_ref().and_then(|n| self.faults.get(n)) {
            if self.fault_matches(&def.predicate, spec, init) {
                return Ok(FaultOutcome::Fault(def.signal));
            }
        }
        Ok(FaultOutcome::Ok)
    }

    fn execute(&self, pair: &TestCasePair, runs: usize, mode: ExecMode, rng: &mut Rng) -> Result<MeasurementResult> {
        if runs == 0 {
            return Err(Error::Argument("at least one run per side".into()));
        }
        if mode == ExecMode::Transient && !self.caps.transient {
            return Err(Error::Capability("transient execution".into()));
        }
        for tc in [&pair.with_trigger, &pair.without_trigger] {
            if !self.caps.levels.contains(&tc.level) {
                return Err(Error::Capability(format!("execution level {:?}", tc.level)));
            }
        }
        let with = self.timed_cycles(&pair.with_trigger, mode)?;
        let without = self.timed_cycles(&pair.without_trigger, mode)?;
        let noise = &self.manifest.noise;
        let mut runs_with = Vec::with_capacity(runs);
        let mut runs_without = Vec::with_capacity(runs);
        for _ in 0..runs {
            let n = noise_sample(noise, rng);
            let m = if noise.paired { n } else { noise_sample(noise, rng) };
            runs_with.push(with + n);
            runs_without.push(without + m);
        }
        Ok(MeasurementResult::from_runs(runs_with, runs_without))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{FaultRule, PersistentRule, Signal, VolatileRule};
    use crate::catalog::{Access, OperandSpec};
    use crate::mutation::{derive_space, make_value, Dim};
    use crate::seed::ClassTuple;
    use crate::testcase::{build_pair, BuildContext, DEFAULT_SLEEP_CYCLES};
    use rand::SeedableRng;

    fn spec(id: &str, isa: &str, class: ValueClass, mem: bool) -> InstructionSpec {
        InstructionSpec {
            id: id.into(),
            asm_template: id.into(),
            isa_set: isa.into(),
            extension: isa.into(),
            category: "C".into(),
            operands: vec![OperandSpec {
                kind: if mem {
                    OperandKind::Memory
                } else {
                    OperandKind::Register
                },
                width_bits: 64,
                value_class: class,
                access: Access::Read,
                reg: Some(if mem { "R8" } else { "RAX" }.into()),
            }],
            is_control_flow: false,
            is_pseudo: false,
            fault_rule_id: None,
        }
    }

    fn catalog() -> Arc<Catalog> {
        Arc::new(
            Catalog::new(
                vec![
                    spec("a", "A", ValueClass::Int, true),
                    spec("b", "B", ValueClass::Int, true),
                    spec("c", "C", ValueClass::Fp, true),
                ],
                "test",
            )
            .unwrap(),
        )
    }

    fn manifest() -> ChannelManifest {
        let mut m = ChannelManifest::default();
        m.noise = Noise::silent();
        for (k, v) in [("A", 10), ("B", 20), ("C", 400)] {
            m.base_latency.insert(k.into(), v);
        }
        m
    }

    fn pair(cat: &Catalog, ids: &[&str], dim: Dim, level: ExecLevel, seed: u64) -> TestCasePair {
        let specs: Vec<&InstructionSpec> = ids.iter().map(|i| cat.spec(i).unwrap()).collect();
        let ctx = BuildContext {
            region: Default::default(),
            sleep_cycles: DEFAULT_SLEEP_CYCLES,
            init: Arc::new(InitPolicy::uniform(cat, 1, 1)),
            levels: Vec::new(),
        };
        let tuple = ClassTuple((0..ids.len()).collect());
        let space = derive_space(ids.len()).unwrap();
        let mut rng = Rng::seed_from_u64(seed);
        build_pair(&tuple, &specs, &space, dim, level, &ctx, &mut rng).unwrap()
    }

    #[test]
    fn empty_rules_give_base_latency() {
        let cat = catalog();
        let be = SimBackend::new(cat.clone(), manifest()).unwrap();
        let p = pair(&cat, &["a", "b", "c"], Dim::Opcode, ExecLevel::ST, 0);
        assert_eq!(be.timed_cycles(&p.with_trigger, ExecMode::Normal).unwrap(), 400);
        let mut rng = Rng::seed_from_u64(1);
        let r = be.execute(&p, 10, ExecMode::Normal, &mut rng).unwrap();
        assert_eq!((r.median_with, r.diff), (400.0, 0.0));
    }

    #[test]
    fn persistent_rule_and_transient_suppression() {
        let cat = catalog();
        let mut m = manifest();
        m.persistent_rules.push(PersistentRule {
            reset_class: "A".into(),
            trigger_class: "B".into(),
            measure_class: "C".into(),
            addr_relation: AddrRelation::Any,
            delta_cycles: -252,
            transient_visible: false,
        });
        let be = SimBackend::new(cat.clone(), m).unwrap();
        let p = pair(&cat, &["a", "b", "c"], Dim::Opcode, ExecLevel::ST, 0);
        let mut rng = Rng::seed_from_u64(1);
        let r = be.execute(&p, 1, ExecMode::Normal, &mut rng).unwrap();
        assert_eq!(r.diff, -252.0);
        let r = be.execute(&p, 1, ExecMode::Transient, &mut rng).unwrap();
        assert_eq!(r.diff, 0.0);
        // the reset class has to be present
        let p = pair(&cat, &["b", "b", "c"], Dim::Opcode, ExecLevel::ST, 0);
        assert_eq!(be.execute(&p, 1, ExecMode::Normal, &mut rng).unwrap().diff, 0.0);
    }

    #[test]
    fn volatile_rule_matches_level() {
        let cat = catalog();
        let mut m = manifest();
        m.volatile_rules.push(VolatileRule {
            measured_class: "A".into(),
            contender_class: "B".into(),
            level: ExecLevel::SMT,
            delta_cycles: 40,
        });
        let be = SimBackend::new(cat.clone(), m).unwrap();
        let mut rng = Rng::seed_from_u64(1);
        let st = pair(&cat, &["a", "b"], Dim::Opcode, ExecLevel::ST, 0);
        assert_eq!(be.execute(&st, 1, ExecMode::Normal, &mut rng).unwrap().diff, 0.0);
        let smt = pair(&cat, &["a", "b"], Dim::Opcode, ExecLevel::SMT, 0);
        assert_eq!(be.execute(&smt, 1, ExecMode::Normal, &mut rng).unwrap().diff, 40.0);
    }

    #[test]
    fn data_rule_on_mutated_operand() {
        let cat = catalog();
        let mut m = manifest();
        m.data_rules.push(crate::backend::DataRule {
            target: RuleTarget::Class("A".into()),
            predicate: DataPredicate::IntZero,
            delta_cycles: -69,
        });
        let be = SimBackend::new(cat.clone(), m).unwrap();
        let mut p = pair(&cat, &["a"], Dim::Data, ExecLevel::ST, 0);
        let mut rng = Rng::seed_from_u64(9);
        let zero = make_value(ValueClass::Int, 64, DataTag::Zero, &mut rng).unwrap();
        p.without_trigger.sequences.measure[0].values = vec![Some(zero)];
        let r = be.execute(&p, 1, ExecMode::Normal, &mut rng).unwrap();
        assert_eq!(r.diff, 69.0);
        assert_eq!(be.execute(&p, 1, ExecMode::Transient, &mut rng).unwrap().diff, 0.0);
    }

    #[test]
    fn faults() {
        let cat = catalog();
        let mut m = manifest();
        m.fault_rules.push(FaultRule {
            spec_id: "c".into(),
            predicate: FaultPredicate::OperandZero,
            signal: Signal::SIGFPE,
        });
        let be = SimBackend::new(cat.clone(), m).unwrap();
        let c = cat.spec("c").unwrap();
        let zero = InitPolicy::uniform(&cat, 0, 0);
        let one = InitPolicy::uniform(&cat, 1, 1);
        assert_eq!(be.probe_fault(c, &zero).unwrap(), FaultOutcome::Fault(Signal::SIGFPE));
        assert_eq!(be.probe_fault(c, &one).unwrap(), FaultOutcome::Ok);
        assert_eq!(be.probe_fault(cat.spec("a").unwrap(), &zero).unwrap(), FaultOutcome::Ok);
    }

    #[test]
    fn capability_errors() {
        let cat = catalog();
        let be = SimBackend::new(cat.clone(), manifest())
            .unwrap()
            .with_capabilities(Capabilities {
                fault_probe: false,
                levels: vec![ExecLevel::ST],
                transient: false,
            });
        let mut rng = Rng::seed_from_u64(0);
        let p = pair(&cat, &["a", "b"], Dim::Opcode, ExecLevel::SMT, 0);
        assert!(matches!(
            be.execute(&p, 1, ExecMode::Normal, &mut rng),
            Err(Error::Capability(_))
        ));
        let p = pair(&cat, &["a", "b"], Dim::Opcode, ExecLevel::ST, 0);
        assert!(matches!(
            be.execute(&p, 1, ExecMode::Transient, &mut rng),
            Err(Error::Capability(_))
        ));
        let init = InitPolicy::uniform(&cat, 1, 1);
        assert!(be.probe_fault(cat.spec("a").unwrap(), &init).is_err());
    }

    #[test]
    fn unknown_names_are_rejected() {
        let mut m = manifest();
        m.volatile_rules.push(VolatileRule {
            measured_class: "A".into(),
            contender_class: "Z".into(),
            level: ExecLevel::ST,
            delta_cycles: 5,
        });
        assert!(matches!(SimBackend::new(catalog(), m), Err(Error::Config(_))));
    }
}
