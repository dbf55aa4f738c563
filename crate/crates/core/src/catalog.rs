//! The instruction catalog: the alphabet the fuzzer draws from.
//!
//! A catalog is loaded from a JSON file, sanitized (control flow removed,
//! memory operands unified onto one base register, a `SLEEP` pseudo
//! instruction injected), filtered against a backend's fault probe, and
//! finally classified into one class per ISA-set.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::{ExecutionBackend, FaultOutcome, Signal};
use crate::error::{Error, Result};

/// Every memory operand addresses through this register after sanitizing.
pub const UNIFIED_MEMORY_REGISTER: &str = "R8";
pub const SLEEP_ID: &str = "SLEEP";
pub const CATALOG_VERSION: u64 = 1;

pub const VALID_WIDTHS: [u16; 8] = [8, 16, 32, 64, 80, 128, 256, 512];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperandKind {
    Register,
    Memory,
    Immediate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueClass {
    Int,
    Fp,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Access {
    Read,
    Write,
    ReadWrite,
}

impl Access {
    pub fn reads(self) -> bool {
        matches!(self, Access::Read | Access::ReadWrite)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OperandSpec {
    pub kind: OperandKind,
    pub width_bits: u16,
    pub value_class: ValueClass,
    pub access: Access,
    /// Register name for register operands, base register for memory
    /// operands. Optional in the file format.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reg: Option<String>,
}

impl OperandSpec {
    /// Operands whose value the fuzzer may overwrite.
    pub fn is_data(&self) -> bool {
        self.kind != OperandKind::Immediate && self.value_class != ValueClass::Other && self.access.reads()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InstructionSpec {
    pub id: String,
    #[serde(rename = "asm")]
    pub asm_template: String,
    pub isa_set: String,
    pub extension: String,
    pub category: String,
    pub operands: Vec<OperandSpec>,
    #[serde(rename = "control_flow")]
    pub is_control_flow: bool,
    #[serde(rename = "pseudo", default, skip_serializing_if = "is_false")]
    pub is_pseudo: bool,
    #[serde(rename = "fault_rule", default)]
    pub fault_rule_id: Option<String>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl InstructionSpec {
    pub fn sleep() -> Self {
        InstructionSpec {
            id: SLEEP_ID.to_string(),
            asm_template: SLEEP_ID.to_string(),
            isa_set: SLEEP_ID.to_string(),
            extension: SLEEP_ID.to_string(),
            category: "PSEUDO".to_string(),
            operands: Vec::new(),
            is_control_flow: false,
            is_pseudo: true,
            fault_rule_id: None,
        }
    }

    pub fn is_sleep(&self) -> bool {
        self.is_pseudo && self.id == SLEEP_ID
    }

    pub fn has_memory_operand(&self) -> bool {
        self.operands.iter().any(|o| o.kind == OperandKind::Memory)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionClass {
    pub index: usize,
    pub isa_set: String,
    pub members: Vec<String>,
}

/// An immutable instruction list with optional classification.
#[derive(Debug, Clone)]
pub struct Catalog {
    specs: Vec<InstructionSpec>,
    classes: Vec<InstructionClass>,
    provenance: String,
    by_id: HashMap<String, usize>,
    class_of: HashMap<String, usize>,
}

impl PartialEq for Catalog {
    fn eq(&self, other: &Self) -> bool {
        self.specs == other.specs && self.classes == other.classes
    }
}

#[derive(Serialize)]
struct CatalogFileOut<'a> {
    version: u64,
    specs: &'a [InstructionSpec],
}

impl Catalog {
    /// Builds an unclassified catalog. Fails on duplicate ids.
    pub fn new(specs: Vec<InstructionSpec>, provenance: impl Into<String>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(specs.len());
        for (i, s) in specs.iter().enumerate() {
            if by_id.insert(s.id.clone(), i).is_some() {
                return Err(Error::Schema {
                    record: s.id.clone(),
                    field: "id".into(),
                    message: "duplicate id".into(),
                });
            }
        }
        Ok(Catalog {
            specs,
            classes: Vec::new(),
            provenance: provenance.into(),
            by_id,
            class_of: HashMap::new(),
        })
    }

    fn with_classes(mut self, classes: Vec<InstructionClass>) -> Self {
        self.class_of = classes
            .iter()
            .flat_map(|c| c.members.iter().map(move |m| (m.clone(), c.index)))
            .collect();
        self.classes = classes;
        self
    }

    pub fn from_json_str(text: &str, provenance: impl Into<String>) -> Result<Self> {
        let root: Value = serde_json::from_str(text).map_err(|e| Error::Schema {
            record: "<root>".into(),
            field: "<document>".into(),
            message: e.to_string(),
        })?;
        parse_catalog_value(&root, provenance.into())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&CatalogFileOut {
            version: CATALOG_VERSION,
            specs: &self.specs,
        })
        .expect("catalog serializes");
        s.push('\n');
        s
    }

    pub fn specs(&self) -> &[InstructionSpec] {
        &self.specs
    }

    pub fn classes(&self) -> &[InstructionClass] {
        &self.classes
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn is_classified(&self) -> bool {
        !self.classes.is_empty() || self.specs.is_empty()
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn spec(&self, id: &str) -> Option<&InstructionSpec> {
        self.by_id.get(id).map(|&i| &self.specs[i])
    }

    pub fn class_index_of(&self, id: &str) -> Option<usize> {
        self.class_of.get(id).copied()
    }

    pub fn class_by_isa_set(&self, isa_set: &str) -> Option<&InstructionClass> {
        self.classes.iter().find(|c| c.isa_set == isa_set)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.id.as_str())
    }
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<Catalog> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Catalog::from_json_str(&text, path.display().to_string())
}

fn schema(record: &str, field: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        record: record.to_string(),
        field: field.to_string(),
        message: message.into(),
    }
}

fn parse_catalog_value(root: &Value, provenance: String) -> Result<Catalog> {
    let obj = root
        .as_object()
        .ok_or_else(|| schema("<root>", "<document>", "expected an object"))?;
    match obj.get("version").and_then(Value::as_u64) {
        Some(CATALOG_VERSION) => {}
        Some(v) => return Err(schema("<root>", "version", format!("unsupported version {v}"))),
        None => return Err(schema("<root>", "version", "missing or not an integer")),
    }
    let records = obj
        .get("specs")
        .and_then(Value::as_array)
        .ok_or_else(|| schema("<root>", "specs", "missing or not an array"))?;

    let mut specs = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        specs.push(parse_record(i, rec)?);
    }
    Catalog::new(specs, provenance)
}

fn parse_record(index: usize, rec: &Value) -> Result<InstructionSpec> {
    let fallback = format!("#{index}");
    let obj = rec
        .as_object()
        .ok_or_else(|| schema(&fallback, "<record>", "expected an object"))?;
    let name = obj
        .get("id")
        .and_then(Value::as_str)
        .map(str::to_string)
        .unwrap_or(fallback);

    for field in ["id", "asm", "isa_set", "extension", "category"] {
        match obj.get(field) {
            Some(Value::String(_)) => {}
            Some(_) => return Err(schema(&name, field, "expected a string")),
            None => return Err(schema(&name, field, "missing")),
        }
    }
    match obj.get("control_flow") {
        Some(Value::Bool(_)) => {}
        Some(_) => return Err(schema(&name, "control_flow", "expected a boolean")),
        None => return Err(schema(&name, "control_flow", "missing")),
    }
    match obj.get("fault_rule") {
        None | Some(Value::Null) | Some(Value::String(_)) => {}
        Some(_) => return Err(schema(&name, "fault_rule", "expected a string or null")),
    }
    let operands = obj
        .get("operands")
        .ok_or_else(|| schema(&name, "operands", "missing"))?
        .as_array()
        .ok_or_else(|| schema(&name, "operands", "expected an array"))?;
    for (j, op) in operands.iter().enumerate() {
        let op_obj = op
            .as_object()
            .ok_or_else(|| schema(&name, &format!("operands[{j}]"), "expected an object"))?;
        for field in ["kind", "width_bits", "value_class", "access"] {
            if !op_obj.contains_key(field) {
                return Err(schema(&name, &format!("operands[{j}].{field}"), "missing"));
            }
        }
        let width = op_obj["width_bits"].as_u64().unwrap_or(0);
        if !VALID_WIDTHS.iter().any(|&w| u64::from(w) == width) {
            return Err(schema(
                &name,
                &format!("operands[{j}].width_bits"),
                format!("{} is not a supported width", op_obj["width_bits"]),
            ));
        }
    }

    serde_json::from_value(rec.clone()).map_err(|e| schema(&name, "<record>", e.to_string()))
}

/// Removes control flow, unifies memory operands onto
/// [`UNIFIED_MEMORY_REGISTER`] and injects exactly one `SLEEP` pseudo spec.
pub fn sanitize(cat: &Catalog) -> Catalog {
    let mut specs: Vec<InstructionSpec> = cat
        .specs
        .iter()
        .filter(|s| !s.is_control_flow && !s.is_sleep())
        .map(unify_memory_register)
        .collect();
    specs.push(InstructionSpec::sleep());
    Catalog::new(specs, cat.provenance.clone()).expect("sanitizing keeps ids unique")
}

fn unify_memory_register(spec: &InstructionSpec) -> InstructionSpec {
    let mut out = spec.clone();
    for op in out.operands.iter_mut().filter(|o| o.kind == OperandKind::Memory) {
        if let Some(old) = op.reg.replace(UNIFIED_MEMORY_REGISTER.to_string()) {
            if old != UNIFIED_MEMORY_REGISTER {
                out.asm_template = out
                    .asm_template
                    .replace(&format!("[{old}"), &format!("[{UNIFIED_MEMORY_REGISTER}"));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovedSpec {
    pub id: String,
    pub signal: Signal,
}

/// Result of a clean pass. Removed specs are kept here, never discarded.
#[derive(Debug, Clone)]
pub struct CleanReport {
    pub catalog: Catalog,
    pub removed: Vec<RemovedSpec>,
}

/// Keeps exactly the specs the backend can execute without faulting under
/// `policy`.
pub fn clean_pass(cat: &Catalog, backend: &dyn ExecutionBackend, policy: &InitPolicy) -> Result<CleanReport> {
    if !backend.capabilities().fault_probe {
        return Err(Error::Capability("single-instruction fault probing".into()));
    }
    let mut kept = Vec::with_capacity(cat.specs.len());
    let mut removed = Vec::new();
    for spec in &cat.specs {
        match backend.probe_fault(spec, policy)? {
            FaultOutcome::Ok => kept.push(spec.clone()),
            FaultOutcome::Fault(signal) => removed.push(RemovedSpec {
                id: spec.id.clone(),
                signal,
            }),
        }
    }
    if !removed.is_empty() {
        log::info!("clean pass removed {} of {} specs", removed.len(), cat.len());
    }
    Ok(CleanReport {
        catalog: Catalog::new(kept, cat.provenance.clone())?,
        removed,
    })
}

/// One class per distinct ISA-set, ordered lexicographically by name.
pub fn classify(cat: &Catalog) -> Catalog {
    let mut groups: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for s in &cat.specs {
        groups.entry(&s.isa_set).or_default().push(s.id.clone());
    }
    let classes = groups
        .into_iter()
        .enumerate()
        .map(|(index, (isa_set, mut members))| {
            members.sort();
            InstructionClass {
                index,
                isa_set: isa_set.to_string(),
                members,
            }
        })
        .collect();
    let base = Catalog::new(cat.specs.clone(), cat.provenance.clone()).expect("ids already unique");
    base.with_classes(classes)
}

/// Register and memory initialization used by the fault probe and by test
/// cases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitPolicy {
    pub register_init: BTreeMap<String, u64>,
    pub memory_init: Vec<u8>,
    /// Explicit operand values, one per operand, overriding the register and
    /// memory initialization for that spec.
    #[serde(default)]
    pub per_spec_overrides: BTreeMap<String, Vec<u64>>,
    /// Value for register operands that do not name a register.
    #[serde(default = "default_register_value")]
    pub default_register: u64,
}

fn default_register_value() -> u64 {
    1
}

/// General purpose registers every policy initializes.
pub const GPRS: [&str; 16] = [
    "RAX", "RBX", "RCX", "RDX", "RSI", "RDI", "RBP", "RSP", "R8", "R9", "R10", "R11", "R12", "R13", "R14", "R15",
];

impl InitPolicy {
    /// Every register and every memory byte set to the same value.
    pub fn uniform(cat: &Catalog, register_value: u64, memory_byte: u8) -> Self {
        let mut register_init: BTreeMap<String, u64> = GPRS.iter().map(|r| (r.to_string(), register_value)).collect();
        for name in registers_named(cat) {
            register_init.insert(name, register_value);
        }
        InitPolicy {
            register_init,
            memory_init: vec![memory_byte],
            per_spec_overrides: BTreeMap::new(),
            default_register: register_value,
        }
    }

    pub fn with_register(mut self, name: &str, value: u64) -> Self {
        self.register_init.insert(name.to_string(), value);
        self
    }

    pub fn with_override(mut self, spec_id: &str, values: Vec<u64>) -> Self {
        self.per_spec_overrides.insert(spec_id.to_string(), values);
        self
    }

    pub fn validate(&self, cat: &Catalog) -> Result<()> {
        if self.memory_init.is_empty() {
            return Err(Error::Config("memory_init pattern is empty".into()));
        }
        for name in registers_named(cat) {
            if !self.register_init.contains_key(&name) {
                return Err(Error::Config(format!("register {name} has no initial value")));
            }
        }
        Ok(())
    }

    pub fn register(&self, name: &str) -> u64 {
        self.register_init.get(name).copied().unwrap_or(self.default_register)
    }

    /// The little-endian word formed by repeating the memory pattern.
    pub fn memory_word(&self) -> u64 {
        let mut bytes = [0u8; 8];
        if !self.memory_init.is_empty() {
            for (i, b) in bytes.iter_mut().enumerate() {
                *b = self.memory_init[i % self.memory_init.len()];
            }
        }
        u64::from_le_bytes(bytes)
    }

    /// The initial value seen by each operand of `spec`.
    pub fn operand_values(&self, spec: &InstructionSpec) -> Vec<u64> {
        if let Some(v) = self.per_spec_overrides.get(&spec.id) {
            return v.clone();
        }
        spec.operands
            .iter()
            .map(|op| match op.kind {
                OperandKind::Memory => self.memory_word(),
                OperandKind::Register => op
                    .reg
                    .as_deref()
                    .map(|r| self.register(r))
                    .unwrap_or(self.default_register),
                OperandKind::Immediate => 0,
            })
            .collect()
    }
}

fn registers_named(cat: &Catalog) -> Vec<String> {
    let mut names: Vec<String> = cat
        .specs
        .iter()
        .flat_map(|s| s.operands.iter().filter_map(|o| o.reg.clone()))
        .collect();
    names.sort();
    names.dedup();
    names
}
