//! Deterministic generators for the bundled fixtures.
//!
//! The JSON files under `fixtures/` are the output of these functions; a test
//! regenerates them and compares bytes.

use std::collections::BTreeMap;
use std::path::Path;

use crate::backend::{
    AddrRelation, ChannelManifest, DataPredicate, DataRule, Noise, PersistentRule, RuleTarget, VolatileRule,
};
use crate::catalog::{Access, Catalog, InstructionSpec, OperandKind, OperandSpec, ValueClass};
use crate::error::{Error, Result};
use crate::mutation::ExecLevel;
use crate::pipeline::{CampaignConfig, ExceedPolicy};

fn reg(width: u16, class: ValueClass, access: Access, name: &str) -> OperandSpec {
    OperandSpec {
        kind: OperandKind::Register,
        width_bits: width,
        value_class: class,
        access,
        reg: Some(name.to_string()),
    }
}

fn mem(width: u16, class: ValueClass, access: Access) -> OperandSpec {
    OperandSpec {
        kind: OperandKind::Memory,
        width_bits: width,
        value_class: class,
        access,
        reg: Some("R8".to_string()),
    }
}

fn imm(width: u16) -> OperandSpec {
    OperandSpec {
        kind: OperandKind::Immediate,
        width_bits: width,
        value_class: ValueClass::Int,
        access: Access::Read,
        reg: None,
    }
}

fn spec(id: &str, asm: &str, isa_set: &str, category: &str, operands: Vec<OperandSpec>) -> InstructionSpec {
    InstructionSpec {
        id: id.to_string(),
        asm_template: asm.to_string(),
        isa_set: isa_set.to_string(),
        extension: extension_of(isa_set).to_string(),
        category: category.to_string(),
        operands,
        is_control_flow: false,
        is_pseudo: false,
        fault_rule_id: None,
    }
}

fn extension_of(isa_set: &str) -> &str {
    match isa_set {
        "I86" | "I186" | "I286PROTECTED" | "I286REAL" | "I386" | "I486" | "I486REAL" | "CMOV" | "LAHF"
        | "PENTIUMREAL" | "PPRO" | "LONGMODE" | "CMPXCHG16B" => "BASE",
        "X87" | "X87_BCD" => "X87",
        "AVX2GATHER" => "AVX2GATHER",
        "PENTIUMMMX" => "MMX",
        other => other,
    }
}

use Access::{Read as R, ReadWrite as RW, Write as W};
use ValueClass::{Fp, Int, Other};

/// Fourteen hand-written records covering every operand kind, one control
/// flow instruction and one faulting divide.
pub fn mini14() -> Catalog {
    let mut specs = vec![
        spec(
            "ADD_R64_R64",
            "ADD RAX, RBX",
            "I86",
            "BINARY",
            vec![reg(64, Int, RW, "RAX"), reg(64, Int, R, "RBX")],
        ),
        spec(
            "ADD_R32_M32",
            "ADD ECX, dword ptr [RSI]",
            "I386",
            "BINARY",
            vec![
                reg(32, Int, RW, "RCX"),
                OperandSpec {
                    reg: Some("RSI".into()),
                    ..mem(32, Int, R)
                },
            ],
        ),
        spec(
            "IMUL_R64_R64_I8",
            "IMUL RAX, RBX, 3",
            "I86",
            "BINARY",
            vec![reg(64, Int, W, "RAX"), reg(64, Int, R, "RBX"), imm(8)],
        ),
        spec(
            "LAR_R32_M16",
            "LAR ECX, word ptr [R8]",
            "I286PROTECTED",
            "SYSTEM",
            vec![reg(32, Int, W, "RCX"), mem(16, Int, R)],
        ),
        spec(
            "VERW_M16",
            "VERW word ptr [R8]",
            "I286PROTECTED",
            "SYSTEM",
            vec![mem(16, Int, R)],
        ),
        spec(
            "FADD_ST0_M32",
            "FADD dword ptr [R8]",
            "X87",
            "X87_ALU",
            vec![reg(80, Fp, RW, "ST0"), mem(32, Fp, R)],
        ),
        spec(
            "FDIV_ST0_M64",
            "FDIV qword ptr [R8]",
            "X87",
            "X87_ALU",
            vec![reg(80, Fp, RW, "ST0"), mem(64, Fp, R)],
        ),
        spec(
            "FBLD_M80",
            "FBLD tbyte ptr [R8]",
            "X87_BCD",
            "X87_ALU",
            vec![reg(80, Fp, W, "ST0"), mem(80, Int, R)],
        ),
        spec(
            "VMULPS_XMM_XMM_M128",
            "VMULPS XMM1, XMM2, xmmword ptr [R8]",
            "AVX",
            "AVX",
            vec![reg(128, Fp, W, "XMM1"), reg(128, Fp, R, "XMM2"), mem(128, Fp, R)],
        ),
        spec(
            "VADDPD_YMM_YMM_M256",
            "VADDPD YMM1, YMM2, ymmword ptr [R8]",
            "AVX",
            "AVX",
            vec![reg(256, Fp, W, "YMM1"), reg(256, Fp, R, "YMM2"), mem(256, Fp, R)],
        ),
        spec(
            "PMULUDQ_MM_M64",
            "PMULUDQ MM1, qword ptr [R8]",
            "MMX",
            "MMX",
            vec![reg(64, Int, RW, "MM1"), mem(64, Int, R)],
        ),
        spec(
            "RDRAND_R16",
            "RDRAND CX",
            "RDRAND",
            "RDRAND",
            vec![reg(16, Int, W, "RCX")],
        ),
        spec(
            "CLFLUSH_M8",
            "CLFLUSH byte ptr [R8]",
            "CLFSH",
            "MISC",
            vec![mem(8, Other, R)],
        ),
        spec("JMP_REL32", "JMP 0x10", "I86", "UNCOND_BR", vec![imm(32)]),
    ];
    specs[6].fault_rule_id = Some("fp_zero_divide".into());
    specs[13].is_control_flow = true;
    Catalog::new(specs, "mini14").expect("unique ids")
}

/// Divides and alignment-sensitive loads whose fault behavior depends on the
/// initialization policy, plus a handful of harmless records.
pub fn faulting() -> Catalog {
    let mut specs = vec![
        spec(
            "FDIV_ST0_M32",
            "FDIV dword ptr [R8]",
            "X87",
            "X87_ALU",
            vec![reg(80, Fp, RW, "ST0"), mem(32, Fp, R)],
        ),
        spec(
            "FIDIV_M16",
            "FIDIV word ptr [R8]",
            "X87",
            "X87_ALU",
            vec![reg(80, Fp, RW, "ST0"), mem(16, Int, R)],
        ),
        spec(
            "DIV_R64",
            "DIV RBX",
            "I86",
            "BINARY",
            vec![reg(64, Int, RW, "RAX"), reg(64, Int, RW, "RDX"), reg(64, Int, R, "RBX")],
        ),
        spec(
            "IDIV_M32",
            "IDIV dword ptr [R8]",
            "I386",
            "BINARY",
            vec![reg(32, Int, RW, "RAX"), reg(32, Int, RW, "RDX"), mem(32, Int, R)],
        ),
        spec(
            "REP_MOVSB",
            "REP MOVSB",
            "I86",
            "STRINGOP",
            vec![reg(64, Int, RW, "RCX"), mem(8, Int, R)],
        ),
        spec(
            "MOVAPS_XMM_M128",
            "MOVAPS XMM1, xmmword ptr [R8]",
            "SSE",
            "DATAXFER",
            vec![reg(128, Fp, W, "XMM1"), mem(128, Fp, R)],
        ),
        spec("UD2", "UD2", "PPRO", "MISC", vec![]),
        spec("INT3", "INT3", "I86", "INTERRUPT", vec![]),
        spec(
            "ADD_R64_R64",
            "ADD RAX, RBX",
            "I86",
            "BINARY",
            vec![reg(64, Int, RW, "RAX"), reg(64, Int, R, "RBX")],
        ),
        spec(
            "FADD_ST0_M32",
            "FADD dword ptr [R8]",
            "X87",
            "X87_ALU",
            vec![reg(80, Fp, RW, "ST0"), mem(32, Fp, R)],
        ),
        spec(
            "VADDPS_XMM_XMM_XMM",
            "VADDPS XMM1, XMM2, XMM3",
            "AVX",
            "AVX",
            vec![
                reg(128, Fp, W, "XMM1"),
                reg(128, Fp, R, "XMM2"),
                reg(128, Fp, R, "XMM3"),
            ],
        ),
        spec(
            "POPCNT_R64_R64",
            "POPCNT RAX, RBX",
            "POPCNT",
            "BINARY",
            vec![reg(64, Int, W, "RAX"), reg(64, Int, R, "RBX")],
        ),
    ];
    let faults = [
        (0, "fp_zero_divide"),
        (1, "fp_zero_divide"),
        (2, "int_zero_divide"),
        (3, "int_zero_divide"),
        (4, "rcx_large"),
        (5, "aligned16"),
        (6, "illegal"),
        (7, "trap"),
    ];
    for (i, f) in faults {
        specs[i].fault_rule_id = Some(f.to_string());
    }
    Catalog::new(specs, "faulting").expect("unique ids")
}

/// Four classes of two members each.
pub fn micro() -> Catalog {
    let mut specs = Vec::new();
    for (set, a, b) in [
        ("AES", "AESENC", "AESDEC"),
        ("I286PROTECTED", "LAR", "LSL"),
        ("MMX", "PADDB", "PMULUDQ"),
        ("X87", "FADD", "FMUL"),
    ] {
        for m in [a, b] {
            let (w, class) = match set {
                "X87" => (32, Fp),
                "AES" => (128, Int),
                "MMX" => (64, Int),
                _ => (16, Int),
            };
            let dst = match set {
                "X87" => reg(80, Fp, RW, "ST0"),
                "AES" => reg(128, Int, RW, "XMM1"),
                "MMX" => reg(64, Int, RW, "MM1"),
                _ => reg(32, Int, W, "RCX"),
            };
            specs.push(spec(
                &format!("{m}_M{w}"),
                &format!("{m} {}, [R8]", dst.reg.as_deref().unwrap()),
                set,
                set,
                vec![dst, mem(w, class, R)],
            ));
        }
    }
    Catalog::new(specs, "micro").expect("unique ids")
}

/// One integer-zero data rule on `I286PROTECTED`.
pub fn micro_manifest() -> ChannelManifest {
    let mut m = ChannelManifest {
        base_latency: [("AES", 4), ("I286PROTECTED", 120), ("MMX", 2), ("X87", 8)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        ..ChannelManifest::default()
    };
    m.data_rules.push(DataRule {
        target: RuleTarget::Class("I286PROTECTED".into()),
        predicate: DataPredicate::IntZero,
        delta_cycles: -69,
    });
    m
}

/// Operand shapes used by the standard catalog generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    /// `op r, r/m` on general purpose registers.
    IntBinary,
    /// Three integer sources, e.g. protected-mode selector checks with an
    /// implicit segment and limit operand.
    IntTernary,
    IntUnary,
    /// x87 arithmetic reading the top two stack slots and memory.
    X87,
    /// Packed BCD with three integer inputs.
    Bcd,
    /// `op xmm, xmm, xmm/m` with a write-only destination.
    Vex,
    /// `op xmm, xmm, xmm/m` with a read-write destination.
    Fma,
    Sse,
    Mmx,
    /// Register write only.
    Random,
    /// State save and system instructions without numeric inputs.
    System,
}

/// A class of the standard catalog.
#[derive(Debug, Clone)]
pub struct ClassDef {
    pub isa_set: &'static str,
    pub size: usize,
    shape: Shape,
    pub latency: i64,
    mnemonics: &'static [&'static str],
}

fn class(
    isa_set: &'static str,
    size: usize,
    shape: Shape,
    latency: i64,
    mnemonics: &'static [&'static str],
) -> ClassDef {
    ClassDef {
        isa_set,
        size,
        shape,
        latency,
        mnemonics,
    }
}

/// Class table of the standard catalog: 57 ISA-sets, 600 records. `SLEEP`
/// is added by sanitizing and makes 58 classes.
pub fn standard_classes() -> Vec<ClassDef> {
    use Shape::*;
    vec![
        class("3DNOW", 10, Mmx, 6, &["PFADD", "PFMUL", "PFSUB", "PFMAX", "PFMIN"]),
        class("ADOX_ADCX", 4, IntBinary, 2, &["ADOX", "ADCX"]),
        class("AES", 8, Sse, 7, &["AESENC", "AESDEC", "AESENCLAST", "AESDECLAST"]),
        class(
            "AVX",
            12,
            Vex,
            8,
            &["VADDPD", "VADDPS", "VSUBPD", "VSUBPS", "VMAXPS", "VMINPS"],
        ),
        class(
            "AVX2",
            28,
            Vex,
            6,
            &[
                "VPERMD",
                "VPBROADCASTD",
                "VPADDD",
                "VPMULLD",
                "VPSLLVD",
                "VPSRLVD",
                "VPAND",
                "VPOR",
            ],
        ),
        class(
            "AVX512F",
            26,
            Vex,
            9,
            &[
                "VADDPS",
                "VMULPS",
                "VPERMPS",
                "VPTERNLOGD",
                "VPADDQ",
                "VPANDD",
                "VPORD",
                "VPXORD",
            ],
        ),
        class("AVXAES", 4, Vex, 8, &["VAESENC", "VAESDEC"]),
        class("BMI1", 10, IntBinary, 3, &["ANDN", "BEXTR", "BLSI", "BLSR", "BLSMSK"]),
        class("BMI2", 10, IntBinary, 3, &["BZHI", "PDEP", "PEXT", "SARX", "SHLX"]),
        class("CET", 4, System, 12, &["INCSSPQ", "RDSSPQ"]),
        class("CLFSH", 4, System, 70, &["CLFLUSH"]),
        class("CLWB", 4, System, 50, &["CLWB"]),
        class("CLZERO", 4, System, 80, &["CLZERO"]),
        class(
            "CMOV",
            20,
            IntBinary,
            2,
            &["CMOVZ", "CMOVNZ", "CMOVB", "CMOVA", "CMOVS"],
        ),
        class("ENQCMD", 4, System, 200, &["ENQCMD"]),
        class("F16C", 4, Vex, 7, &["VCVTPH2PS", "VCVTPS2PH"]),
        class(
            "FMA",
            60,
            Fma,
            160,
            &[
                "VFMADD132PS",
                "VFMADD213PS",
                "VFMADD231PS",
                "VFMSUB132PS",
                "VFMSUB213PS",
                "VFMSUB231PS",
                "VFNMADD132PS",
                "VFNMADD213PS",
                "VFNMADD231PS",
                "VFNMSUB132PS",
                "VFNMSUB213PS",
                "VFNMSUB231PS",
                "VFMADD132PD",
                "VFMADD213PD",
                "VFMADD231PD",
            ],
        ),
        class("FXSAVE", 4, System, 90, &["FXSAVE", "FXRSTOR"]),
        class("GFNI", 6, Sse, 5, &["GF2P8MULB", "GF2P8AFFINEQB"]),
        class("HRESET", 4, System, 60, &["HRESET"]),
        class("I186", 4, IntBinary, 3, &["BOUND", "ENTER", "IMUL"]),
        class(
            "I286PROTECTED",
            24,
            IntTernary,
            140,
            &["LAR", "LSL", "VERR", "VERW", "ARPL", "SLDT"],
        ),
        class(
            "I386",
            30,
            IntBinary,
            2,
            &[
                "BT", "BTS", "BTR", "BTC", "SHLD", "SHRD", "MOVSX", "MOVZX", "SETZ", "BSF",
            ],
        ),
        class("I486", 6, IntBinary, 4, &["BSWAP", "XADD", "CMPXCHG"]),
        class(
            "I86",
            22,
            IntBinary,
            1,
            &[
                "ADD", "SUB", "AND", "OR", "XOR", "CMP", "TEST", "ADC", "SBB", "MOV", "INC", "DEC", "NEG", "NOT",
                "MUL", "SHL", "SHR", "SAR", "ROL", "ROR",
            ],
        ),
        class("INVPCID", 4, System, 100, &["INVPCID"]),
        class("KEYLOCKER", 4, Sse, 30, &["AESENC128KL", "AESDEC128KL"]),
        class("LAHF", 4, IntUnary, 1, &["LAHF", "SAHF"]),
        class("LZCNT", 4, IntBinary, 3, &["LZCNT"]),
        class("MMX", 10, Mmx, 5, &["PMULUDQ", "PADDB", "PADDW", "PSUBB", "PAND"]),
        class("MONITOR", 4, System, 40, &["MONITOR", "MWAIT"]),
        class("MOVBE", 4, IntBinary, 3, &["MOVBE"]),
        class("PCLMULQDQ", 4, Sse, 7, &["PCLMULQDQ"]),
        class("PENTIUMMMX", 4, Mmx, 5, &["RDPMC", "EMMS"]),
        class("POPCNT", 6, IntBinary, 3, &["POPCNT"]),
        class("PREFETCHW", 4, System, 20, &["PREFETCHW"]),
        class("RDPID", 4, Random, 30, &["RDPID"]),
        class("RDRAND", 6, Random, 400, &["RDRAND"]),
        class("RDSEED", 6, Random, 450, &["RDSEED"]),
        class(
            "RDWRFSGS",
            4,
            IntUnary,
            10,
            &["RDFSBASE", "WRFSBASE", "RDGSBASE", "WRGSBASE"],
        ),
        class("SHA", 6, Sse, 8, &["SHA1RNDS4", "SHA256RNDS2", "SHA1MSG1"]),
        class("SMAP", 4, System, 18, &["STAC", "CLAC"]),
        class(
            "SSE",
            28,
            Sse,
            5,
            &[
                "ADDPS", "MULPS", "SUBPS", "DIVPS", "MAXPS", "MINPS", "ANDPS", "ORPS", "SQRTPS", "RCPPS",
            ],
        ),
        class(
            "SSE2",
            36,
            Sse,
            5,
            &[
                "ADDPD",
                "MULPD",
                "SUBPD",
                "DIVPD",
                "PADDQ",
                "PMULUDQ",
                "PSHUFD",
                "PUNPCKLQDQ",
                "SQRTPD",
                "MAXPD",
            ],
        ),
        class("SSE3", 8, Sse, 6, &["ADDSUBPS", "HADDPS", "MOVSLDUP", "LDDQU"]),
        class(
            "SSE4",
            28,
            Sse,
            6,
            &[
                "PMULLD", "PMINSD", "PMAXSD", "BLENDPS", "ROUNDPS", "DPPS", "PTEST", "PMOVZXBD",
            ],
        ),
        class("SSE42", 6, IntBinary, 4, &["CRC32", "PCMPESTRI", "PCMPISTRI"]),
        class(
            "SSSE3",
            12,
            Sse,
            4,
            &["PSHUFB", "PABSB", "PALIGNR", "PHADDW", "PMADDUBSW", "PSIGNB"],
        ),
        class("TBM", 8, IntBinary, 3, &["BLCFILL", "BLCI", "BLSFILL", "T1MSKC"]),
        class("UINTR", 4, System, 60, &["SENDUIPI", "TESTUI"]),
        class("VMX", 8, System, 500, &["VMREAD", "VMWRITE", "VMPTRST", "INVEPT"]),
        class("VPCLMULQDQ", 4, Vex, 8, &["VPCLMULQDQ"]),
        class(
            "X87",
            16,
            X87,
            320,
            &[
                "FADD", "FMUL", "FSUB", "FSUBR", "FDIV", "FDIVR", "FCOM", "FSCALE", "FPREM", "FPATAN", "FYL2X", "FADDP",
            ],
        ),
        class("X87_BCD", 30, Bcd, 180, &["FBLD", "FBSTP"]),
        class("XOP", 6, Vex, 7, &["VPROTD", "VPSHAD", "VPCMOV"]),
        class("XSAVE", 4, System, 150, &["XSAVE", "XRSTOR"]),
        class("XSAVEOPT", 4, System, 120, &["XSAVEOPT"]),
    ]
}

/// Operand lists for the `i`-th form of a shape, with the asm operand text.
fn form(shape: Shape, i: usize) -> (String, Vec<OperandSpec>) {
    const GP: [(&str, &str); 4] = [("RAX", "RBX"), ("RCX", "RDX"), ("RSI", "RDI"), ("R9", "R10")];
    const WIDTHS: [u16; 4] = [64, 32, 16, 8];
    let w = WIDTHS[i % 4];
    let (a, b) = GP[(i / 4) % 4];
    match shape {
        Shape::IntBinary => {
            if i.is_multiple_of(2) {
                (format!("{a}, {b}"), vec![reg(w, Int, RW, a), reg(w, Int, R, b)])
            } else {
                (format!("{a}, [R8]"), vec![reg(w, Int, RW, a), mem(w, Int, R)])
            }
        }
        Shape::IntTernary => (
            format!("{a}, {b}, [R8]"),
            vec![reg(w.max(16), Int, RW, a), reg(w.max(16), Int, R, b), mem(16, Int, R)],
        ),
        Shape::IntUnary => (a.to_string(), vec![reg(w, Int, RW, a)]),
        Shape::X87 => {
            let m = [32, 64, 80][i % 3];
            (
                format!("ST(0), ST(1), m{m}fp [R8]"),
                vec![reg(80, Fp, RW, "ST0"), reg(80, Fp, R, "ST1"), mem(m, Fp, R)],
            )
        }
        Shape::Bcd => (
            "ST(0), ST(1), [R8]".to_string(),
            vec![reg(80, Int, RW, "ST0"), reg(80, Int, R, "ST1"), mem(80, Int, R)],
        ),
        Shape::Vex | Shape::Fma => {
            let (w, r) = if i.is_multiple_of(2) { (128, "XMM") } else { (256, "YMM") };
            let dst_access = if shape == Shape::Fma { RW } else { W };
            let src2 = if (i / 2).is_multiple_of(2) {
                reg(w, Fp, R, &format!("{r}3"))
            } else {
                mem(w, Fp, R)
            };
            (
                format!(
                    "{r}1, {r}2, {}",
                    if src2.kind == OperandKind::Memory {
                        "[R8]".into()
                    } else {
                        format!("{r}3")
                    }
                ),
                vec![
                    reg(w, Fp, dst_access, &format!("{r}1")),
                    reg(w, Fp, R, &format!("{r}2")),
                    src2,
                ],
            )
        }
        Shape::Sse => {
            if i.is_multiple_of(2) {
                (
                    "XMM1, XMM2".into(),
                    vec![reg(128, Fp, RW, "XMM1"), reg(128, Fp, R, "XMM2")],
                )
            } else {
                ("XMM1, [R8]".into(), vec![reg(128, Fp, RW, "XMM1"), mem(128, Fp, R)])
            }
        }
        Shape::Mmx => {
            if i.is_multiple_of(2) {
                ("MM1, MM2".into(), vec![reg(64, Int, RW, "MM1"), reg(64, Int, R, "MM2")])
            } else {
                ("MM1, [R8]".into(), vec![reg(64, Int, RW, "MM1"), mem(64, Int, R)])
            }
        }
        Shape::Random => {
            let w = [16, 32, 64][i % 3];
            (format!("{a}/{w}"), vec![reg(w, Int, W, a)])
        }
        Shape::System => {
            if i.is_multiple_of(2) {
                ("[R8]".into(), vec![mem(64, Other, R)])
            } else {
                (String::new(), vec![])
            }
        }
    }
}

fn class_specs(def: &ClassDef) -> Vec<InstructionSpec> {
    let n = def.mnemonics.len();
    (0..def.size)
        .map(|i| {
            let mnemonic = def.mnemonics[i % n];
            let (text, operands) = form(def.shape, i / n);
            let id = format!("{mnemonic}_{}_{}", def.isa_set, i);
            let asm = if text.is_empty() {
                mnemonic.to_string()
            } else {
                format!("{mnemonic} {text}")
            };
            spec(&id, &asm, def.isa_set, def.isa_set, operands)
        })
        .collect()
}

/// The 600-record catalog of the standard fixture.
pub fn standard_catalog() -> Catalog {
    let specs = standard_classes().iter().flat_map(class_specs).collect();
    Catalog::new(specs, "standard").expect("unique ids")
}

/// Twelve planted channels: four data rules, four volatile rules across all
/// levels and four persistent rules.
pub fn standard_manifest() -> ChannelManifest {
    let base_latency: BTreeMap<String, i64> = standard_classes()
        .iter()
        .map(|c| (c.isa_set.to_string(), c.latency))
        .collect();
    let data = |class: &str, predicate, delta_cycles| DataRule {
        target: RuleTarget::Class(class.into()),
        predicate,
        delta_cycles,
    };
    let volatile = |m: &str, c: &str, level, delta_cycles| VolatileRule {
        measured_class: m.into(),
        contender_class: c.into(),
        level,
        delta_cycles,
    };
    let persistent = |r: &str, t: &str, m: &str, delta_cycles, transient_visible| PersistentRule {
        reset_class: r.into(),
        trigger_class: t.into(),
        measure_class: m.into(),
        addr_relation: AddrRelation::Any,
        delta_cycles,
        transient_visible,
    };
    ChannelManifest {
        base_latency,
        default_latency: 1,
        data_rules: vec![
            data("I286PROTECTED", DataPredicate::IntZero, -69),
            data("FMA", DataPredicate::FpSubnormal, -101),
            data("X87", DataPredicate::FpNegOneOrMax, 10),
            data("X87_BCD", DataPredicate::IntZero, -20),
        ],
        volatile_rules: vec![
            volatile("X87", "X87", ExecLevel::ST, 45),
            volatile("MMX", "X87", ExecLevel::SMT, 60),
            volatile("RDRAND", "AVX", ExecLevel::SMT, 30),
            volatile("RDRAND", "I286PROTECTED", ExecLevel::MTCC, 35),
        ],
        persistent_rules: vec![
            persistent("MMX", "X87", "X87", -27, false),
            persistent("X87", "X87", "X87", -252, false),
            persistent("RDRAND", "AVX", "AVX", 135, true),
            persistent("RDRAND", "I286PROTECTED", "I286PROTECTED", 100, true),
        ],
        noise: Noise {
            sigma: 3.0,
            ..Noise::default()
        },
        fault_rules: Vec::new(),
        fault_library: BTreeMap::new(),
    }
}

/// The planted tuples of [`standard_manifest`], by ISA-set name.
pub fn standard_targets() -> Vec<Vec<String>> {
    let m = standard_manifest();
    let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let mut out = Vec::new();
    for r in &m.data_rules {
        if let RuleTarget::Class(c) = &r.target {
            out.push(names(&[c]));
        }
    }
    for r in &m.volatile_rules {
        out.push(names(&[&r.measured_class, &r.contender_class]));
    }
    for r in &m.persistent_rules {
        out.push(names(&[&r.reset_class, &r.trigger_class, &r.measure_class]));
    }
    out
}

/// Campaign settings used with the standard fixture.
pub fn standard_config() -> CampaignConfig {
    CampaignConfig {
        max_slots: 3,
        t_fraction: 0.5,
        repetitions: 10,
        rng_seed: 1,
        initial_seed: vec!["X87".into()],
        neighbor_budget: 1,
        on_exceed_max: ExceedPolicy::Skip,
        max_invocations: Some(1_000_000),
        ..CampaignConfig::default()
    }
}

/// A CLI run file: the campaign settings plus catalog and manifest paths
/// relative to the file.
pub fn run_file(cfg: &CampaignConfig, catalog: &str, manifest: &str) -> String {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    let obj = v.as_object_mut().expect("config is an object");
    obj.insert("catalog".into(), catalog.into());
    obj.insert("manifest".into(), manifest.into());
    let mut s = serde_json::to_string_pretty(&v).expect("json");
    s.push('\n');
    s
}

/// Writes every fixture as JSON into `dir`.
pub fn write_all(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let put = |name: &str, text: String| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    put("mini14.json", mini14().to_json())?;
    put("faulting.json", faulting().to_json())?;
    put("micro.json", micro().to_json())?;
    put("micro_manifest.json", micro_manifest().to_json())?;
    put("standard_catalog.json", standard_catalog().to_json())?;
    put("standard_manifest.json", standard_manifest().to_json())?;
    put(
        "standard_config.json",
        run_file(&standard_config(), "standard_catalog.json", "standard_manifest.json"),
    )?;
    Ok(())
}
