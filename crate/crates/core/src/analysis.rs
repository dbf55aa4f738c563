//! Clustering, covert and transient verification, A/B comparison and report
//! files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::backend::{median, median_f64, ExecMode, ExecutionBackend};
use crate::catalog::{Access, Catalog, OperandKind};
use crate::error::{Error, Result};
use crate::mutation::{ChannelCategory, Dim};
use crate::pipeline::{run_campaign, CampaignConfig, CampaignMode, CampaignReport, ConfirmedFinding};
use crate::rng::Rng;
use crate::testcase::Binding;

pub const DELTA_BUCKET: i64 = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryPattern {
    None,
    Load,
    Store,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClusterKey {
    pub category: ChannelCategory,
    pub extensions: Vec<String>,
    pub memory_pattern: MemoryPattern,
    pub delta_bucket: i64,
}

/// Rounds to the nearest multiple of [`DELTA_BUCKET`], halves away from zero.
pub fn delta_bucket(diff: f64) -> i64 {
    (diff / DELTA_BUCKET as f64).round() as i64 * DELTA_BUCKET
}

impl ClusterKey {
    pub fn of(f: &ConfirmedFinding, cat: &Catalog) -> ClusterKey {
        let specs: Vec<_> = f.candidate.concrete.iter().filter_map(|id| cat.spec(id)).collect();
        let extensions: BTreeSet<String> = specs.iter().map(|s| s.extension.clone()).collect();
        let (mut load, mut store) = (false, false);
        for op in specs.iter().flat_map(|s| &s.operands) {
            if op.kind != OperandKind::Memory {
                continue;
            }
            load |= op.access.reads();
            store |= matches!(op.access, Access::Write | Access::ReadWrite);
        }
        let memory_pattern = match (load, store) {
            (false, false) => MemoryPattern::None,
            (true, false) => MemoryPattern::Load,
            (false, true) => MemoryPattern::Store,
            (true, true) => MemoryPattern::Mixed,
        };
        ClusterKey {
            category: f.category,
            extensions: extensions.into_iter().collect(),
            memory_pattern,
            delta_bucket: delta_bucket(f.confirm_diff),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub key: ClusterKey,
    /// Indices into the clustered findings, in input order.
    pub members: Vec<usize>,
    /// The member with the largest `|confirm_diff|`; the earliest on ties.
    pub representative: usize,
}

/// Groups findings by [`ClusterKey`]. Clusters come out in key order.
pub fn cluster(findings: &[ConfirmedFinding], cat: &Catalog) -> Vec<Cluster> {
    let mut groups: BTreeMap<ClusterKey, Vec<usize>> = BTreeMap::new();
    for (i, f) in findings.iter().enumerate() {
        groups.entry(ClusterKey::of(f, cat)).or_default().push(i);
    }
    groups
        .into_iter()
        .map(|(key, members)| {
            let mut representative = members[0];
            for &i in &members[1..] {
                if findings[i].confirm_diff.abs() > findings[representative].confirm_diff.abs() {
                    representative = i;
                }
            }
            Cluster {
                key,
                members,
                representative,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovertParams {
    pub bits: usize,
    pub transfers: usize,
    pub calibration_pairs: usize,
    /// Timed runs per received bit; the receiver decodes their median.
    pub samples_per_bit: usize,
    pub clock_hz: f64,
}

impl Default for CovertParams {
    fn default() -> Self {
        CovertParams {
            bits: 1024,
            transfers: 10,
            calibration_pairs: 32,
            samples_per_bit: 5,
            clock_hz: 3.0e9,
        }
    }
}

pub const USABLE_ACCURACY: f64 = 0.70;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovertResult {
    pub bits_sent: usize,
    pub repetitions: usize,
    pub accuracy: f64,
    /// Bits per second of simulated time.
    pub bitrate_estimate: f64,
    pub usable: bool,
    /// Median with-trigger minus median without-trigger over calibration.
    pub separation: f64,
    pub midpoint: f64,
}

/// Replays the finding's pair as a covert channel. A `1` runs the
/// with-trigger case, a `0` the without-trigger case; the receiver compares
/// each timing against the calibrated midpoint.
pub fn verify_covert(
    f: &ConfirmedFinding,
    backend: &dyn ExecutionBackend,
    params: &CovertParams,
    rng: &mut Rng,
) -> Result<CovertResult> {
    if params.bits == 0 || params.transfers == 0 || params.calibration_pairs == 0 || params.samples_per_bit == 0 {
        return Err(Error::Argument("covert parameters must be positive".into()));
    }
    if !(params.clock_hz > 0.0) {
        return Err(Error::Argument("clock_hz must be positive".into()));
    }
    let pair = &f.candidate.pair;
    let k = params.samples_per_bit;
    let mut cal_with = Vec::new();
    let mut cal_without = Vec::new();
    for _ in 0..params.calibration_pairs {
        let m = backend.execute(pair, k, ExecMode::Normal, rng)?;
        cal_with.push(m.median_with);
        cal_without.push(m.median_without);
    }
    let (hi1, lo1) = (median_f64(&cal_with), median_f64(&cal_without));
    let separation = hi1 - lo1;
    let midpoint = (hi1 + lo1) / 2.0;

    let mut correct = 0usize;
    let mut cycles = 0i64;
    for _ in 0..params.transfers {
        for _ in 0..params.bits {
            let bit = rng.gen_bool(0.5);
            let m = backend.execute(pair, k, ExecMode::Normal, rng)?;
            let runs = if bit { &m.runs_with } else { &m.runs_without };
            cycles += runs.iter().sum::<i64>();
            let t = median(runs);
            let decoded = if separation >= 0.0 { t > midpoint } else { t < midpoint };
            correct += usize::from(decoded == bit);
        }
    }
    let total = params.bits * params.transfers;
    let accuracy = correct as f64 / total as f64;
    let seconds = cycles.max(1) as f64 / params.clock_hz;
    Ok(CovertResult {
        bits_sent: params.bits,
        repetitions: params.transfers,
        accuracy,
        bitrate_estimate: total as f64 / seconds,
        usable: accuracy >= USABLE_ACCURACY && separation.abs() >= 1.0,
        separation,
        midpoint,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransientResult {
    pub exploitable: bool,
    pub transient_diff: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TransientOutcome {
    Checked(TransientResult),
    Skipped { reason: String },
}

/// Re-executes the pair with the trigger under speculation.
pub fn verify_transient(
    f: &ConfirmedFinding,
    backend: &dyn ExecutionBackend,
    cfg: &CampaignConfig,
    rng: &mut Rng,
) -> Result<TransientOutcome> {
    if !backend.capabilities().transient {
        return Ok(TransientOutcome::Skipped {
            reason: "backend has no transient execution".into(),
        });
    }
    let m = backend.execute(&f.candidate.pair, cfg.repetitions, ExecMode::Transient, rng)?;
    let threshold = cfg.confirm_threshold(f.candidate.tuple.len());
    Ok(TransientOutcome::Checked(TransientResult {
        exploitable: m.diff.abs() >= threshold,
        transient_diff: m.diff,
        threshold,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub cluster: Cluster,
    pub covert: CovertResult,
    pub transient: TransientOutcome,
}

/// Clusters the findings and verifies each representative.
pub fn verify_all(
    findings: &[ConfirmedFinding],
    cat: &Catalog,
    backend: &dyn ExecutionBackend,
    cfg: &CampaignConfig,
    params: &CovertParams,
    rng: &mut Rng,
) -> Result<Vec<Verification>> {
    cluster(findings, cat)
        .into_iter()
        .map(|c| {
            let rep = &findings[c.representative];
            let covert = verify_covert(rep, backend, params, rng)?;
            let transient = verify_transient(rep, backend, cfg, rng)?;
            Ok(Verification {
                cluster: c,
                covert,
                transient,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbSeed {
    pub seed: u64,
    pub guided: u64,
    pub unguided: u64,
    /// The arm hit its invocation cap before finding every target; its count
    /// is a lower bound.
    pub guided_capped: bool,
    pub unguided_capped: bool,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbResult {
    pub targets: Vec<Vec<String>>,
    pub seeds: Vec<AbSeed>,
    pub median_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbParams {
    pub a_mode: CampaignMode,
    pub b_mode: CampaignMode,
    pub a_max_invocations: Option<u64>,
    pub b_max_invocations: Option<u64>,
}

impl Default for AbParams {
    fn default() -> Self {
        AbParams {
            a_mode: CampaignMode::Guided,
            b_mode: CampaignMode::UnguidedBaseline,
            a_max_invocations: Some(10_000_000),
            b_max_invocations: Some(1_000_000_000),
        }
    }
}

/// Runs both arms once per seed and compares the invocations each needed to
/// confirm every target. Targets are `cfg.stop_after`, or whatever the first
/// arm confirms under the first seed when that is empty.
pub fn run_ab(
    cat: &Catalog,
    backend: &dyn ExecutionBackend,
    cfg: &CampaignConfig,
    seeds: &[u64],
    params: &AbParams,
) -> Result<AbResult> {
    if seeds.len() < 2 {
        return Err(Error::Argument("an A/B run needs at least two seeds".into()));
    }
    if params.a_mode == params.b_mode {
        log::warn!("both A/B arms use {:?}; expect a ratio near 1", params.a_mode);
    }
    let mut targets = cfg.stop_after.clone();
    if targets.is_empty() {
        let mut probe = cfg.clone();
        probe.mode = params.a_mode;
        probe.rng_seed = seeds[0];
        probe.max_invocations = params.a_max_invocations.or(cfg.max_invocations);
        let r = run_campaign(cat, backend, &probe)?;
        targets = r.findings.iter().map(|f| f.candidate.classes.clone()).collect();
        if targets.is_empty() {
            return Err(Error::Config("the first arm confirmed nothing to compare".into()));
        }
    }
    let arm = |mode, cap: Option<u64>, seed| -> Result<(u64, bool)> {
        let mut c = cfg.clone();
        c.mode = mode;
        c.rng_seed = seed;
        c.stop_after = targets.clone();
        c.max_invocations = cap.or(cfg.max_invocations);
        c.audit = false;
        let r = run_campaign(cat, backend, &c)?;
        let found: BTreeSet<&Vec<String>> = r.findings.iter().map(|f| &f.candidate.classes).collect();
        let complete = targets.iter().all(|t| found.contains(t));
        if complete {
            Ok((r.invocations_at_last_finding, false))
        } else {
            Ok((r.backend_invocations, true))
        }
    };
    let mut rows = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let (guided, guided_capped) = arm(params.a_mode, params.a_max_invocations, seed)?;
        let (unguided, unguided_capped) = arm(params.b_mode, params.b_max_invocations, seed)?;
        let ratio = unguided as f64 / guided.max(1) as f64;
        log::info!("seed {seed}: a {guided} b {unguided} ratio {ratio:.2}");
        rows.push(AbSeed {
            seed,
            guided,
            unguided,
            guided_capped,
            unguided_capped,
            ratio,
        });
    }
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    Ok(AbResult {
        targets,
        median_ratio: median_f64(&ratios),
        seeds: rows,
    })
}

#[derive(Debug, Serialize)]
struct ChannelRow {
    name: String,
    measurement: String,
    reset_or_original: String,
    trigger_or_mutation: String,
    diff_cycles: f64,
    covert_accuracy: String,
    transient_ok: String,
}

fn tags(b: &Binding) -> String {
    let t: Vec<String> = b
        .values
        .iter()
        .flatten()
        .map(|v| {
            serde_json::to_value(v.tag)
                .ok()
                .and_then(|j| j.as_str().map(String::from))
                .unwrap_or_default()
        })
        .collect();
    t.join("|")
}

fn addr(b: &Binding) -> String {
    b.address.map_or_else(String::new, |a| format!("{a:#x}"))
}

fn channel_row(f: &ConfirmedFinding, v: Option<&Verification>) -> ChannelRow {
    let c = &f.candidate;
    let name = c.classes.join("-");
    let get = |i: usize| c.concrete.get(i).cloned().unwrap_or_default();
    let (measurement, reset_or_original, trigger_or_mutation) = match f.category {
        ChannelCategory::DataChannel => {
            let with = c.pair.with_trigger.sequences.measure.first();
            let without = c.pair.without_trigger.sequences.measure.first();
            let show = |b: Option<&Binding>| match (c.dim, b) {
                (Dim::Addr, Some(b)) => addr(b),
                (_, Some(b)) => tags(b),
                (_, None) => String::new(),
            };
            (get(0), show(with), show(without))
        }
        ChannelCategory::VolatileChannel => (get(0), format!("{:?}", c.level).to_lowercase(), get(1)),
        ChannelCategory::PersistentChannel => {
            let n = c.concrete.len();
            (get(n - 1), c.concrete[..n - 2].join(" "), get(n - 2))
        }
    };
    let (covert_accuracy, transient_ok) = match v {
        None => (String::new(), String::new()),
        Some(v) => (
            format!("{:.4}", v.covert.accuracy),
            match &v.transient {
                TransientOutcome::Checked(t) => t.exploitable.to_string(),
                TransientOutcome::Skipped { .. } => "skipped".into(),
            },
        ),
    };
    ChannelRow {
        name,
        measurement,
        reset_or_original,
        trigger_or_mutation,
        diff_cycles: f.confirm_diff,
        covert_accuracy,
        transient_ok,
    }
}

pub fn channels_csv(findings: &[ConfirmedFinding], verifications: &[Verification]) -> String {
    let by_member: BTreeMap<usize, &Verification> = verifications
        .iter()
        .flat_map(|v| v.cluster.members.iter().map(move |&i| (i, v)))
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    if findings.is_empty() {
        w.write_record([
            "name",
            "measurement",
            "reset_or_original",
            "trigger_or_mutation",
            "diff_cycles",
            "covert_accuracy",
            "transient_ok",
        ])
        .expect("in-memory write");
    }
    for (i, f) in findings.iter().enumerate() {
        w.serialize(channel_row(f, by_member.get(&i).copied()))
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

pub fn summary_text(report: &CampaignReport, verifications: &[Verification], ab: Option<&AbResult>) -> String {
    let mut s = String::new();
    let mut by_cat: BTreeMap<ChannelCategory, usize> = BTreeMap::new();
    for f in &report.findings {
        *by_cat.entry(f.category).or_default() += 1;
    }
    let _ = writeln!(s, "findings: {}", report.findings.len());
    for (c, n) in &by_cat {
        let _ = writeln!(s, "  {}: {n}", serde_json::to_value(c).unwrap().as_str().unwrap());
    }
    let _ = writeln!(s, "stop reason: {:?}", report.stop_reason);
    let _ = writeln!(s, "backend invocations: {}", report.backend_invocations);
    let _ = writeln!(s, "invocations at last finding: {}", report.invocations_at_last_finding);
    let _ = writeln!(s, "tuples tested: {}", report.tuples_tested);
    let _ = writeln!(s, "candidates: {} rejected: {}", report.candidates, report.rejected);
    for (l, c) in &report.coverage_by_length {
        let _ = writeln!(s, "coverage L={l}: {c:.6}");
    }
    if !verifications.is_empty() {
        let usable = verifications.iter().filter(|v| v.covert.usable).count();
        let exploitable = verifications
            .iter()
            .filter(|v| matches!(&v.transient, TransientOutcome::Checked(t) if t.exploitable))
            .count();
        let _ = writeln!(s, "clusters: {}", verifications.len());
        let _ = writeln!(s, "usable covert channels: {usable}");
        let _ = writeln!(s, "transient exploitable: {exploitable}");
    }
    if let Some(ab) = ab {
        for r in &ab.seeds {
            let _ = writeln!(
                s,
                "ab seed {}: guided {}{} unguided {}{} ratio {:.3}",
                r.seed,
                r.guided,
                if r.guided_capped { "+" } else { "" },
                r.unguided,
                if r.unguided_capped { "+" } else { "" },
                r.ratio
            );
        }
        let _ = writeln!(s, "unguided/guided median ratio: {:.3}", ab.median_ratio);
    }
    s
}

fn write(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    Ok(p)
}

/// Writes `findings.json`, `report.json`, `channels.csv`, `summary.txt` and,
/// when given, `verification.json` and `ab.json`.
pub fn render_report(
    report: &CampaignReport,
    verifications: &[Verification],
    ab: Option<&AbResult>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut out = vec![
        write(out_dir, "findings.json", &report.findings_json())?,
        write(out_dir, "report.json", &report.to_json())?,
        write(out_dir, "channels.csv", &channels_csv(&report.findings, verifications))?,
        write(out_dir, "summary.txt", &summary_text(report, verifications, ab))?,
    ];
    if !verifications.is_empty() {
        let mut j = serde_json::to_string_pretty(verifications).expect("verifications serialize");
        j.push('\n');
        out.push(write(out_dir, "verification.json", &j)?);
    }
    if let Some(ab) = ab {
        let mut j = serde_json::to_string_pretty(ab).expect("ab serializes");
        j.push('\n');
        out.push(write(out_dir, "ab.json", &j)?);
    }
    Ok(out)
}
