#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use betaforge_core::backend::{ChannelManifest, ExecMode, Noise, SimBackend};
use betaforge_core::catalog::{classify, clean_pass, load_catalog, sanitize, Catalog, InitPolicy};
use betaforge_core::fixtures;
use betaforge_core::mutation::{derive_space, DataRegion, Dim, ExecLevel};
use betaforge_core::pipeline::{CampaignConfig, ConfirmedFinding};
use betaforge_core::testcase::{build_pair, BuildContext, TestCasePair, DEFAULT_SLEEP_CYCLES};
use rand::SeedableRng;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// Campaign settings from a run file, without its path keys.
pub fn load_run_config(path: &Path) -> CampaignConfig {
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let obj = v.as_object_mut().unwrap();
    for k in ["catalog", "manifest", "backend", "out_dir", "log"] {
        obj.remove(k);
    }
    serde_json::from_value(v).unwrap()
}

pub struct Standard {
    pub catalog: Catalog,
    pub backend: SimBackend,
    pub manifest: ChannelManifest,
    pub config: CampaignConfig,
}

/// The shipped standard fixture, cleaned and classified the way the CLI does.
pub fn standard_with(edit: impl FnOnce(&mut ChannelManifest)) -> Standard {
    let raw = sanitize(&load_catalog(fixture("standard_catalog.json")).unwrap());
    let mut manifest = ChannelManifest::load(fixture("standard_manifest.json")).unwrap();
    edit(&mut manifest);
    let backend = SimBackend::new(Arc::new(raw.clone()), manifest.clone()).unwrap();
    let cleaned = clean_pass(&raw, &backend, &InitPolicy::uniform(&raw, 1, 1)).unwrap();
    Standard {
        catalog: classify(&cleaned.catalog),
        backend,
        manifest,
        config: load_run_config(&fixture("standard_config.json")),
    }
}

pub fn standard() -> Standard {
    standard_with(|_| {})
}

/// Planted tuples by ISA-set name: data, volatile, persistent.
pub fn planted(m: &ChannelManifest) -> Vec<Vec<String>> {
    use betaforge_core::backend::RuleTarget;
    let mut out = Vec::new();
    for r in &m.data_rules {
        if let RuleTarget::Class(c) = &r.target {
            out.push(vec![c.clone()]);
        }
    }
    for r in &m.volatile_rules {
        out.push(vec![r.measured_class.clone(), r.contender_class.clone()]);
    }
    for r in &m.persistent_rules {
        out.push(vec![
            r.reset_class.clone(),
            r.trigger_class.clone(),
            r.measure_class.clone(),
        ]);
    }
    out
}

pub fn micro_backend(edit: impl FnOnce(&mut ChannelManifest)) -> (Catalog, SimBackend) {
    let cat = classify(&sanitize(&fixtures::micro()));
    let mut m = ChannelManifest {
        base_latency: [("AES", 40), ("I286PROTECTED", 120), ("MMX", 20), ("X87", 80)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        noise: Noise::silent(),
        ..ChannelManifest::default()
    };
    edit(&mut m);
    let be = SimBackend::new(Arc::new(cat.clone()), m).unwrap();
    (cat, be)
}

pub fn ctx(cat: &Catalog) -> BuildContext {
    BuildContext {
        region: DataRegion::default(),
        sleep_cycles: DEFAULT_SLEEP_CYCLES,
        init: Arc::new(InitPolicy::uniform(cat, 1, 1)),
        levels: ExecLevel::ALL.to_vec(),
    }
}

/// A pair on `classes` whose mutated dimension is `dim`, drawn until the
/// planted rule shows up in the noise-free timing.
pub fn planted_pair(
    cat: &Catalog,
    be: &SimBackend,
    classes: &[&str],
    dim: Dim,
    level: ExecLevel,
    seed: u64,
) -> TestCasePair {
    let tuple =
        betaforge_core::seed::ClassTuple(classes.iter().map(|c| cat.class_by_isa_set(c).unwrap().index).collect());
    let space = derive_space(tuple.len()).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..10_000 {
        let concrete: Vec<_> = classes
            .iter()
            .map(|c| {
                let k = cat.class_by_isa_set(c).unwrap();
                cat.spec(&k.members[rand::Rng::gen_range(&mut rng, 0..k.members.len())])
                    .unwrap()
            })
            .collect();
        let p = build_pair(&tuple, &concrete, &space, dim, level, &ctx(cat), &mut rng).unwrap();
        let w = be.timed_cycles(&p.with_trigger, ExecMode::Normal).unwrap();
        let wo = be.timed_cycles(&p.without_trigger, ExecMode::Normal).unwrap();
        if w != wo {
            return p;
        }
    }
    panic!("rule on {classes:?} never fired");
}

pub fn finding_for(p: TestCasePair, cat: &Catalog) -> ConfirmedFinding {
    let classes = p
        .tuple
        .indices()
        .iter()
        .map(|&i| cat.classes()[i].isa_set.clone())
        .collect();
    ConfirmedFinding {
        category: p.with_trigger.layout,
        confirm_diff: 100.0,
        confirm_diffs: vec![100.0],
        confirmations: 1,
        invocations: 0,
        candidate: betaforge_core::pipeline::Candidate {
            tuple: p.tuple.clone(),
            classes,
            concrete: Vec::new(),
            dim: p.mutated_dim,
            level: p.with_trigger.level,
            diff: 100.0,
            pair: p,
        },
    }
}
