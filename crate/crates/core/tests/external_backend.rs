mod common;

use std::path::PathBuf;
use std::process::Command;

use betaforge_core::backend::{ExecutionBackend, ExternalBackend};
use betaforge_core::catalog::{classify, clean_pass, sanitize, InitPolicy};
use betaforge_core::fixtures;
use betaforge_core::pipeline::{run_campaign, CampaignConfig, ExceedPolicy, StopReason};
use betaforge_core::Error;

fn stub() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/stub_backend.py")
}

fn spawn(extra: &[&str]) -> ExternalBackend {
    let mut args = vec![stub().display().to_string()];
    args.extend(extra.iter().map(|s| s.to_string()));
    ExternalBackend::spawn("python3", &args).unwrap()
}

fn micro_config() -> CampaignConfig {
    CampaignConfig {
        max_slots: 1,
        initial_seed: vec!["AES".into()],
        on_exceed_max: ExceedPolicy::Skip,
        stop_after: vec![vec!["I286PROTECTED".into()]],
        rng_seed: 9,
        ..CampaignConfig::default()
    }
}

#[test]
fn handshake_and_campaign() {
    let be = spawn(&[]);
    let caps = be.capabilities();
    assert!(caps.fault_probe && !caps.transient);
    let cat = classify(&sanitize(&fixtures::micro()));
    let r = run_campaign(&cat, &be, &micro_config()).unwrap();
    assert_eq!(r.stop_reason, StopReason::TargetsFound);
    let found: Vec<_> = r.findings.iter().map(|f| f.candidate.classes.clone()).collect();
    assert_eq!(found, vec![vec!["I286PROTECTED".to_string()]]);
    assert_eq!(r.findings[0].confirm_diff, 40.0);
}

#[test]
fn probe_removes_faulting_specs() {
    let be = spawn(&["--fault", "FMUL_M32"]);
    let cat = sanitize(&fixtures::micro());
    let rep = clean_pass(&cat, &be, &InitPolicy::uniform(&cat, 1, 1)).unwrap();
    let removed: Vec<_> = rep.removed.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(removed, ["FMUL_M32"]);
    assert_eq!(rep.catalog.len(), cat.len() - 1);
}

#[test]
fn backend_errors_surface() {
    let cat = classify(&sanitize(&fixtures::micro()));
    for flag in ["--fail-execute", "--short"] {
        let be = spawn(&[flag]);
        match run_campaign(&cat, &be, &micro_config()) {
            Err(Error::Backend(_)) => {}
            other => panic!("{flag}: expected a backend error, got {other:?}"),
        }
    }
    assert!(ExternalBackend::spawn("false", &[]).is_err());
}

#[test]
fn cli_with_external_backend() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(common::fixture("micro.json"), dir.path().join("micro.json")).unwrap();
    let cfg = serde_json::json!({
        "catalog": "micro.json",
        "backend": format!("external:python3 {}", stub().display()),
        "max_slots": 1,
        "initial_seed": ["AES"],
        "on_exceed_max": "skip",
        "stop_after": [["I286PROTECTED"]],
    });
    std::fs::write(dir.path().join("run.json"), cfg.to_string()).unwrap();
    let run = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_betaforge"))
            .args(args)
            .current_dir(dir.path())
            .env("BETAFORGE_LOG", "warn")
            .output()
            .unwrap()
    };
    let out = run(&["fuzz", "--config", "run.json", "--out", "out"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&["verify", "--findings", "out/findings.json", "--config", "run.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/channels.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().ends_with(",skipped"), "{csv}");

    let mut failing = cfg.clone();
    failing["backend"] = format!("external:python3 {} --fail-execute", stub().display()).into();
    std::fs::write(dir.path().join("fail.json"), failing.to_string()).unwrap();
    let out = run(&["fuzz", "--config", "fail.json", "--out", "out2"]);
    assert_eq!(out.status.code(), Some(3));
}
