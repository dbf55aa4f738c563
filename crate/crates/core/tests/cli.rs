mod common;

use std::path::Path;
use std::process::Command;

fn betaforge(args: &[&str], dir: &Path) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_betaforge"))
        .args(args)
        .current_dir(dir)
        .env("BETAFORGE_LOG", "warn")
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr),
    )
}

/// A temp dir holding the bundled fixtures plus `run.json` built from `cfg`.
fn workspace(cfg: serde_json::Value) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for f in [
        "standard_catalog.json",
        "standard_manifest.json",
        "micro.json",
        "micro_manifest.json",
    ] {
        std::fs::copy(common::fixture(f), dir.path().join(f)).unwrap();
    }
    std::fs::write(dir.path().join("run.json"), cfg.to_string()).unwrap();
    dir
}

fn standard_run() -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(common::fixture("standard_config.json")).unwrap()).unwrap()
}

#[test]
fn exit_codes() {
    let mut missing_manifest = standard_run();
    missing_manifest["manifest"] = "nope.json".into();
    let mut no_manifest = standard_run();
    no_manifest.as_object_mut().unwrap().remove("manifest");
    let mut typo = standard_run();
    typo["max_slotz"] = 3.into();
    let mut bad_value = standard_run();
    bad_value["t_fraction"] = 1.5.into();
    let mut bad_backend = standard_run();
    bad_backend["backend"] = "quantum".into();
    let mut dead_backend = standard_run();
    dead_backend["backend"] = "external:false".into();
    let mut timeout = standard_run();
    timeout["timeout_seconds"] = 0.0.into();
    timeout["max_invocations"] = serde_json::Value::Null;
    let mut unknown_class = standard_run();
    unknown_class["initial_seed"] = serde_json::json!(["NOPE"]);

    let cases: Vec<(&str, serde_json::Value, i32)> = vec![
        ("standard", standard_run(), 0),
        ("missing manifest file", missing_manifest, 2),
        ("no manifest with sim", no_manifest, 2),
        ("unknown key", typo, 2),
        ("out of range", bad_value, 2),
        ("unknown backend", bad_backend, 2),
        ("backend without handshake", dead_backend, 3),
        ("timeout", timeout, 4),
        ("unknown initial class", unknown_class, 2),
    ];
    for (name, cfg, want) in cases {
        let dir = workspace(cfg);
        let (code, out) = betaforge(&["fuzz", "--config", "run.json", "--out", "out"], dir.path());
        assert_eq!(code, want, "{name}: {out}");
    }
}

#[test]
fn unreadable_config_and_findings() {
    let dir = workspace(standard_run());
    let (code, _) = betaforge(&["fuzz", "--config", "absent.json"], dir.path());
    assert_eq!(code, 2);
    std::fs::write(dir.path().join("junk.json"), "{").unwrap();
    let (code, _) = betaforge(&["fuzz", "--config", "junk.json"], dir.path());
    assert_eq!(code, 2);
    let (code, _) = betaforge(
        &["verify", "--findings", "absent.json", "--config", "run.json"],
        dir.path(),
    );
    assert_eq!(code, 1);
    let (code, _) = betaforge(&["report", "--in", "nowhere"], dir.path());
    assert_eq!(code, 1);
}

#[test]
fn fuzz_verify_report() {
    let dir = workspace(standard_run());
    let (code, out) = betaforge(&["fuzz", "--config", "run.json", "--out", "out"], dir.path());
    assert_eq!(code, 0, "{out}");
    let out_dir = dir.path().join("out");
    let findings: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("findings.json")).unwrap()).unwrap();
    assert_eq!(findings.len(), 12);
    let csv = std::fs::read_to_string(out_dir.join("channels.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13);
    assert!(csv.starts_with(
        "name,measurement,reset_or_original,trigger_or_mutation,diff_cycles,covert_accuracy,transient_ok"
    ));

    let (code, out) = betaforge(
        &["verify", "--findings", "out/findings.json", "--config", "run.json"],
        dir.path(),
    );
    assert_eq!(code, 0, "{out}");
    let v: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("verification.json")).unwrap()).unwrap();
    assert!(!v.is_empty());
    for row in csv::Reader::from_path(out_dir.join("channels.csv")).unwrap().records() {
        let row = row.unwrap();
        let acc: f64 = row[5].parse().unwrap();
        assert!(acc >= 0.99, "{} accuracy {acc}", &row[0]);
    }
    let summary = std::fs::read_to_string(out_dir.join("summary.txt")).unwrap();
    assert!(summary.contains("findings: 12"));
    assert!(summary.contains("usable covert channels"));

    let before = std::fs::read(out_dir.join("channels.csv")).unwrap();
    let (code, out) = betaforge(&["report", "--in", "out"], dir.path());
    assert_eq!(code, 0);
    assert!(out.contains("findings: 12"));
    assert_eq!(std::fs::read(out_dir.join("channels.csv")).unwrap(), before);
}

#[test]
fn empty_findings_verify() {
    let dir = workspace(standard_run());
    std::fs::write(dir.path().join("none.json"), "[]").unwrap();
    let (code, out) = betaforge(
        &[
            "verify",
            "--findings",
            "none.json",
            "--config",
            "run.json",
            "--out",
            "v",
        ],
        dir.path(),
    );
    assert_eq!(code, 0, "{out}");
    let csv = std::fs::read_to_string(dir.path().join("v/channels.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn ab_smoke() {
    let cfg = serde_json::json!({
        "catalog": "micro.json",
        "manifest": "micro_manifest.json",
        "max_slots": 1,
        "initial_seed": ["AES"],
        "on_exceed_max": "skip",
        "stop_after": [["I286PROTECTED"]],
    });
    let dir = workspace(cfg);
    let (code, out) = betaforge(
        &["ab", "--config", "run.json", "--seeds", "1,2", "--out", "ab"],
        dir.path(),
    );
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("median ratio"), "{out}");
    let ab: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ab/ab.json")).unwrap()).unwrap();
    assert_eq!(ab["seeds"].as_array().unwrap().len(), 2);

    let (code, _) = betaforge(&["ab", "--config", "run.json", "--seeds", "1"], dir.path());
    assert_eq!(code, 2);
}

#[test]
fn fixtures_command_matches_shipped_files() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = betaforge(&["fixtures", "--out", "f"], dir.path());
    assert_eq!(code, 0);
    for e in std::fs::read_dir(dir.path().join("f")).unwrap() {
        let p = e.unwrap().path();
        let name = p.file_name().unwrap();
        assert_eq!(
            std::fs::read(&p).unwrap(),
            std::fs::read(common::fixture(name.to_str().unwrap())).unwrap(),
            "{name:?} differs from the shipped fixture"
        );
    }
}
