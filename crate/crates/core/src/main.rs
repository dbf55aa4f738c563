use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde_json::{Map, Value};

use betaforge_core::analysis::{self, AbParams, AbResult, CovertParams, Verification};
use betaforge_core::backend::{ChannelManifest, ExecutionBackend, ExternalBackend, SimBackend};
use betaforge_core::catalog::{classify, clean_pass, load_catalog, sanitize, Catalog, InitPolicy};
use betaforge_core::pipeline::{run_campaign, CampaignConfig, CampaignReport, ConfirmedFinding, StopReason};
use betaforge_core::rng::{self, Stream};
use betaforge_core::{fixtures, Error};

const LOG_ENV: &str = "BETAFORGE_LOG";

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_BACKEND: u8 = 3;
const EXIT_TIMEOUT: u8 = 4;

#[derive(Parser)]
#[command(
    name = "betaforge",
    version,
    about = "Timing-channel fuzzer over instruction classes"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a campaign and write its report.
    Fuzz {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        over: Overrides,
    },
    /// Cluster findings and verify covert and transient exploitability.
    Verify {
        #[arg(long)]
        findings: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Accepted for symmetry with online verification; replay is the
        /// same either way.
        #[arg(long)]
        offline: bool,
        #[command(flatten)]
        over: Overrides,
    },
    /// Compare guided and unguided campaigns over several seeds.
    Ab {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        /// Invocation cap for the unguided arm.
        #[arg(long)]
        unguided_cap: Option<u64>,
        /// Invocation cap for the guided arm.
        #[arg(long)]
        guided_cap: Option<u64>,
        #[command(flatten)]
        over: Overrides,
    },
    /// Re-render report files from a previous run directory.
    Report {
        #[arg(long = "in")]
        dir: PathBuf,
    },
    /// Write the bundled fixtures as JSON.
    Fixtures {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args, Default)]
struct Overrides {
    #[arg(long)]
    out: Option<PathBuf>,
    /// `sim` or `external:<command line>`.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    rng_seed: Option<u64>,
    #[arg(long)]
    max_invocations: Option<u64>,
    #[arg(long)]
    timeout: Option<f64>,
}

struct CliConfig {
    campaign: CampaignConfig,
    catalog: PathBuf,
    manifest: Option<PathBuf>,
    backend: String,
    out_dir: PathBuf,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Schema { .. } | Error::Json { .. } | Error::Config(_) | Error::Argument(_) | Error::SlotRange(_) => {
                EXIT_CONFIG
            }
            Error::Backend(_) | Error::Capability(_) => EXIT_BACKEND,
            _ => EXIT_FAILURE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: message.into(),
    }
}

fn take_str(obj: &mut Map<String, Value>, key: &str) -> Result<Option<String>, Failure> {
    match obj.remove(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(v) => Err(config_error(format!("`{key}` must be a string, got {v}"))),
    }
}

fn load_config(path: &Path, over: &Overrides) -> Result<CliConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    let mut v: Value =
        serde_json::from_str(&text).map_err(|e| config_error(format!("{}: invalid JSON: {e}", path.display())))?;
    let obj = v
        .as_object_mut()
        .ok_or_else(|| config_error(format!("{}: expected a JSON object", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let rel = |p: String| base.join(p);
    let catalog = take_str(obj, "catalog")?
        .map(rel)
        .ok_or_else(|| config_error("`catalog` is required"))?;
    let manifest = take_str(obj, "manifest")?.map(rel);
    let backend = over
        .backend
        .clone()
        .or(take_str(obj, "backend")?)
        .unwrap_or_else(|| "sim".into());
    let out_dir = match &over.out {
        Some(p) => p.clone(),
        None => take_str(obj, "out_dir")?
            .map(rel)
            .unwrap_or_else(|| PathBuf::from("out")),
    };
    obj.remove("out_dir");
    if let Some(level) = take_str(obj, "log")? {
        let level = level
            .parse()
            .map_err(|_| config_error(format!("unknown log level {level:?}")))?;
        // the environment variable wins
        if std::env::var_os(LOG_ENV).is_none() {
            log::set_max_level(level);
        }
    }
    let mut campaign: CampaignConfig =
        serde_json::from_value(v).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    if let Some(s) = over.rng_seed {
        campaign.rng_seed = s;
    }
    if let Some(m) = over.max_invocations {
        campaign.max_invocations = Some(m);
    }
    if let Some(t) = over.timeout {
        campaign.timeout_seconds = Some(t);
    }
    campaign.validate()?;
    if !catalog.is_file() {
        return Err(config_error(format!("catalog {} does not exist", catalog.display())));
    }
    if backend == "sim" {
        match &manifest {
            None => return Err(config_error("the sim backend needs a `manifest`")),
            Some(m) if !m.is_file() => return Err(config_error(format!("manifest {} does not exist", m.display()))),
            _ => {}
        }
    } else if !backend.starts_with("external:") {
        return Err(config_error(format!("unknown backend {backend:?}")));
    }
    Ok(CliConfig {
        campaign,
        catalog,
        manifest,
        backend,
        out_dir,
    })
}

/// The sanitized catalog and a backend that knows every spec in it.
fn open_backend(cfg: &CliConfig) -> Result<(Catalog, Box<dyn ExecutionBackend>), Failure> {
    let cat = sanitize(&load_catalog(&cfg.catalog)?);
    let backend: Box<dyn ExecutionBackend> = match cfg.backend.strip_prefix("external:") {
        Some(cmd) => {
            let mut words = cmd.split_whitespace().map(String::from);
            let program = words
                .next()
                .ok_or_else(|| config_error("external backend command is empty"))?;
            let args: Vec<String> = words.collect();
            Box::new(ExternalBackend::spawn(program, &args).map_err(|e| Failure {
                code: EXIT_BACKEND,
                message: e.to_string(),
            })?)
        }
        None => {
            let m = ChannelManifest::load(cfg.manifest.as_ref().expect("checked by load_config"))?;
            Box::new(SimBackend::new(Arc::new(cat.clone()), m)?)
        }
    };
    Ok((cat, backend))
}

/// Clean pass when the backend can probe, then classification.
fn prepare(cat: &Catalog, backend: &dyn ExecutionBackend, cfg: &CampaignConfig) -> Result<Catalog, Failure> {
    let cat = if backend.capabilities().fault_probe {
        let policy = cfg.init.clone().unwrap_or_else(|| InitPolicy::uniform(cat, 1, 1));
        let report = clean_pass(cat, backend, &policy)?;
        for r in &report.removed {
            log::debug!("removed {} ({:?})", r.id, r.signal);
        }
        report.catalog
    } else {
        log::warn!("backend cannot probe faults; skipping the clean pass");
        cat.clone()
    };
    Ok(classify(&cat))
}

fn cmd_fuzz(config: &Path, over: &Overrides) -> Result<u8, Failure> {
    let cfg = load_config(config, over)?;
    let (cat, backend) = open_backend(&cfg)?;
    let cat = prepare(&cat, backend.as_ref(), &cfg.campaign)?;
    log::info!("{} specs in {} classes", cat.len(), cat.class_count());
    let report = run_campaign(&cat, backend.as_ref(), &cfg.campaign)?;
    analysis::render_report(&report, &[], None, &cfg.out_dir)?;
    log::info!(
        "{} findings, stop {:?}, {} invocations",
        report.findings.len(),
        report.stop_reason,
        report.backend_invocations
    );
    Ok(if report.stop_reason == StopReason::Timeout {
        EXIT_TIMEOUT
    } else {
        0
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure {
        code: EXIT_FAILURE,
        message: format!("{}: {e}", path.display()),
    })?;
    serde_json::from_str(&text).map_err(|e| Failure {
        code: EXIT_FAILURE,
        message: format!("{}: {e}", path.display()),
    })
}

fn cmd_verify(findings: &Path, config: &Path, over: &Overrides) -> Result<u8, Failure> {
    let cfg = load_config(config, over)?;
    let list: Vec<ConfirmedFinding> = read_json(findings)?;
    let (cat, backend) = open_backend(&cfg)?;
    let mut rng = rng::stream(cfg.campaign.rng_seed, Stream::Covert);
    let verifications = analysis::verify_all(
        &list,
        &cat,
        backend.as_ref(),
        &cfg.campaign,
        &CovertParams::default(),
        &mut rng,
    )?;
    for v in &verifications {
        let rep = &list[v.cluster.representative];
        log::info!(
            "{}: accuracy {:.4} usable {} transient {:?}",
            rep.candidate.classes.join("-"),
            v.covert.accuracy,
            v.covert.usable,
            v.transient
        );
    }
    let dir = over
        .out
        .clone()
        .unwrap_or_else(|| findings.parent().unwrap_or(Path::new(".")).to_path_buf());
    let report_path = dir.join("report.json");
    if report_path.is_file() {
        let report: CampaignReport = read_json(&report_path)?;
        let ab: Option<AbResult> = read_optional(&dir.join("ab.json"))?;
        analysis::render_report(&report, &verifications, ab.as_ref(), &dir)?;
    } else {
        std::fs::create_dir_all(&dir).map_err(|e| Failure::from(io_error(&dir, e)))?;
        let csv = analysis::channels_csv(&list, &verifications);
        write_file(&dir.join("channels.csv"), &csv)?;
        let mut j = serde_json::to_string_pretty(&verifications).expect("serializes");
        j.push('\n');
        write_file(&dir.join("verification.json"), &j)?;
    }
    Ok(0)
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_file(path: &Path, body: &str) -> Result<(), Failure> {
    std::fs::write(path, body).map_err(|e| Failure::from(io_error(path, e)))
}

fn read_optional<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>, Failure> {
    if path.is_file() {
        read_json(path).map(Some)
    } else {
        Ok(None)
    }
}

fn cmd_ab(
    config: &Path,
    seeds: &[u64],
    guided_cap: Option<u64>,
    unguided_cap: Option<u64>,
    over: &Overrides,
) -> Result<u8, Failure> {
    let cfg = load_config(config, over)?;
    let (cat, backend) = open_backend(&cfg)?;
    let cat = prepare(&cat, backend.as_ref(), &cfg.campaign)?;
    let mut params = AbParams::default();
    if guided_cap.is_some() {
        params.a_max_invocations = guided_cap;
    }
    if unguided_cap.is_some() {
        params.b_max_invocations = unguided_cap;
    }
    let ab = analysis::run_ab(&cat, backend.as_ref(), &cfg.campaign, seeds, &params)?;
    for r in &ab.seeds {
        println!(
            "seed {} guided {} unguided {} ratio {:.3}",
            r.seed, r.guided, r.unguided, r.ratio
        );
    }
    println!("median ratio {:.3}", ab.median_ratio);
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Failure::from(io_error(&cfg.out_dir, e)))?;
    let mut j = serde_json::to_string_pretty(&ab).expect("serializes");
    j.push('\n');
    write_file(&cfg.out_dir.join("ab.json"), &j)?;
    if let Some(report) = read_optional::<CampaignReport>(&cfg.out_dir.join("report.json"))? {
        let v: Vec<Verification> = read_optional(&cfg.out_dir.join("verification.json"))?.unwrap_or_default();
        analysis::render_report(&report, &v, Some(&ab), &cfg.out_dir)?;
    }
    Ok(0)
}

fn cmd_report(dir: &Path) -> Result<u8, Failure> {
    let report: CampaignReport = read_json(&dir.join("report.json"))?;
    let v: Vec<Verification> = read_optional(&dir.join("verification.json"))?.unwrap_or_default();
    let ab: Option<AbResult> = read_optional(&dir.join("ab.json"))?;
    analysis::render_report(&report, &v, ab.as_ref(), dir)?;
    print!("{}", analysis::summary_text(&report, &v, ab.as_ref()));
    Ok(0)
}

fn main() -> ExitCode {
    if std::env::var_os(LOG_ENV).is_some() {
        env_logger::Builder::from_env(env_logger::Env::new().filter(LOG_ENV)).init();
    } else {
        env_logger::Builder::new().filter_level(log::LevelFilter::Trace).init();
        log::set_max_level(log::LevelFilter::Info);
    }
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Fuzz { config, over } => cmd_fuzz(config, over),
        Cmd::Verify {
            findings,
            config,
            offline: _,
            over,
        } => cmd_verify(findings, config, over),
        Cmd::Ab {
            config,
            seeds,
            unguided_cap,
            guided_cap,
            over,
        } => cmd_ab(config, seeds, *guided_cap, *unguided_cap, over),
        Cmd::Report { dir } => cmd_report(dir),
        Cmd::Fixtures { out } => fixtures::write_all(out).map(|_| 0).map_err(Failure::from),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            log::error!("{}", f.message);
            ExitCode::from(f.code)
        }
    }
}
