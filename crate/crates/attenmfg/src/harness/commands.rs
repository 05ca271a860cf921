//! One function per CLI subcommand. Each takes plain configuration values,
//! writes its artifacts plus a `manifest.json` into an output directory, and
//! returns the manifest. Errors carry the process exit code the binary
//! should report.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::manifest::{normalize_csv_columns, sha256_hex, RunManifest};
use crate::eval::{gap, EvalError, GapReport};
use crate::features::assemble_features;
use crate::model::{
    generate_instance, load_instance, save_instance, GeneratorConfig, Instance, ModelError,
    SiteFamily,
};
use crate::oracle::{solve_bnb, OracleConfig, OracleError, OracleResultJson};
use crate::policy::ckpt::PolicyError;
use crate::policy::{
    load_checkpoint, rollout, save_checkpoint, DecodeMode, PolicyParams,
};
use crate::train::{self, TrainConfig, TrainError};
use crate::verify::{self, CheckOutcome};

/// Seed stream for generated instance files. Training reserves `u64::MAX`
/// and `u64::MAX - 1` for its own streams; this stays clear of both.
const STREAM_GENERATE: u64 = u64::MAX - 2;

/// A failed command, tagged by how the process should exit: 1 usage,
/// 2 validation, 3 infeasible, 4 budget exhausted.
#[derive(Debug, Error)]
pub enum HarnessError {
    /// The invocation itself is wrong: unreadable paths, unknown names,
    /// malformed flags.
    #[error("{0}")]
    Usage(String),
    /// Inputs were read but failed validation.
    #[error("{0}")]
    Validation(String),
    /// The requested problem admits no feasible schedule.
    #[error("{0}")]
    Infeasible(String),
    /// A node or time budget ran out before the work finished.
    #[error("{0}")]
    Timeout(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 1,
            HarnessError::Validation(_) => 2,
            HarnessError::Infeasible(_) => 3,
            HarnessError::Timeout(_) => 4,
        }
    }
}

impl From<ModelError> for HarnessError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InfeasibleConfig { .. } => HarnessError::Infeasible(e.to_string()),
            ModelError::Io(_) => HarnessError::Usage(e.to_string()),
            _ => HarnessError::Validation(e.to_string()),
        }
    }
}

impl From<EvalError> for HarnessError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Infeasible(_) => HarnessError::Infeasible(e.to_string()),
            EvalError::NonPositiveOracleCost(_) => HarnessError::Validation(e.to_string()),
        }
    }
}

impl From<TrainError> for HarnessError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::Eval(v) => v.into(),
            _ => HarnessError::Validation(e.to_string()),
        }
    }
}

impl From<OracleError> for HarnessError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::BudgetExceeded { .. } => HarnessError::Timeout(e.to_string()),
            OracleError::NoFeasibleSchedule { .. } => HarnessError::Infeasible(e.to_string()),
        }
    }
}

impl From<PolicyError> for HarnessError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::Io(_) => HarnessError::Usage(e.to_string()),
            _ => HarnessError::Validation(e.to_string()),
        }
    }
}

// ---------------------------------------------------------------------------
// Filesystem helpers

fn read_bytes(path: &Path) -> Result<Vec<u8>, HarnessError> {
    fs::read(path).map_err(|e| HarnessError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| {
                HarnessError::Usage(format!("cannot create {}: {e}", parent.display()))
            })?;
        }
    }
    fs::write(path, bytes)
        .map_err(|e| HarnessError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

/// The instance files under `input` (or just `input` itself if it is a
/// file), in name order so every run visits them identically. Manifests and
/// oracle certificates sharing the directory are skipped.
fn instance_files(input: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let entries = fs::read_dir(input)
        .map_err(|e| HarnessError::Usage(format!("cannot read {}: {e}", input.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry =
            entry.map_err(|e| HarnessError::Usage(format!("cannot read {}: {e}", input.display())))?;
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().into_owned();
        if path.is_file()
            && name.ends_with(".json")
            && !name.ends_with(".oracle.json")
            && name != "manifest.json"
            && name != "summary.json"
        {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn oracle_json_bytes(json: &OracleResultJson) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(json).expect("oracle result serializes");
    bytes.push(b'\n');
    bytes
}

fn oracle_config_json(config: &OracleConfig) -> serde_json::Value {
    serde_json::json!({
        "node_budget": config.node_budget,
        "time_budget_s": config.time_budget.as_secs_f64(),
    })
}

fn finish_manifest(
    out: &Path,
    mut manifest: RunManifest,
    started: Instant,
) -> Result<RunManifest, HarnessError> {
    manifest.finalize(started.elapsed().as_secs_f64() * 1e3);
    write_bytes(&out.join("manifest.json"), &manifest.to_json())?;
    Ok(manifest)
}

/// Instance-file prefix in the preset naming style: `L<sites>P<periods>M<machines>`.
fn config_label(gen: &GeneratorConfig) -> String {
    let sites = match gen.family {
        SiteFamily::Fixed(l) => l.to_string(),
        SiteFamily::Random => "R".to_string(),
    };
    format!("L{sites}P{}M{}", gen.horizon, gen.n_machines)
}

// ---------------------------------------------------------------------------
// generate

/// Draws `n` instances from per-instance seeds derived off `seed` and writes
/// each as `<label>_<seed>.json`. With `n = 0` only the manifest is written.
pub fn cmd_generate(
    gen: &GeneratorConfig,
    n: usize,
    seed: u64,
    threads: usize,
    out: &Path,
) -> Result<RunManifest, HarnessError> {
    let started = Instant::now();
    let config = serde_json::json!({
        "gen": serde_json::to_value(gen).expect("config serializes"),
        "n": n,
    });
    let mut manifest = RunManifest::new("generate", config, seed, threads);
    let label = config_label(gen);
    for i in 0..n {
        let inst_seed = train::derive_seed(seed, STREAM_GENERATE, i as u64);
        let instance = generate_instance(&gen.with_seed(inst_seed))?;
        let bytes = save_instance(&instance);
        let name = format!("{label}_{inst_seed:016x}.json");
        write_bytes(&out.join(&name), &bytes)?;
        manifest.push_artifact(&name, &bytes);
    }
    finish_manifest(out, manifest, started)
}

// ---------------------------------------------------------------------------
// solve-oracle

/// Solves every instance under `inputs` to proven optimality, writing one
/// `<stem>.oracle.json` certificate each. All certificates (and the
/// manifest) are written even when a budget cuts some search short, but the
/// command then fails with the budget-exhausted code, because an unproven
/// incumbent is not what was asked for.
pub fn cmd_solve_oracle(
    inputs: &Path,
    config: &OracleConfig,
    seed: u64,
    threads: usize,
    out: &Path,
) -> Result<RunManifest, HarnessError> {
    let started = Instant::now();
    let files = instance_files(inputs)?;
    let manifest_config = serde_json::json!({
        "oracle": oracle_config_json(config),
        "inputs": files.iter().map(|f| file_stem(f)).collect::<Vec<_>>(),
    });
    let mut manifest = RunManifest::new("solve-oracle", manifest_config, seed, threads);
    let mut unproven = Vec::new();
    for file in &files {
        let instance = load_instance(&read_bytes(file)?)?;
        let features = assemble_features(&instance);
        let result = solve_bnb(&features, &instance.economics, config)?;
        if !result.proven {
            unproven.push(file_stem(file));
        }
        let json = result.to_json();
        let bytes = oracle_json_bytes(&json);
        let normalized = oracle_json_bytes(&OracleResultJson { ms: 0.0, ..json });
        let name = format!("{}.oracle.json", file_stem(file));
        write_bytes(&out.join(&name), &bytes)?;
        manifest.push_timed_artifact(&name, &bytes, &normalized);
    }
    let manifest = finish_manifest(out, manifest, started)?;
    if !unproven.is_empty() {
        return Err(HarnessError::Timeout(format!(
            "budget exhausted before optimality was proven on: {}",
            unproven.join(", ")
        )));
    }
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// train

/// Trains a policy (fresh, or continued from `resume_from`) and writes
/// `policy.ckpt` plus per-epoch `metrics.csv`.
///
/// Resuming accepts a checkpoint whose run matches `config` in everything
/// but `epochs`: the checkpoint's fingerprint is checked against the config
/// truncated to the checkpoint's own epoch count, then swapped for the
/// extended fingerprint. The seed-stream layout makes the continued run
/// bit-identical to one that never stopped.
pub fn cmd_train(
    config: &TrainConfig,
    gen: &GeneratorConfig,
    resume_from: Option<&Path>,
    threads: usize,
    out: &Path,
) -> Result<RunManifest, HarnessError> {
    let started = Instant::now();
    let resume_hash = match resume_from {
        Some(path) => Some(sha256_hex(&read_bytes(path)?)),
        None => None,
    };
    let manifest_config = serde_json::json!({
        "train": serde_json::to_value(config).expect("config serializes"),
        "gen": serde_json::to_value(gen).expect("config serializes"),
        "resume": resume_hash,
    });
    let mut manifest = RunManifest::new("train", manifest_config, config.seed, threads);

    let outcome = match resume_from {
        None => train::train(config, gen)?,
        Some(path) => {
            let mut ckpt = load_checkpoint(path)?;
            if let Some((state, _)) = ckpt.train.as_mut() {
                let at_ckpt = TrainConfig { epochs: state.epoch, ..*config };
                if state.config_hash == train::config_fingerprint(&at_ckpt, gen) {
                    state.config_hash = train::config_fingerprint(config, gen);
                }
            }
            train::resume(ckpt, config, gen)?
        }
    };

    let ckpt_path = out.join("policy.ckpt");
    fs::create_dir_all(out)
        .map_err(|e| HarnessError::Usage(format!("cannot create {}: {e}", out.display())))?;
    save_checkpoint(&ckpt_path, &outcome.checkpoint)?;
    manifest.push_artifact("policy.ckpt", &read_bytes(&ckpt_path)?);

    let csv = train::metrics_csv(&outcome.metrics);
    write_bytes(&out.join("metrics.csv"), csv.as_bytes())?;
    let normalized = normalize_csv_columns(&csv, &["seconds"]);
    manifest.push_timed_artifact("metrics.csv", csv.as_bytes(), normalized.as_bytes());

    finish_manifest(out, manifest, started)
}

// ---------------------------------------------------------------------------
// evaluate

/// Quartile summary of the per-instance gaps (proven instances only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

/// Aggregates written as `summary.json`; recomputable from the gap CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n_instances: usize,
    /// Instances whose oracle solve proved optimality; only these enter the
    /// gap statistics.
    pub n_proven: usize,
    pub mean_policy_cost: Option<f64>,
    pub gap_pct: Option<GapStats>,
}

/// Linear-interpolation quantile of an ascending slice.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize_reports(reports: &[GapReport]) -> EvalSummary {
    let mut gaps: Vec<f64> = reports.iter().filter_map(|r| r.gap_pct).collect();
    gaps.sort_by(f64::total_cmp);
    let gap_pct = if gaps.is_empty() {
        None
    } else {
        Some(GapStats {
            mean: gaps.iter().sum::<f64>() / gaps.len() as f64,
            median: quantile(&gaps, 0.5),
            q1: quantile(&gaps, 0.25),
            q3: quantile(&gaps, 0.75),
        })
    };
    let mean_policy_cost = if reports.is_empty() {
        None
    } else {
        Some(reports.iter().map(|r| r.policy_cost).sum::<f64>() / reports.len() as f64)
    };
    EvalSummary {
        n_instances: reports.len(),
        n_proven: reports.iter().filter(|r| r.oracle_cost.is_some()).count(),
        mean_policy_cost,
        gap_pct,
    }
}

/// Optimal cost for one instance: a stored `<stem>.oracle.json` certificate
/// next to the instance wins; otherwise the exact solver runs in-process.
fn oracle_solution_for(
    file: &Path,
    instance: &Instance,
    config: &OracleConfig,
) -> Result<(f64, bool, f64), HarnessError> {
    let stored = file.with_extension("oracle.json");
    if stored.is_file() {
        let json: OracleResultJson = serde_json::from_slice(&read_bytes(&stored)?)
            .map_err(|e| HarnessError::Validation(format!("bad oracle file {}: {e}", stored.display())))?;
        return Ok((json.cost, json.proven, json.ms));
    }
    let features = assemble_features(instance);
    let result = solve_bnb(&features, &instance.economics, config)?;
    Ok((result.cost, result.proven, result.ms))
}

fn evaluate_files(
    params: &PolicyParams,
    files: &[PathBuf],
    oracle: &OracleConfig,
) -> Result<Vec<GapReport>, HarnessError> {
    let mut reports = Vec::with_capacity(files.len());
    for file in files {
        let instance = load_instance(&read_bytes(file)?)?;
        let decode_started = Instant::now();
        let greedy = rollout(params, &instance, DecodeMode::Greedy)?;
        let decode_ms = decode_started.elapsed().as_secs_f64() * 1e3;
        let (cost, proven, oracle_ms) = oracle_solution_for(file, &instance, oracle)?;
        let (oracle_cost, gap_pct) = if proven {
            (Some(cost), Some(gap(cost, greedy.cost)?))
        } else {
            (None, None)
        };
        reports.push(GapReport {
            instance_id: file_stem(file),
            oracle_cost,
            policy_cost: greedy.cost,
            gap_pct,
            decode_ms,
            oracle_ms,
        });
    }
    Ok(reports)
}

fn reports_csv(reports: &[GapReport]) -> String {
    let mut out = String::from(GapReport::CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    out
}

/// Greedy-decodes a checkpoint over every instance under `inputs` and writes
/// `gaps.csv` (one row per instance) plus `summary.json`. Instances the
/// oracle cannot certify in budget get `NA` gaps and stay out of the
/// statistics. An empty input directory yields a header-only CSV.
pub fn cmd_evaluate(
    ckpt_path: &Path,
    inputs: &Path,
    oracle: &OracleConfig,
    seed: u64,
    threads: usize,
    out: &Path,
) -> Result<RunManifest, HarnessError> {
    let started = Instant::now();
    let ckpt_bytes = read_bytes(ckpt_path)?;
    let ckpt = load_checkpoint(ckpt_path)?;
    let files = instance_files(inputs)?;
    let manifest_config = serde_json::json!({
        "checkpoint_sha256": sha256_hex(&ckpt_bytes),
        "oracle": oracle_config_json(oracle),
        "inputs": files.iter().map(|f| file_stem(f)).collect::<Vec<_>>(),
    });
    let mut manifest = RunManifest::new("evaluate", manifest_config, seed, threads);

    let reports = evaluate_files(&ckpt.params, &files, oracle)?;
    let csv = reports_csv(&reports);
    write_bytes(&out.join("gaps.csv"), csv.as_bytes())?;
    let normalized = normalize_csv_columns(&csv, &["decode_ms", "oracle_ms"]);
    manifest.push_timed_artifact("gaps.csv", csv.as_bytes(), normalized.as_bytes());

    let summary = summarize_reports(&reports);
    let mut summary_bytes = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    summary_bytes.push(b'\n');
    write_bytes(&out.join("summary.json"), &summary_bytes)?;
    manifest.push_artifact("summary.json", &summary_bytes);

    finish_manifest(out, manifest, started)
}

// ---------------------------------------------------------------------------
// gap-matrix

/// Cross-evaluates checkpoints against instance sets and writes `matrix.csv`
/// with one row per checkpoint and one column per set; each cell is the mean
/// gap in percent, or `NA` when no instance in the set could be certified.
pub fn cmd_gap_matrix(
    ckpts: &[(String, PathBuf)],
    sets: &[(String, PathBuf)],
    oracle: &OracleConfig,
    seed: u64,
    threads: usize,
    out: &Path,
) -> Result<RunManifest, HarnessError> {
    let started = Instant::now();
    if ckpts.is_empty() || sets.is_empty() {
        return Err(HarnessError::Usage(
            "gap-matrix needs at least one checkpoint and one instance set".into(),
        ));
    }
    let mut ckpt_meta = Vec::new();
    for (name, path) in ckpts {
        ckpt_meta.push(serde_json::json!([name, sha256_hex(&read_bytes(path)?)]));
    }
    let mut set_meta = Vec::new();
    let mut set_files = Vec::new();
    for (name, dir) in sets {
        let files = instance_files(dir)?;
        set_meta.push(serde_json::json!([
            name,
            files.iter().map(|f| file_stem(f)).collect::<Vec<_>>(),
        ]));
        set_files.push(files);
    }
    let manifest_config = serde_json::json!({
        "checkpoints": ckpt_meta,
        "sets": set_meta,
        "oracle": oracle_config_json(oracle),
    });
    let mut manifest = RunManifest::new("gap-matrix", manifest_config, seed, threads);

    let mut csv = String::from("policy");
    for (name, _) in sets {
        csv.push(',');
        csv.push_str(name);
    }
    csv.push('\n');
    for (name, path) in ckpts {
        let ckpt = load_checkpoint(path)?;
        csv.push_str(name);
        for files in &set_files {
            let reports = evaluate_files(&ckpt.params, files, oracle)?;
            let cell = summarize_reports(&reports)
                .gap_pct
                .map_or_else(|| "NA".to_string(), |g| g.mean.to_string());
            csv.push(',');
            csv.push_str(&cell);
        }
        csv.push('\n');
    }
    write_bytes(&out.join("matrix.csv"), csv.as_bytes())?;
    manifest.push_artifact("matrix.csv", csv.as_bytes());

    finish_manifest(out, manifest, started)
}

// ---------------------------------------------------------------------------
// verify

fn finish_verify(
    outcomes: &[CheckOutcome],
    seed: u64,
    threads: usize,
    out: &Path,
) -> Result<RunManifest, HarnessError> {
    let started = Instant::now();
    let mut manifest =
        RunManifest::new("verify", serde_json::json!({ "seed": seed }), seed, threads);
    let render = |timed: bool| {
        let mut s = String::new();
        for o in outcomes {
            let status = if o.passed { "PASS" } else { "FAIL" };
            let secs = if timed { o.seconds } else { 0.0 };
            s.push_str(&format!("{status} {} ({secs:.1}s): {}\n", o.name, o.detail));
        }
        s
    };
    let report = render(true);
    write_bytes(&out.join("verify.txt"), report.as_bytes())?;
    manifest.push_timed_artifact("verify.txt", report.as_bytes(), render(false).as_bytes());
    let manifest = finish_manifest(out, manifest, started)?;

    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
    if failed.is_empty() {
        Ok(manifest)
    } else {
        Err(HarnessError::Validation(format!("verification failed: {}", failed.join(", "))))
    }
}

/// Runs every cross-implementation invariant suite and writes `verify.txt`
/// with one PASS/FAIL line per suite. Fails with the validation exit code
/// if any suite found a discrepancy.
pub fn cmd_verify(seed: u64, threads: usize, out: &Path) -> Result<RunManifest, HarnessError> {
    finish_verify(&verify::run_all(seed), seed, threads, out)
}
