//! `attenmfg`: generate maintenance-scheduling instances, train the
//! attention policy, certify optima with the exact solver, and measure
//! optimality gaps. Every subcommand writes its artifacts plus a
//! `manifest.json` into `--out`; identical seeds reproduce identical
//! `det_hash` fingerprints.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use attenmfg::harness::{
    cmd_evaluate, cmd_gap_matrix, cmd_generate, cmd_solve_oracle, cmd_train, cmd_verify, preset,
    preset_names, HarnessError,
};
use attenmfg::model::SiteFamily;
use attenmfg::{GeneratorConfig, OracleConfig, TrainConfig};

#[derive(Parser)]
#[command(
    name = "attenmfg",
    version,
    about = "Sensor-driven maintenance scheduling: generate, train, certify, evaluate."
)]
struct Cli {
    /// Master seed for every stochastic step.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// TOML or JSON file with [gen] / [train] / [oracle] overrides.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory the command writes its artifacts into.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw problem instances and write each as a JSON file.
    Generate {
        /// Named base configuration; [gen] overrides apply on top.
        #[arg(long, default_value = "L5P10M25")]
        preset: String,
        /// How many instances to draw.
        #[arg(long, default_value_t = 16)]
        n: usize,
    },
    /// Train a policy; writes policy.ckpt and per-epoch metrics.csv.
    Train {
        #[arg(long, default_value = "L5P10M25")]
        preset: String,
        /// Continue from an existing checkpoint instead of initializing.
        /// The run must match the config in everything but `epochs`.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Solve instances to proven optimality; writes one <stem>.oracle.json
    /// certificate per instance.
    SolveOracle {
        /// Instance file, or directory of instance files.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        node_budget: Option<u64>,
        #[arg(long)]
        time_budget_s: Option<f64>,
    },
    /// Greedy-decode a checkpoint over instances and report optimality gaps.
    /// Stored certificates next to the instances are reused; anything else
    /// is solved in-process.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        /// Instance file, or directory of instance files.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        node_budget: Option<u64>,
        #[arg(long)]
        time_budget_s: Option<f64>,
    },
    /// Cross-evaluate checkpoints against instance sets; writes matrix.csv
    /// of mean gaps (rows = checkpoints, columns = sets).
    GapMatrix {
        /// Checkpoint as NAME=PATH; repeat for more rows.
        #[arg(long = "ckpt", value_name = "NAME=PATH", required = true)]
        ckpts: Vec<String>,
        /// Instance set as NAME=DIR; repeat for more columns.
        #[arg(long = "set", value_name = "NAME=DIR", required = true)]
        sets: Vec<String>,
        #[arg(long)]
        node_budget: Option<u64>,
        #[arg(long)]
        time_budget_s: Option<f64>,
    },
    /// Run every cross-implementation invariant suite and report PASS/FAIL.
    Verify,
}

// ---------------------------------------------------------------------------
// Config-file overrides

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    gen: GenPatch,
    #[serde(default)]
    train: TrainPatch,
    #[serde(default)]
    oracle: OraclePatch,
}

/// Partial generator overrides; unset fields keep the preset's values.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenPatch {
    /// Pin the site count. Takes precedence over `random_sites`.
    sites: Option<u32>,
    /// Draw the site count per instance instead of pinning it.
    random_sites: Option<bool>,
    n_machines: Option<usize>,
    horizon: Option<usize>,
    max_maint_per_period: Option<usize>,
    n_scenarios: Option<usize>,
    idle_penalty: Option<f64>,
    demand_penalty: Option<f64>,
    travel_cost: Option<f64>,
    demand_sigma: Option<f64>,
}

impl GenPatch {
    fn apply(&self, mut gen: GeneratorConfig) -> GeneratorConfig {
        if self.random_sites == Some(true) {
            gen.family = SiteFamily::Random;
        }
        if let Some(l) = self.sites {
            gen.family = SiteFamily::Fixed(l);
        }
        if let Some(v) = self.n_machines {
            gen.n_machines = v;
        }
        if let Some(v) = self.horizon {
            gen.horizon = v;
        }
        if let Some(v) = self.max_maint_per_period {
            gen.max_maint_per_period = v;
        }
        if let Some(v) = self.n_scenarios {
            gen.n_scenarios = v;
        }
        if let Some(v) = self.idle_penalty {
            gen.idle_penalty = v;
        }
        if let Some(v) = self.demand_penalty {
            gen.demand_penalty = v;
        }
        if let Some(v) = self.travel_cost {
            gen.travel_cost = v;
        }
        if let Some(v) = self.demand_sigma {
            gen.demand_sigma = v;
        }
        gen
    }
}

/// Partial training overrides, with the architecture fields flattened in.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainPatch {
    epochs: Option<usize>,
    instances_per_epoch: Option<usize>,
    batch: Option<usize>,
    lr: Option<f64>,
    baseline_rollouts: Option<usize>,
    grad_clip: Option<f64>,
    holdout_instances: Option<usize>,
    seed: Option<u64>,
    hidden: Option<usize>,
    heads: Option<usize>,
    n_layers: Option<usize>,
    logit_clip: Option<f64>,
}

impl TrainPatch {
    fn apply(&self, mut config: TrainConfig) -> TrainConfig {
        if let Some(v) = self.epochs {
            config.epochs = v;
        }
        if let Some(v) = self.instances_per_epoch {
            config.instances_per_epoch = v;
        }
        if let Some(v) = self.batch {
            config.batch = v;
        }
        if let Some(v) = self.lr {
            config.lr = v;
        }
        if let Some(v) = self.baseline_rollouts {
            config.baseline_rollouts = v;
        }
        if let Some(v) = self.grad_clip {
            config.grad_clip = v;
        }
        if let Some(v) = self.holdout_instances {
            config.holdout_instances = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.hidden {
            config.hyper.hidden = v;
        }
        if let Some(v) = self.heads {
            config.hyper.heads = v;
        }
        if let Some(v) = self.n_layers {
            config.hyper.n_layers = v;
        }
        if let Some(v) = self.logit_clip {
            config.hyper.logit_clip = v;
        }
        config
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OraclePatch {
    node_budget: Option<u64>,
    time_budget_s: Option<f64>,
}

impl OraclePatch {
    /// File values override the defaults; explicit flags override the file.
    fn apply(&self, node_budget: Option<u64>, time_budget_s: Option<f64>) -> OracleConfig {
        let mut config = OracleConfig::default();
        if let Some(n) = self.node_budget {
            config.node_budget = n;
        }
        if let Some(s) = self.time_budget_s {
            config.time_budget = Duration::from_secs_f64(s);
        }
        if let Some(n) = node_budget {
            config.node_budget = n;
        }
        if let Some(s) = time_budget_s {
            config.time_budget = Duration::from_secs_f64(s);
        }
        config
    }
}

fn load_file_config(path: &Path) -> Result<FileConfig, HarnessError> {
    let text = fs::read_to_string(path)
        .map_err(|e| HarnessError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| HarnessError::Validation(format!("invalid config {}: {e}", path.display())))
}

fn resolve_preset(name: &str) -> Result<GeneratorConfig, HarnessError> {
    preset(name).ok_or_else(|| {
        HarnessError::Usage(format!(
            "unknown preset `{name}`; available: {}",
            preset_names().join(", ")
        ))
    })
}

fn parse_named(args: &[String], flag: &str) -> Result<Vec<(String, PathBuf)>, HarnessError> {
    args.iter()
        .map(|arg| {
            arg.split_once('=')
                .filter(|(name, path)| !name.is_empty() && !path.is_empty())
                .map(|(name, path)| (name.to_string(), PathBuf::from(path)))
                .ok_or_else(|| {
                    HarnessError::Usage(format!("--{flag} wants NAME=PATH, got `{arg}`"))
                })
        })
        .collect()
}

// ---------------------------------------------------------------------------

fn run(cli: Cli) -> Result<(), HarnessError> {
    let threads = if cli.threads > 0 {
        // Ignore the error: the global pool can only be set once per process,
        // and an already-set pool just means the flag keeps its first value.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
        cli.threads
    } else {
        rayon::current_num_threads()
    };
    let file = match &cli.config {
        None => FileConfig::default(),
        Some(path) => load_file_config(path)?,
    };
    let seed = cli.seed.unwrap_or(0);
    let out = &cli.out;

    match cli.command {
        Command::Generate { preset, n } => {
            let gen = file.gen.apply(resolve_preset(&preset)?);
            let manifest = cmd_generate(&gen, n, seed, threads, out)?;
            println!("wrote {} instances to {}", manifest.artifacts.len(), out.display());
            println!("det hash {}", manifest.det_hash);
        }
        Command::Train { preset, resume } => {
            let gen = file.gen.apply(resolve_preset(&preset)?);
            let mut config = file.train.apply(TrainConfig::default());
            if let Some(s) = cli.seed {
                config.seed = s;
            }
            let manifest = cmd_train(&config, &gen, resume.as_deref(), threads, out)?;
            let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap_or_default();
            let mut lines = metrics.lines();
            if let (Some(header), Some(last)) = (lines.next(), lines.last()) {
                println!("{header}");
                println!("{last}");
            }
            println!("checkpoint at {}", out.join("policy.ckpt").display());
            println!("det hash {}", manifest.det_hash);
        }
        Command::SolveOracle { input, node_budget, time_budget_s } => {
            let oracle = file.oracle.apply(node_budget, time_budget_s);
            let manifest = cmd_solve_oracle(&input, &oracle, seed, threads, out)?;
            println!("certified {} instances into {}", manifest.artifacts.len(), out.display());
            println!("det hash {}", manifest.det_hash);
        }
        Command::Evaluate { ckpt, input, node_budget, time_budget_s } => {
            let oracle = file.oracle.apply(node_budget, time_budget_s);
            let manifest = cmd_evaluate(&ckpt, &input, &oracle, seed, threads, out)?;
            print!("{}", fs::read_to_string(out.join("summary.json")).unwrap_or_default());
            println!("det hash {}", manifest.det_hash);
        }
        Command::GapMatrix { ckpts, sets, node_budget, time_budget_s } => {
            let ckpts = parse_named(&ckpts, "ckpt")?;
            let sets = parse_named(&sets, "set")?;
            let oracle = file.oracle.apply(node_budget, time_budget_s);
            let manifest = cmd_gap_matrix(&ckpts, &sets, &oracle, seed, threads, out)?;
            print!("{}", fs::read_to_string(out.join("matrix.csv")).unwrap_or_default());
            println!("det hash {}", manifest.det_hash);
        }
        Command::Verify => {
            let result = cmd_verify(seed, threads, out);
            if let Ok(report) = fs::read_to_string(out.join("verify.txt")) {
                print!("{report}");
            }
            let manifest = result?;
            println!("det hash {}", manifest.det_hash);
        }
    }
    Ok(())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version land here too; only real usage errors
            // should exit nonzero.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
