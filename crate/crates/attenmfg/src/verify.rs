//! Self-contained invariant suites with independent oracle implementations.
//!
//! Each check re-derives its expected values from scratch — a direct
//! scenario evaluation, a machine state simulator, an assignment solver —
//! so a shared bug in the production code cannot silently cancel out.

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eval::{check_feasible, direct_mip_cost, random_feasible_schedule, sequence_cost};
use crate::features::{assemble_features, build_throughput_cube};
use crate::model::{generate_instance, GeneratorConfig, SiteFamily};
use crate::oracle::{solve_bnb, solve_exhaustive, OracleConfig};
use crate::policy::{DecodeMode, PolicyHyper, PolicyParams};
use crate::train::{finite_difference_per_tensor, TrainError};

/// Result of one invariant suite.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Counts and worst-case numbers backing the verdict.
    pub detail: String,
    pub seconds: f64,
}

impl CheckOutcome {
    fn finish(name: &'static str, passed: bool, detail: String, started: Instant) -> Self {
        Self { name, passed, detail, seconds: started.elapsed().as_secs_f64() }
    }
}

/// Small random instance shapes that keep every suite fast while still
/// mixing site counts, horizons, and slot multiplicities.
fn random_config(rng: &mut ChaCha8Rng) -> GeneratorConfig {
    loop {
        let horizon = rng.random_range(2..=4);
        let dup = rng.random_range(1..=2);
        let machines = rng.random_range(2..=6);
        if machines > horizon * dup {
            continue;
        }
        let family = if rng.random_range(0..4) == 0 {
            SiteFamily::Random
        } else {
            SiteFamily::Fixed(rng.random_range(1..=4))
        };
        let scenarios = rng.random_range(2..=5);
        return GeneratorConfig::new(family, machines, horizon, dup, scenarios, rng.random());
    }
}

// ---------------------------------------------------------------------------
// Check 1: the two cost routes agree

/// Compares the slot-sequence cost against the direct scenario evaluation on
/// random schedules; the two share no code beyond the instance itself.
pub fn check_dual_path(seed: u64, n_instances: usize, n_schedules: usize) -> CheckOutcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut compared = 0usize;
    for _ in 0..n_instances {
        let inst = match generate_instance(&random_config(&mut rng)) {
            Ok(i) => i,
            Err(e) => {
                return CheckOutcome::finish(
                    "dual-path cost equality",
                    false,
                    format!("instance generation failed: {e}"),
                    started,
                )
            }
        };
        let features = assemble_features(&inst);
        for _ in 0..n_schedules {
            let schedule = random_feasible_schedule(
                inst.n_machines(),
                inst.horizon,
                inst.economics.max_maint_per_period,
                &mut rng,
            );
            let a = sequence_cost(&schedule, &features, &inst.economics).unwrap().total;
            let b = direct_mip_cost(&schedule, &inst).unwrap().total;
            worst = worst.max((a - b).abs() / (1.0 + a.abs().max(b.abs())));
            compared += 1;
        }
    }
    let passed = worst <= 1e-9;
    CheckOutcome::finish(
        "dual-path cost equality",
        passed,
        format!("{compared} schedules compared, max relative difference {worst:.3e}"),
        started,
    )
}

// ---------------------------------------------------------------------------
// Check 2: throughput cube vs. machine state simulator

/// Independent machine stepper: Running until the failure period (unless
/// maintained first), Down from failure through repair, Repaired after.
fn simulate_capacity(failure: usize, maint: usize, horizon: usize, limit: &[f64]) -> Vec<f64> {
    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Running,
        Down,
        Repaired,
    }
    let mut state = State::Running;
    let mut renewed = false;
    let mut out = vec![0.0; horizon];
    for l in 1..=horizon {
        if state == State::Running && !renewed && l == failure {
            state = State::Down;
        }
        match state {
            State::Running => {
                if l == maint {
                    renewed = true; // preventive renewal: down this period only
                } else {
                    out[l - 1] = limit[l - 1];
                }
            }
            State::Down => {
                if l == maint {
                    state = State::Repaired; // back in production next period
                }
            }
            State::Repaired => out[l - 1] = limit[l - 1],
        }
    }
    out
}

/// The production-limit cube must match the state simulator exactly for
/// every (scenario, machine, maintenance period).
pub fn check_throughput_simulator(seed: u64, n_instances: usize) -> CheckOutcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = 0usize;
    let mut mismatches = 0usize;
    for _ in 0..n_instances {
        let inst = generate_instance(&random_config(&mut rng)).expect("config is feasible");
        let cube = build_throughput_cube(&inst);
        let t_count = inst.horizon;
        for s in 0..inst.n_scenarios() {
            for (mi, _) in inst.machines.iter().enumerate() {
                let limit: Vec<f64> =
                    (0..t_count).map(|l| inst.scenarios.production_limit[[s, mi, l]]).collect();
                let failure = inst.scenarios.failure_time[s][mi];
                for ti in 0..t_count {
                    let want = simulate_capacity(failure, ti + 1, t_count, &limit);
                    for (li, &w) in want.iter().enumerate() {
                        cells += 1;
                        if cube.lam[[s, mi, ti, li]] != w {
                            mismatches += 1;
                        }
                    }
                }
            }
        }
    }
    CheckOutcome::finish(
        "throughput cube vs state simulator",
        mismatches == 0,
        format!("{cells} cells compared, {mismatches} mismatches"),
        started,
    )
}

// ---------------------------------------------------------------------------
// Check 3: masking feasibility

/// Samples rollouts from randomly initialized policies and counts constraint
/// violations; the decoder's mask must make violations impossible.
pub fn check_masking(seed: u64, n_instances: usize, rollouts_per_instance: usize) -> CheckOutcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0usize;
    let mut sampled = 0usize;
    for _ in 0..n_instances {
        let inst = generate_instance(&random_config(&mut rng)).expect("config is feasible");
        let hyper = PolicyHyper {
            n_layers: rng.random_range(1..=2),
            hidden: 8 * rng.random_range(1..=2),
            heads: 2,
            logit_clip: 10.0,
        };
        let params = PolicyParams::init(hyper, rng.random());
        for _ in 0..rollouts_per_instance {
            let out = crate::policy::rollout(&params, &inst, DecodeMode::Sample(&mut rng))
                .expect("sampled rollouts are feasible by construction");
            violations += check_feasible(&out.schedule, &inst).len();
            sampled += 1;
        }
    }
    CheckOutcome::finish(
        "decoder masking feasibility",
        violations == 0,
        format!("{sampled} rollouts sampled, {violations} constraint violations"),
        started,
    )
}

// ---------------------------------------------------------------------------
// Check 4: gradient finite differences

/// Frozen-rollout finite-difference agreement on a small network.
pub fn check_gradient(seed: u64) -> CheckOutcome {
    let started = Instant::now();
    let run = || -> Result<(f64, String), TrainError> {
        let gen = GeneratorConfig::new(SiteFamily::Fixed(2), 3, 2, 2, 3, seed);
        let inst = generate_instance(&gen)?;
        let hyper = PolicyHyper { n_layers: 1, hidden: 8, heads: 2, logit_clip: 10.0 };
        let params = PolicyParams::init(hyper, seed ^ 0xabcd);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1234);
        let seqs: Vec<Vec<usize>> = (0..3)
            .map(|_| {
                Ok(crate::policy::rollout(&params, &inst, DecodeMode::Sample(&mut rng))?
                    .schedule
                    .seq)
            })
            .collect::<Result<_, TrainError>>()?;
        let report = finite_difference_per_tensor(&params, &inst, &seqs, 1e-5)?;
        let worst = report.iter().map(|(_, e)| *e).fold(0.0, f64::max);
        let summary = report
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(n, e)| format!("worst tensor `{n}` at {e:.3e}"))
            .unwrap_or_default();
        Ok((worst, summary))
    };
    match run() {
        Ok((worst, summary)) => CheckOutcome::finish(
            "gradient vs central finite differences",
            worst < 1e-4,
            format!("{summary}, bound 1e-4"),
            started,
        ),
        Err(e) => CheckOutcome::finish(
            "gradient vs central finite differences",
            false,
            format!("check failed to run: {e}"),
            started,
        ),
    }
}

// ---------------------------------------------------------------------------
// Check 5: oracle cross-checks

/// Branch-and-bound must reproduce exhaustive enumeration bit for bit.
pub fn check_oracle_equivalence(seed: u64, n_instances: usize) -> CheckOutcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut compared = 0usize;
    let mut mismatches = Vec::new();
    for i in 0..n_instances {
        // Keep the enumeration space under 10^6 states.
        let inst = loop {
            let cfg = random_config(&mut rng);
            let space = ((cfg.n_machines + 1) as f64)
                .powi((cfg.horizon * cfg.max_maint_per_period) as i32);
            if space <= 1e6 {
                break generate_instance(&cfg).expect("config is feasible");
            }
        };
        let features = assemble_features(&inst);
        let config = OracleConfig::default();
        let full = solve_exhaustive(&features, &inst.economics, config.node_budget)
            .expect("within budget");
        let pruned = solve_bnb(&features, &inst.economics, &config).expect("within budget");
        compared += 1;
        if !(full.proven && pruned.proven)
            || full.cost != pruned.cost
            || full.schedule.seq != pruned.schedule.seq
        {
            mismatches.push(i);
        }
    }
    CheckOutcome::finish(
        "branch-and-bound vs exhaustive search",
        mismatches.is_empty(),
        format!("{compared} instances solved both ways, mismatches at {mismatches:?}"),
        started,
    )
}

/// Jonker-style shortest-augmenting-path solution of the rectangular
/// assignment problem (rows <= columns), used as an independent optimum when
/// the objective separates per slot.
fn assignment_min_cost(w: &Array2<f64>) -> f64 {
    let n = w.nrows();
    let m = w.ncols();
    assert!(n <= m, "assignment needs at least as many columns as rows");
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut matched = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        matched[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = matched[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = w[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[matched[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched[j0] == 0 {
                break;
            }
        }
        while j0 != 0 {
            let j1 = way[j0];
            matched[j0] = matched[j1];
            j0 = j1;
        }
    }
    (1..=m).filter(|&j| matched[j] != 0).map(|j| w[[matched[j] - 1, j - 1]]).sum()
}

/// With one site and no travel charge the objective separates per slot, so
/// the exact solver must match a plain assignment solution.
pub fn check_assignment_oracle(seed: u64, n_instances: usize) -> CheckOutcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut compared = 0usize;
    for _ in 0..n_instances {
        let inst = loop {
            let mut cfg = random_config(&mut rng);
            cfg.family = SiteFamily::Fixed(1);
            cfg.travel_cost = 0.0;
            let space = ((cfg.n_machines + 1) as f64)
                .powi((cfg.horizon * cfg.max_maint_per_period) as i32);
            if space <= 1e6 {
                break generate_instance(&cfg).expect("config is feasible");
            }
        };
        let features = assemble_features(&inst);
        let n_real = features.n_real;
        let n_cols = features.n_cols();
        let mut w = Array2::zeros((n_real, n_cols));
        for r in 0..n_real {
            for c in 0..n_cols {
                w[[r, c]] = features.chi[[r, c]] + features.y[[r, c]];
            }
        }
        let want = assignment_min_cost(&w);
        let got = solve_bnb(&features, &inst.economics, &OracleConfig::default())
            .expect("within budget")
            .cost;
        worst = worst.max((want - got).abs() / (1.0 + want.abs().max(got.abs())));
        compared += 1;
    }
    let passed = worst <= 1e-9;
    CheckOutcome::finish(
        "exact solver vs assignment oracle (single site, no travel)",
        passed,
        format!("{compared} instances, max relative difference {worst:.3e}"),
        started,
    )
}

/// The full battery at the sizes the acceptance gate uses.
pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    vec![
        check_dual_path(seed, 100, 10),
        check_throughput_simulator(seed.wrapping_add(1), 50),
        check_masking(seed.wrapping_add(2), 50, 200),
        check_gradient(seed.wrapping_add(3)),
        check_oracle_equivalence(seed.wrapping_add(4), 50),
        check_assignment_oracle(seed.wrapping_add(5), 20),
    ]
}
