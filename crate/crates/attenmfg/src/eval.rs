//! Schedules, feasibility, and cost.
//!
//! Cost is computed by two deliberately independent routes that must agree:
//!
//! * [`sequence_cost`] — walk the slot sequence and sum the precomputed
//!   feature entries `chi + y`, plus travel per crew relocation.
//! * [`direct_mip_cost`] — rebuild production levels and unmet demand from
//!   the instance's scenarios, period by period, and evaluate the objective's
//!   five terms from first principles.
//!
//! Their agreement (to 1e-9 relative) is the crate's load-bearing invariant:
//! it proves the tensor the solvers optimize is the cost the model defines.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::features::FeatureTensor;
use crate::model::{EconomicParams, Instance};

/// A complete decision: one row index per maintenance slot, periods ordered,
/// `dup` slots per period. Row `n_real` is the idle token.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Schedule {
    pub seq: Vec<usize>,
}

impl Schedule {
    pub fn new(seq: Vec<usize>) -> Self {
        Self { seq }
    }

    /// 0-based maintenance period per real machine, `None` if unscheduled.
    pub fn maintenance_period(&self, n_real: usize, dup: usize) -> Vec<Option<usize>> {
        let mut period = vec![None; n_real];
        for (step, &row) in self.seq.iter().enumerate() {
            if row < n_real && period[row].is_none() {
                period[row] = Some(step / dup);
            }
        }
        period
    }

    /// The 0/1 maintenance matrix `z[[m, t]]`.
    pub fn z_matrix(&self, n_real: usize, horizon: usize, dup: usize) -> Array2<u8> {
        let mut z = Array2::zeros((n_real, horizon));
        for (step, &row) in self.seq.iter().enumerate() {
            if row < n_real {
                z[[row, step / dup]] = 1;
            }
        }
        z
    }

    /// Crew site after each step, starting from the depot; the idle token
    /// pulls the crew back to the depot.
    pub fn crew_sites(&self, site_of_row: &[u32]) -> Vec<u32> {
        self.seq.iter().map(|&row| site_of_row[row]).collect()
    }
}

/// One broken scheduling rule; an empty violation list means feasible.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("sequence has {found} slots, expected {expected}")]
    WrongLength { expected: usize, found: usize },
    #[error("step {step} selects row {row}, outside 0..={idle_row}")]
    RowOutOfRange { step: usize, row: usize, idle_row: usize },
    #[error("machine {machine} maintained twice (steps {first_step} and {second_step})")]
    DuplicateMachine { machine: usize, first_step: usize, second_step: usize },
    #[error("machine {machine} never maintained")]
    MissingMachine { machine: usize },
    #[error("period {period} holds {count} maintenance actions, max {max}")]
    TooManyPerPeriod { period: usize, count: usize, max: usize },
    #[error("step {step}: machine {machine} at site {site} but crew at site {crew}")]
    CrewAbsent { step: usize, machine: usize, site: u32, crew: u32 },
}

/// Structural feasibility (slot count, one visit per machine, per-period
/// capacity) given only the problem shape.
pub fn check_feasible_shape(
    schedule: &Schedule,
    n_real: usize,
    horizon: usize,
    dup: usize,
) -> Vec<Violation> {
    let mut violations = Vec::new();
    let expected = horizon * dup;
    if schedule.seq.len() != expected {
        violations.push(Violation::WrongLength { expected, found: schedule.seq.len() });
        return violations;
    }
    let mut first_seen = vec![None; n_real];
    let mut per_period = vec![0usize; horizon];
    for (step, &row) in schedule.seq.iter().enumerate() {
        if row > n_real {
            violations.push(Violation::RowOutOfRange { step, row, idle_row: n_real });
            continue;
        }
        if row == n_real {
            continue;
        }
        per_period[step / dup] += 1;
        match first_seen[row] {
            None => first_seen[row] = Some(step),
            Some(first_step) => violations.push(Violation::DuplicateMachine {
                machine: row,
                first_step,
                second_step: step,
            }),
        }
    }
    for (machine, seen) in first_seen.iter().enumerate() {
        if seen.is_none() {
            violations.push(Violation::MissingMachine { machine });
        }
    }
    // With `dup` slots per period this cannot trigger, but the rule is part
    // of the model, so it is re-derived rather than assumed.
    for (period, &count) in per_period.iter().enumerate() {
        if count > dup {
            violations.push(Violation::TooManyPerPeriod { period, count, max: dup });
        }
    }
    violations
}

/// Full feasibility against an instance, including the team-presence rule:
/// the crew must sit at the selected machine's site in the period it is
/// maintained. Sequence semantics put the crew there by construction; the
/// check re-derives the crew path and asserts it anyway.
pub fn check_feasible(schedule: &Schedule, instance: &Instance) -> Vec<Violation> {
    let n_real = instance.n_machines();
    let mut violations = check_feasible_shape(
        schedule,
        n_real,
        instance.horizon,
        instance.economics.max_maint_per_period,
    );
    if !violations.is_empty() {
        return violations;
    }
    let mut site_of_row: Vec<u32> = instance.machines.iter().map(|m| m.site).collect();
    site_of_row.push(0);
    let crew = schedule.crew_sites(&site_of_row);
    for (step, &row) in schedule.seq.iter().enumerate() {
        if row < n_real && instance.machines[row].site != crew[step] {
            violations.push(Violation::CrewAbsent {
                step,
                machine: row,
                site: instance.machines[row].site,
                crew: crew[step],
            });
        }
    }
    violations
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("infeasible schedule: {}", summarize(.0))]
    Infeasible(Vec<Violation>),
    #[error("gap undefined: oracle cost {0} is not > 0")]
    NonPositiveOracleCost(f64),
}

fn summarize(violations: &[Violation]) -> String {
    violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Objective value split into the five model terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    /// Planned (pre-failure) maintenance cost.
    pub maint_pre: f64,
    /// Corrective replacement cost.
    pub maint_corr: f64,
    /// Machine downtime penalty.
    pub idle_pen: f64,
    /// Unmet-demand penalty.
    pub demand_pen: f64,
    /// Crew relocation cost.
    pub travel: f64,
    /// Sum of the five parts.
    pub total: f64,
}

impl CostBreakdown {
    fn close(mut self) -> Self {
        self.total = self.maint_pre + self.maint_corr + self.idle_pen + self.demand_pen + self.travel;
        self
    }
}

/// Travel cost under the per-step convention: the crew starts at the depot
/// and pays `delta` whenever the visited site differs from where it stands.
fn travel_cost(seq: &[usize], site_of_row: &[u32], delta: f64) -> f64 {
    let mut crew = 0u32;
    let mut cost = 0.0;
    for &row in seq {
        let site = site_of_row[row];
        if site != crew {
            cost += delta;
            crew = site;
        }
    }
    cost
}

/// Cost by the feature-tensor route: per-slot `chi + y` plus travel.
pub fn sequence_cost(
    schedule: &Schedule,
    features: &FeatureTensor,
    economics: &EconomicParams,
) -> Result<CostBreakdown, EvalError> {
    let violations =
        check_feasible_shape(schedule, features.n_real, features.horizon, features.dup);
    if !violations.is_empty() {
        return Err(EvalError::Infeasible(violations));
    }
    let mut b = CostBreakdown::default();
    for (step, &row) in schedule.seq.iter().enumerate() {
        b.maint_pre += features.chi_pre[[row, step]];
        b.maint_corr += features.chi_corr[[row, step]];
        b.idle_pen += features.chi_idle[[row, step]];
        b.demand_pen += features.y[[row, step]];
    }
    b.travel = travel_cost(&schedule.seq, &features.site, economics.travel_cost);
    Ok(b.close())
}

/// Cost by the scenario route: evaluates the objective directly — production
/// level per (scenario, machine, period) from the failure/maintenance state,
/// unmet demand from the production shortfall, maintenance branch by failure
/// time — without touching the feature tensor.
pub fn direct_mip_cost(schedule: &Schedule, instance: &Instance) -> Result<CostBreakdown, EvalError> {
    let violations = check_feasible(schedule, instance);
    if !violations.is_empty() {
        return Err(EvalError::Infeasible(violations));
    }
    let n_real = instance.n_machines();
    let dup = instance.economics.max_maint_per_period;
    let horizon = instance.horizon;
    let n_scen = instance.n_scenarios();
    let s_inv = 1.0 / n_scen as f64;
    let p_f = instance.economics.idle_penalty;
    let p_d = instance.economics.demand_penalty;

    // 1-based maintenance period per machine; feasibility guarantees Some.
    let maint: Vec<usize> = schedule
        .maintenance_period(n_real, dup)
        .into_iter()
        .map(|p| p.expect("feasible schedule places every machine") + 1)
        .collect();

    let mut b = CostBreakdown::default();
    for s in 0..n_scen {
        for (m, mach) in instance.machines.iter().enumerate() {
            let f = instance.scenarios.failure_time[s][m];
            let tm = maint[m];
            if tm < f {
                b.maint_pre += s_inv * instance.dmc[[m, tm - 1]];
                b.idle_pen += s_inv * p_f;
            } else {
                b.maint_corr += s_inv * mach.corrective_cost;
                b.idle_pen += s_inv * (tm - f + 1) as f64 * p_f;
            }
            for l in 1..=horizon {
                let limit = instance.scenarios.production_limit[[s, m, l - 1]];
                let produced = if l < f {
                    // Pre-failure: full rate unless in maintenance that period.
                    if l == tm {
                        0.0
                    } else {
                        limit
                    }
                } else {
                    // Post-failure: produces only once repaired strictly earlier.
                    if tm < l {
                        limit
                    } else {
                        0.0
                    }
                };
                let short = instance.demand[[m, l - 1]] - produced;
                if short > 0.0 {
                    b.demand_pen += s_inv * p_d * short;
                }
            }
        }
    }
    let mut site_of_row: Vec<u32> = instance.machines.iter().map(|m| m.site).collect();
    site_of_row.push(0);
    b.travel = travel_cost(&schedule.seq, &site_of_row, instance.economics.travel_cost);
    Ok(b.close())
}

/// Optimality gap in percent.
pub fn gap(oracle_cost: f64, policy_cost: f64) -> Result<f64, EvalError> {
    if !(oracle_cost > 0.0) {
        return Err(EvalError::NonPositiveOracleCost(oracle_cost));
    }
    Ok(100.0 * (policy_cost - oracle_cost) / oracle_cost)
}

/// One evaluated instance: costs, gap, and wall times. `oracle_cost` and
/// `gap_pct` are `None` when the oracle could not prove optimality in budget.
#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub instance_id: String,
    pub oracle_cost: Option<f64>,
    pub policy_cost: f64,
    pub gap_pct: Option<f64>,
    pub decode_ms: f64,
    pub oracle_ms: f64,
}

impl GapReport {
    pub const CSV_HEADER: &'static str =
        "instance_id,oracle_cost,policy_cost,gap_pct,decode_ms,oracle_ms";

    pub fn to_csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        format!(
            "{},{},{},{},{},{}",
            self.instance_id,
            opt(self.oracle_cost),
            self.policy_cost,
            opt(self.gap_pct),
            self.decode_ms,
            self.oracle_ms
        )
    }

    pub fn from_csv_row(row: &str) -> Option<Self> {
        let mut fields = row.split(',');
        let instance_id = fields.next()?.to_string();
        let parse_opt = |s: &str| {
            if s == "NA" {
                Some(None)
            } else {
                s.parse::<f64>().ok().map(Some)
            }
        };
        let oracle_cost = parse_opt(fields.next()?)?;
        let policy_cost = fields.next()?.parse().ok()?;
        let gap_pct = parse_opt(fields.next()?)?;
        let decode_ms = fields.next()?.parse().ok()?;
        let oracle_ms = fields.next()?.parse().ok()?;
        if fields.next().is_some() {
            return None;
        }
        Some(Self { instance_id, oracle_cost, policy_cost, gap_pct, decode_ms, oracle_ms })
    }
}

/// Uniformly random feasible schedule: machines shuffled into a random subset
/// of slots, idle elsewhere. Used by the cross-validation suites.
pub fn random_feasible_schedule<R: Rng>(
    n_real: usize,
    horizon: usize,
    dup: usize,
    rng: &mut R,
) -> Schedule {
    let n_slots = horizon * dup;
    assert!(n_real <= n_slots, "no feasible schedule exists");
    let mut slots: Vec<usize> = (0..n_slots).collect();
    slots.shuffle(rng);
    let mut machines: Vec<usize> = (0..n_real).collect();
    machines.shuffle(rng);
    let mut seq = vec![n_real; n_slots];
    for (slot, machine) in slots.into_iter().zip(machines) {
        seq[slot] = machine;
    }
    Schedule::new(seq)
}
