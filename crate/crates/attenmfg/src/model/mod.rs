//! Problem instances: machines, economics, failure scenarios, demand, and the
//! precomputed dynamic maintenance cost matrix.

mod generator;
mod io;
mod survival;

pub use generator::{generate_instance, CostDistributions, GeneratorConfig, SiteFamily};
pub use io::{load_instance, save_instance, INSTANCE_SCHEMA};
pub use survival::{
    compute_dynamic_cost, dynamic_cost_for, mean_residual_life, sample_failure_period,
    SurvivalModel, SurvivalParams,
};

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid parameters: {what}")]
    InvalidParameters { what: String },
    #[error("infeasible configuration: {n_machines} machines exceed {slots} maintenance slots (horizon x J)")]
    InfeasibleConfig { n_machines: usize, slots: usize },
    #[error("instance parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("instance validation failed at `{field}`: {reason}")]
    Validation { field: &'static str, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// System-wide economic parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EconomicParams {
    /// Penalty per period a machine sits idle (`P^f`).
    pub idle_penalty: f64,
    /// Penalty per unit of unsatisfied demand per period (`P^d`).
    pub demand_penalty: f64,
    /// Cost of relocating the maintenance crew (`Delta`).
    pub travel_cost: f64,
    /// Maximum maintenance actions per period (`J`).
    pub max_maint_per_period: usize,
}

/// One leased machine: location, cost parameters, fitted survival model, and
/// nominal production rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineSpec {
    /// Index in `[0, M)`.
    pub id: usize,
    /// Site index in `[1, L]`; site 0 is reserved for the crew depot.
    pub site: u32,
    /// Planned (preventive) maintenance cost `C^p`.
    pub preventive_cost: f64,
    /// Failure replacement cost `C^f` (also charged as the unexpected-failure
    /// penalty once a machine is down).
    pub corrective_cost: f64,
    pub survival: SurvivalParams,
    /// Production rate in units/period; doubles as the demand mean.
    pub nominal_rate: f64,
}

/// Sampled failure times and production limits, one realization per scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    /// `failure_time[s][m]` in `[1, T+1]`; `T+1` means no in-horizon failure.
    pub failure_time: Vec<Vec<usize>>,
    /// `production_limit[[s, m, t]]` in units/period.
    pub production_limit: Array3<f64>,
}

impl ScenarioSet {
    pub fn n_scenarios(&self) -> usize {
        self.failure_time.len()
    }
}

/// A complete ground-truth problem: everything the feature builder, the exact
/// solver, and the policy consume.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub n_sites: u32,
    pub horizon: usize,
    pub economics: EconomicParams,
    pub machines: Vec<MachineSpec>,
    pub scenarios: ScenarioSet,
    /// `demand[[m, t]]` in units/period.
    pub demand: Array2<f64>,
    /// Cached dynamic maintenance cost `C_{m,t}`, periods `t = 1..=T` at
    /// column `t-1`.
    pub dmc: Array2<f64>,
    /// Seed the generator used; retained for provenance.
    pub seed: u64,
}

impl Instance {
    pub fn n_machines(&self) -> usize {
        self.machines.len()
    }

    pub fn n_scenarios(&self) -> usize {
        self.scenarios.n_scenarios()
    }

    /// Total maintenance slots `T * J`.
    pub fn n_slots(&self) -> usize {
        self.horizon * self.economics.max_maint_per_period
    }

    /// Checks every structural invariant; loaders call this before handing an
    /// instance to the rest of the crate.
    pub fn validate(&self) -> Result<(), ModelError> {
        let m = self.n_machines();
        let t = self.horizon;
        let fail = |field: &'static str, reason: String| Err(ModelError::Validation { field, reason });

        if t == 0 {
            return fail("horizon", "must be >= 1".into());
        }
        if self.n_sites == 0 {
            return fail("n_sites", "must be >= 1".into());
        }
        let e = &self.economics;
        if e.max_maint_per_period == 0 {
            return fail("J", "must be >= 1".into());
        }
        if !(e.idle_penalty >= 0.0 && e.demand_penalty >= 0.0 && e.travel_cost >= 0.0) {
            return fail("economics", "penalties and travel cost must be >= 0".into());
        }
        if m > self.n_slots() {
            return Err(ModelError::InfeasibleConfig { n_machines: m, slots: self.n_slots() });
        }
        for (i, mach) in self.machines.iter().enumerate() {
            if mach.id != i {
                return fail("machines.id", format!("machine {i} carries id {}", mach.id));
            }
            if mach.site == 0 || mach.site > self.n_sites {
                return fail(
                    "machines.site",
                    format!("machine {i} site {} outside [1, {}] (0 is the depot)", mach.site, self.n_sites),
                );
            }
            if !(mach.preventive_cost >= 0.0 && mach.corrective_cost >= 0.0) {
                return fail("machines.cp", format!("machine {i} has negative cost"));
            }
            if mach.preventive_cost > mach.corrective_cost {
                return fail(
                    "machines.cf",
                    format!("machine {i}: preventive cost exceeds corrective cost"),
                );
            }
            if !mach.survival.is_valid() {
                return fail("machines.weibull", format!("machine {i}: {:?}", mach.survival));
            }
            if !(mach.nominal_rate > 0.0) {
                return fail("machines.rate", format!("machine {i} rate must be > 0"));
            }
        }
        let s = self.n_scenarios();
        if s == 0 {
            return fail("scenarios.failure", "need at least one scenario".into());
        }
        for (si, row) in self.scenarios.failure_time.iter().enumerate() {
            if row.len() != m {
                return fail("scenarios.failure", format!("scenario {si} has {} entries, expected {m}", row.len()));
            }
            for (mi, &f) in row.iter().enumerate() {
                if f < 1 || f > t + 1 {
                    return fail(
                        "scenarios.failure",
                        format!("scenario {si} machine {mi}: failure {f} outside [1, {}]", t + 1),
                    );
                }
            }
        }
        if self.scenarios.production_limit.dim() != (s, m, t) {
            return fail(
                "scenarios.limit",
                format!("shape {:?}, expected ({s}, {m}, {t})", self.scenarios.production_limit.dim()),
            );
        }
        if self.scenarios.production_limit.iter().any(|v| !(*v >= 0.0)) {
            return fail("scenarios.limit", "production limits must be >= 0".into());
        }
        if self.demand.dim() != (m, t) {
            return fail("demand", format!("shape {:?}, expected ({m}, {t})", self.demand.dim()));
        }
        if self.demand.iter().any(|v| !(*v >= 0.0)) {
            return fail("demand", "demand must be >= 0".into());
        }
        if self.dmc.dim() != (m, t) {
            return fail("dmc", format!("shape {:?}, expected ({m}, {t})", self.dmc.dim()));
        }
        if self.dmc.iter().any(|v| !v.is_finite()) {
            return fail("dmc", "dynamic maintenance costs must be finite".into());
        }
        Ok(())
    }
}

/// Draws one failure period per (scenario, machine) from each machine's
/// remaining-life model and fills the production-limit cube with the nominal
/// rate (constant-rate default; the cube keeps the full `(s, m, t)` index so
/// variable-rate instances stay expressible).
pub fn sample_scenarios<R: Rng>(
    machines: &[MachineSpec],
    horizon: usize,
    n_scenarios: usize,
    rng: &mut R,
) -> ScenarioSet {
    let m = machines.len();
    let mut failure_time = Vec::with_capacity(n_scenarios);
    for _ in 0..n_scenarios {
        let mut row = Vec::with_capacity(m);
        for mach in machines {
            // map [0,1) to (0,1] so the quantile never sees u = 0
            let u = 1.0 - rng.random::<f64>();
            row.push(sample_failure_period(&mach.survival, horizon, u));
        }
        failure_time.push(row);
    }
    let mut production_limit = Array3::zeros((n_scenarios, m, horizon));
    for s in 0..n_scenarios {
        for (mi, mach) in machines.iter().enumerate() {
            for t in 0..horizon {
                production_limit[[s, mi, t]] = mach.nominal_rate;
            }
        }
    }
    ScenarioSet { failure_time, production_limit }
}

/// Demand matrix `D[m][t] ~ Normal(rate_m, sigma_mult * rate_m)`, clamped at 0.
pub fn sample_demand<R: Rng>(
    machines: &[MachineSpec],
    horizon: usize,
    sigma_mult: f64,
    rng: &mut R,
) -> Array2<f64> {
    let mut demand = Array2::zeros((machines.len(), horizon));
    for (mi, mach) in machines.iter().enumerate() {
        let sigma = sigma_mult * mach.nominal_rate;
        for t in 0..horizon {
            let d = if sigma > 0.0 {
                Normal::new(mach.nominal_rate, sigma).expect("finite demand parameters").sample(rng)
            } else {
                mach.nominal_rate
            };
            demand[[mi, t]] = d.max(0.0);
        }
    }
    demand
}
