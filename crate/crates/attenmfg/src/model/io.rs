//! Instance serialization: a versioned, self-describing JSON layout that
//! round-trips every `f64` exactly (shortest-roundtrip float printing).

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{EconomicParams, Instance, MachineSpec, ModelError, ScenarioSet, SurvivalParams};

/// Version tag checked on load; bump when the layout changes.
pub const INSTANCE_SCHEMA: &str = "attenmfg-instance/1";

#[derive(Serialize, Deserialize)]
struct RawInstance {
    schema: String,
    n_sites: u32,
    horizon: usize,
    #[serde(rename = "J")]
    j: usize,
    economics: RawEconomics,
    machines: Vec<RawMachine>,
    scenarios: RawScenarios,
    demand: Vec<Vec<f64>>,
    dmc: Vec<Vec<f64>>,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct RawEconomics {
    idle_penalty: f64,
    demand_penalty: f64,
    travel_cost: f64,
}

#[derive(Serialize, Deserialize)]
struct RawMachine {
    id: usize,
    site: u32,
    cp: f64,
    cf: f64,
    weibull: RawWeibull,
    rate: f64,
}

#[derive(Serialize, Deserialize)]
struct RawWeibull {
    k: f64,
    lambda: f64,
    t_obs: f64,
}

#[derive(Serialize, Deserialize)]
struct RawScenarios {
    failure: Vec<Vec<usize>>,
    limit: Vec<Vec<Vec<f64>>>,
}

fn rows_to_array2(rows: &[Vec<f64>], field: &'static str) -> Result<Array2<f64>, ModelError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(ModelError::Validation { field, reason: "ragged rows".into() });
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((nrows, ncols), flat)
        .map_err(|e| ModelError::Validation { field, reason: e.to_string() })
    }

fn array2_to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Serializes an instance as pretty-printed schema-1 JSON.
pub fn save_instance(instance: &Instance) -> Vec<u8> {
    let raw = RawInstance {
        schema: INSTANCE_SCHEMA.to_string(),
        n_sites: instance.n_sites,
        horizon: instance.horizon,
        j: instance.economics.max_maint_per_period,
        economics: RawEconomics {
            idle_penalty: instance.economics.idle_penalty,
            demand_penalty: instance.economics.demand_penalty,
            travel_cost: instance.economics.travel_cost,
        },
        machines: instance
            .machines
            .iter()
            .map(|m| RawMachine {
                id: m.id,
                site: m.site,
                cp: m.preventive_cost,
                cf: m.corrective_cost,
                weibull: RawWeibull {
                    k: m.survival.shape,
                    lambda: m.survival.scale,
                    t_obs: m.survival.observe_time,
                },
                rate: m.nominal_rate,
            })
            .collect(),
        scenarios: RawScenarios {
            failure: instance.scenarios.failure_time.clone(),
            limit: (0..instance.n_scenarios())
                .map(|s| {
                    (0..instance.n_machines())
                        .map(|m| {
                            (0..instance.horizon)
                                .map(|t| instance.scenarios.production_limit[[s, m, t]])
                                .collect()
                        })
                        .collect()
                })
                .collect(),
        },
        demand: array2_to_rows(&instance.demand),
        dmc: array2_to_rows(&instance.dmc),
        seed: instance.seed,
    };
    let mut bytes = serde_json::to_vec_pretty(&raw).expect("instance serialization is infallible");
    bytes.push(b'\n');
    bytes
}

/// Parses schema-1 JSON and validates every instance invariant.
pub fn load_instance(bytes: &[u8]) -> Result<Instance, ModelError> {
    let raw: RawInstance = serde_json::from_slice(bytes)?;
    if raw.schema != INSTANCE_SCHEMA {
        return Err(ModelError::Parse(<serde_json::Error as serde::de::Error>::custom(
            format!("schema: expected \"{INSTANCE_SCHEMA}\", found \"{}\"", raw.schema),
        )));
    }

    let n_scen = raw.scenarios.limit.len();
    let m = raw.machines.len();
    let t = raw.horizon;
    let mut production_limit = Array3::zeros((n_scen, m, t));
    for (s, per_machine) in raw.scenarios.limit.iter().enumerate() {
        if per_machine.len() != m {
            return Err(ModelError::Validation {
                field: "scenarios.limit",
                reason: format!("scenario {s} has {} machines, expected {m}", per_machine.len()),
            });
        }
        for (mi, row) in per_machine.iter().enumerate() {
            if row.len() != t {
                return Err(ModelError::Validation {
                    field: "scenarios.limit",
                    reason: format!("scenario {s} machine {mi} has {} periods, expected {t}", row.len()),
                });
            }
            for (ti, &v) in row.iter().enumerate() {
                production_limit[[s, mi, ti]] = v;
            }
        }
    }

    let instance = Instance {
        n_sites: raw.n_sites,
        horizon: raw.horizon,
        economics: EconomicParams {
            idle_penalty: raw.economics.idle_penalty,
            demand_penalty: raw.economics.demand_penalty,
            travel_cost: raw.economics.travel_cost,
            max_maint_per_period: raw.j,
        },
        machines: raw
            .machines
            .iter()
            .map(|m| MachineSpec {
                id: m.id,
                site: m.site,
                preventive_cost: m.cp,
                corrective_cost: m.cf,
                survival: SurvivalParams::new(m.weibull.k, m.weibull.lambda, m.weibull.t_obs),
                nominal_rate: m.rate,
            })
            .collect(),
        scenarios: ScenarioSet { failure_time: raw.scenarios.failure, production_limit },
        demand: rows_to_array2(&raw.demand, "demand")?,
        dmc: rows_to_array2(&raw.dmc, "dmc")?,
        seed: raw.seed,
    };
    instance.validate()?;
    Ok(instance)
}
