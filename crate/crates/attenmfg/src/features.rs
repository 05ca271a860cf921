//! Feature embedding: scenario-averaged maintenance cost `x`, per-schedule
//! throughput limits, unmet-demand penalty `y`, and their assembly into the
//! idle-augmented, slot-expanded tensor the solvers and the policy share.
//!
//! The tensor is the contract: "cost of a schedule" everywhere in this crate
//! means a sum over chosen `(row, column)` cells of `chi + y`, plus crew
//! travel. The evaluator proves this matches the direct scenario model.

use ndarray::{Array2, Array4};

use crate::model::Instance;

/// Per-machine, per-maintenance-period cost split. `total` is the scenario
/// average of: before failure, planned maintenance cost plus one period of
/// downtime; at or after failure, the corrective replacement cost plus the
/// downtime accrued since the failure.
#[derive(Debug, Clone, PartialEq)]
pub struct MaintenanceCost {
    /// Planned-maintenance component (dynamic maintenance cost, pre-failure
    /// scenarios only).
    pub pre: Array2<f64>,
    /// Corrective replacement component (post-failure scenarios only).
    pub corr: Array2<f64>,
    /// Downtime component (idle penalty in both branches).
    pub idle: Array2<f64>,
    /// `pre + corr + idle`, summed element-wise.
    pub total: Array2<f64>,
}

/// Production limits `lam[[s, m, t, l]]`: what machine `m` can produce in
/// period `l` under scenario `s` if its maintenance happens in period `t`
/// (both 0-indexed here; the model's periods are 1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputCube {
    pub lam: Array4<f64>,
}

/// The canonical decision tensor: one row per real machine plus one reusable
/// idle row, one column per maintenance slot (period-major, `dup` slots per
/// period).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    /// Maintenance cost per (row, slot); zero on the idle row.
    pub chi: Array2<f64>,
    /// Unmet-demand penalty per (row, slot); zero on the idle row.
    pub y: Array2<f64>,
    /// Planned-maintenance part of `chi` (cost accounting only).
    pub chi_pre: Array2<f64>,
    /// Corrective part of `chi`.
    pub chi_corr: Array2<f64>,
    /// Downtime part of `chi`.
    pub chi_idle: Array2<f64>,
    /// Site per row; the idle row sits at the depot (site 0).
    pub site: Vec<u32>,
    /// Period channel per column: `t / T` for the 1-based period `t`.
    pub aux_t: Vec<f64>,
    /// Slot-within-period channel per column: `j / J` for the 1-based slot.
    pub aux_j: Vec<f64>,
    /// Real machines `M`.
    pub n_real: usize,
    /// Idle rows appended after the real ones (always 1 here).
    pub n_idle: usize,
    /// Periods `T`.
    pub horizon: usize,
    /// Slots per period `J`.
    pub dup: usize,
}

impl FeatureTensor {
    pub fn n_rows(&self) -> usize {
        self.n_real + self.n_idle
    }

    /// Decoding steps = total maintenance slots `T * J`.
    pub fn n_cols(&self) -> usize {
        self.horizon * self.dup
    }

    /// Row index of the reusable idle token.
    pub fn idle_row(&self) -> usize {
        self.n_real
    }

    /// 0-based period a slot column belongs to.
    pub fn period_of(&self, col: usize) -> usize {
        col / self.dup
    }
}

/// Scenario-averaged maintenance cost `x[[m, t]]` for maintaining machine `m`
/// in period `t+1`, split into its planned / corrective / downtime parts.
pub fn build_maintenance_cost(instance: &Instance) -> MaintenanceCost {
    let m_count = instance.n_machines();
    let t_count = instance.horizon;
    let s_count = instance.n_scenarios();
    let s_inv = 1.0 / s_count as f64;
    let p_f = instance.economics.idle_penalty;

    let mut pre = Array2::zeros((m_count, t_count));
    let mut corr = Array2::zeros((m_count, t_count));
    let mut idle = Array2::zeros((m_count, t_count));
    for (mi, mach) in instance.machines.iter().enumerate() {
        for ti in 0..t_count {
            let t = ti + 1;
            let (mut a_pre, mut a_corr, mut a_idle) = (0.0, 0.0, 0.0);
            for s in 0..s_count {
                let f = instance.scenarios.failure_time[s][mi];
                if t < f {
                    a_pre += instance.dmc[[mi, ti]];
                    a_idle += p_f;
                } else {
                    a_corr += mach.corrective_cost;
                    a_idle += (t - f + 1) as f64 * p_f;
                }
            }
            pre[[mi, ti]] = s_inv * a_pre;
            corr[[mi, ti]] = s_inv * a_corr;
            idle[[mi, ti]] = s_inv * a_idle;
        }
    }
    let total = &pre + &corr + &idle;
    MaintenanceCost { pre, corr, idle, total }
}

/// Production limit of machine `m` in period `l` (1-based) given failure
/// period `f` and maintenance period `t` (1-based): zero while in maintenance
/// or down awaiting repair, the scenario limit otherwise.
#[inline]
fn throughput(limit: f64, f: usize, t: usize, l: usize) -> f64 {
    if t < f {
        // Pre-failure maintenance: down only during the maintenance period.
        if l == t {
            0.0
        } else {
            limit
        }
    } else {
        // Failure first: down from the failure through the repair period.
        if l >= f && l <= t {
            0.0
        } else {
            limit
        }
    }
}

/// Fills the full `(scenario, machine, maintenance period, period)` cube.
pub fn build_throughput_cube(instance: &Instance) -> ThroughputCube {
    let m_count = instance.n_machines();
    let t_count = instance.horizon;
    let s_count = instance.n_scenarios();
    let mut lam = Array4::zeros((s_count, m_count, t_count, t_count));
    for s in 0..s_count {
        for mi in 0..m_count {
            let f = instance.scenarios.failure_time[s][mi];
            for ti in 0..t_count {
                for li in 0..t_count {
                    let limit = instance.scenarios.production_limit[[s, mi, li]];
                    lam[[s, mi, ti, li]] = throughput(limit, f, ti + 1, li + 1);
                }
            }
        }
    }
    ThroughputCube { lam }
}

/// Scenario-averaged unmet-demand penalty `y[[m, t]]`: what scheduling
/// machine `m`'s maintenance in period `t+1` costs in demand shortfall over
/// the whole horizon.
pub fn build_demand_penalty(instance: &Instance, cube: &ThroughputCube) -> Array2<f64> {
    let m_count = instance.n_machines();
    let t_count = instance.horizon;
    let s_count = instance.n_scenarios();
    let s_inv = 1.0 / s_count as f64;
    let p_d = instance.economics.demand_penalty;

    let mut y = Array2::zeros((m_count, t_count));
    for mi in 0..m_count {
        for ti in 0..t_count {
            let mut unmet = 0.0;
            for s in 0..s_count {
                for li in 0..t_count {
                    let short = instance.demand[[mi, li]] - cube.lam[[s, mi, ti, li]];
                    if short > 0.0 {
                        unmet += short;
                    }
                }
            }
            y[[mi, ti]] = p_d * s_inv * unmet;
        }
    }
    y
}

/// Builds the decision tensor: appends the idle/depot row, duplicates each
/// period column into `J` slots, and attaches the normalized period and slot
/// channels that keep duplicated columns distinguishable downstream.
pub fn assemble_features(instance: &Instance) -> FeatureTensor {
    let costs = build_maintenance_cost(instance);
    let cube = build_throughput_cube(instance);
    let y_mt = build_demand_penalty(instance, &cube);

    let n_real = instance.n_machines();
    let horizon = instance.horizon;
    let dup = instance.economics.max_maint_per_period;
    let rows = n_real + 1;
    let cols = horizon * dup;

    let expand = |src: &Array2<f64>| {
        let mut out = Array2::zeros((rows, cols));
        for m in 0..n_real {
            for c in 0..cols {
                out[[m, c]] = src[[m, c / dup]];
            }
        }
        out
    };

    let chi_pre = expand(&costs.pre);
    let chi_corr = expand(&costs.corr);
    let chi_idle = expand(&costs.idle);
    let chi = expand(&costs.total);
    let y = expand(&y_mt);

    let mut site = Vec::with_capacity(rows);
    site.extend(instance.machines.iter().map(|m| m.site));
    site.push(0);

    let mut aux_t = Vec::with_capacity(cols);
    let mut aux_j = Vec::with_capacity(cols);
    for c in 0..cols {
        aux_t.push((c / dup + 1) as f64 / horizon as f64);
        aux_j.push((c % dup + 1) as f64 / dup as f64);
    }

    FeatureTensor {
        chi,
        y,
        chi_pre,
        chi_corr,
        chi_idle,
        site,
        aux_t,
        aux_j,
        n_real,
        n_idle: 1,
        horizon,
        dup,
    }
}
