//! Hand-built and generator-backed instances shared by the unit tests.

use ndarray::{Array2, Array3};

use crate::model::{
    generate_instance, EconomicParams, GeneratorConfig, Instance, MachineSpec, SiteFamily,
    SurvivalParams,
};

/// Fully explicit instance for worked examples: every matrix is given, not
/// drawn. `limit` and `demand` fill their matrices uniformly.
pub(crate) struct ManualInstance {
    pub horizon: usize,
    pub n_sites: u32,
    pub j: usize,
    pub idle_penalty: f64,
    pub demand_penalty: f64,
    pub travel_cost: f64,
    /// Site per machine; length sets the machine count.
    pub sites: Vec<u32>,
    /// Corrective cost per machine.
    pub corrective: Vec<f64>,
    /// `failures[s][m]`, 1-based periods with `horizon + 1` = no failure.
    pub failures: Vec<Vec<usize>>,
    pub limit: f64,
    pub demand: f64,
    /// Dynamic maintenance cost rows, `dmc_rows[m][t]`.
    pub dmc_rows: Vec<Vec<f64>>,
}

impl Default for ManualInstance {
    fn default() -> Self {
        Self {
            horizon: 1,
            n_sites: 0, // 0 = derive from the site list
            j: 1,
            idle_penalty: 0.0,
            demand_penalty: 0.0,
            travel_cost: 0.0,
            sites: vec![],
            corrective: vec![],
            failures: vec![],
            limit: 0.0,
            demand: 0.0,
            dmc_rows: vec![],
        }
    }
}

impl ManualInstance {
    pub fn build(self) -> Instance {
        let m = self.sites.len();
        let t = self.horizon;
        let s = self.failures.len();
        assert_eq!(self.corrective.len(), m);
        assert_eq!(self.dmc_rows.len(), m);

        let n_sites = if self.n_sites > 0 {
            self.n_sites
        } else {
            self.sites.iter().copied().max().unwrap_or(1).max(1)
        };
        let machines = (0..m)
            .map(|i| MachineSpec {
                id: i,
                site: self.sites[i],
                preventive_cost: 0.0,
                corrective_cost: self.corrective[i],
                survival: SurvivalParams::new(2.0, t as f64, 0.0),
                nominal_rate: 1.0,
            })
            .collect();

        let mut dmc = Array2::zeros((m, t));
        for (mi, row) in self.dmc_rows.iter().enumerate() {
            assert_eq!(row.len(), t);
            for (ti, &v) in row.iter().enumerate() {
                dmc[[mi, ti]] = v;
            }
        }

        let instance = Instance {
            n_sites,
            horizon: t,
            economics: EconomicParams {
                idle_penalty: self.idle_penalty,
                demand_penalty: self.demand_penalty,
                travel_cost: self.travel_cost,
                max_maint_per_period: self.j,
            },
            machines,
            scenarios: crate::model::ScenarioSet {
                failure_time: self.failures,
                production_limit: Array3::from_elem((s, m, t), self.limit),
            },
            demand: Array2::from_elem((m, t), self.demand),
            dmc,
            seed: 0,
        };
        instance.validate().expect("manual test instance must be valid");
        instance
    }
}

/// Small generated instance (M=5, T=4, J=2, L=3, 6 scenarios).
pub(crate) fn desk_instance(seed: u64) -> Instance {
    generate_instance(&GeneratorConfig::new(SiteFamily::Fixed(3), 5, 4, 2, 6, seed)).unwrap()
}

/// Tiny generated instance (M=3, T=3, J=1, L=2, 4 scenarios): the largest
/// size where exhaustive enumeration is instant.
pub(crate) fn micro_instance(seed: u64) -> Instance {
    generate_instance(&GeneratorConfig::new(SiteFamily::Fixed(2), 3, 3, 1, 4, seed)).unwrap()
}
