//! Random-instance generators: the fixed-site-count family and the
//! random-site-count family, with configurable cost and lifetime
//! distributions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    compute_dynamic_cost, sample_demand, sample_scenarios, EconomicParams, Instance, MachineSpec,
    ModelError, SurvivalModel, SurvivalParams,
};
use ndarray::Array2;

/// How the number of manufacturing sites is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SiteFamily {
    /// Fixed number of sites, identical across instances.
    Fixed(u32),
    /// Per-instance uniform draw over `{1, ..., 10}`.
    Random,
}

/// Upper bound of the [`SiteFamily::Random`] draw; also the policy's site
/// vocabulary ceiling.
pub const MAX_RANDOM_SITES: u32 = 10;

/// Uniform ranges for per-machine parameters. Each pair is an inclusive
/// `(low, high)` interval; a degenerate pair pins the value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostDistributions {
    /// Preventive maintenance cost `C^p`.
    pub preventive: (f64, f64),
    /// `C^f` as a multiple of the machine's own `C^p` (kept >= 1 so the
    /// preventive <= corrective invariant holds by construction).
    pub corrective_ratio: (f64, f64),
    /// Nominal production rate, units/period.
    pub rate: (f64, f64),
    /// Weibull shape `k`.
    pub shape: (f64, f64),
    /// Weibull scale as a fraction of the horizon, so failures stay relevant
    /// at every problem size.
    pub scale_frac: (f64, f64),
    /// Observation time as a fraction of the machine's scale: how far into
    /// its life the fleet already is when the schedule is drawn.
    pub observe_frac: (f64, f64),
}

impl Default for CostDistributions {
    fn default() -> Self {
        Self {
            preventive: (50.0, 150.0),
            corrective_ratio: (2.0, 5.0),
            rate: (5.0, 15.0),
            shape: (1.5, 3.0),
            scale_frac: (0.5, 1.5),
            observe_frac: (0.0, 0.5),
        }
    }
}

/// Everything needed to draw one instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub family: SiteFamily,
    pub n_machines: usize,
    pub horizon: usize,
    /// Maintenance slots per period (`J`).
    pub max_maint_per_period: usize,
    pub n_scenarios: usize,
    pub seed: u64,
    pub idle_penalty: f64,
    pub demand_penalty: f64,
    pub travel_cost: f64,
    /// Demand sigma as a multiple of the rate; 0 pins demand at the rate.
    pub demand_sigma: f64,
    pub costs: CostDistributions,
}

impl GeneratorConfig {
    /// A config with the crate's documented default economics and
    /// distributions; callers override fields as needed.
    pub fn new(
        family: SiteFamily,
        n_machines: usize,
        horizon: usize,
        max_maint_per_period: usize,
        n_scenarios: usize,
        seed: u64,
    ) -> Self {
        Self {
            family,
            n_machines,
            horizon,
            max_maint_per_period,
            n_scenarios,
            seed,
            idle_penalty: 10.0,
            demand_penalty: 2.0,
            travel_cost: 20.0,
            demand_sigma: 0.1,
            costs: CostDistributions::default(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn check(&self) -> Result<(), ModelError> {
        let bad = |what: &str| {
            Err(ModelError::InvalidParameters { what: what.to_string() })
        };
        if self.n_machines == 0 {
            return bad("n_machines must be >= 1");
        }
        if self.horizon == 0 || self.max_maint_per_period == 0 {
            return bad("horizon and J must be >= 1");
        }
        if self.n_scenarios == 0 {
            return bad("n_scenarios must be >= 1");
        }
        if let SiteFamily::Fixed(l) = self.family {
            if l == 0 {
                return bad("fixed site count must be >= 1");
            }
        }
        if self.n_machines > self.horizon * self.max_maint_per_period {
            return Err(ModelError::InfeasibleConfig {
                n_machines: self.n_machines,
                slots: self.horizon * self.max_maint_per_period,
            });
        }
        let ranges = [
            ("preventive", self.costs.preventive, 0.0),
            ("corrective_ratio", self.costs.corrective_ratio, 1.0),
            ("rate", self.costs.rate, f64::MIN_POSITIVE),
            ("shape", self.costs.shape, f64::MIN_POSITIVE),
            ("scale_frac", self.costs.scale_frac, f64::MIN_POSITIVE),
            ("observe_frac", self.costs.observe_frac, 0.0),
        ];
        for (name, (lo, hi), min) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo >= min) {
                return Err(ModelError::InvalidParameters {
                    what: format!("{name} range ({lo}, {hi})"),
                });
            }
        }
        if !(self.idle_penalty >= 0.0 && self.demand_penalty >= 0.0 && self.travel_cost >= 0.0) {
            return bad("penalties and travel cost must be >= 0");
        }
        if !(self.demand_sigma >= 0.0) {
            return bad("demand_sigma must be >= 0");
        }
        Ok(())
    }
}

fn unif<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Draws a complete instance from `cfg.seed`. The draw order is fixed (sites,
/// then per-machine parameters, then scenarios, then demand) so a seed pins
/// every byte of the result.
pub fn generate_instance(cfg: &GeneratorConfig) -> Result<Instance, ModelError> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let n_sites = match cfg.family {
        SiteFamily::Fixed(l) => l,
        SiteFamily::Random => rng.random_range(1..=MAX_RANDOM_SITES),
    };

    let mut machines = Vec::with_capacity(cfg.n_machines);
    for id in 0..cfg.n_machines {
        let site = rng.random_range(1..=n_sites);
        let preventive_cost = unif(&mut rng, cfg.costs.preventive);
        let corrective_cost = preventive_cost * unif(&mut rng, cfg.costs.corrective_ratio);
        let nominal_rate = unif(&mut rng, cfg.costs.rate);
        let shape = unif(&mut rng, cfg.costs.shape);
        let scale = cfg.horizon as f64 * unif(&mut rng, cfg.costs.scale_frac);
        let observe_time = scale * unif(&mut rng, cfg.costs.observe_frac);
        machines.push(MachineSpec {
            id,
            site,
            preventive_cost,
            corrective_cost,
            survival: SurvivalParams::new(shape, scale, observe_time),
            nominal_rate,
        });
    }

    let scenarios = sample_scenarios(&machines, cfg.horizon, cfg.n_scenarios, &mut rng);
    let demand = sample_demand(&machines, cfg.horizon, cfg.demand_sigma, &mut rng);

    let mut dmc = Array2::zeros((cfg.n_machines, cfg.horizon));
    for (mi, mach) in machines.iter().enumerate() {
        for t in 1..=cfg.horizon {
            dmc[[mi, t - 1]] = compute_dynamic_cost(
                &mach.survival,
                mach.preventive_cost,
                mach.corrective_cost,
                t as f64,
                mach.survival.integration_cap(),
            )?;
        }
    }

    let instance = Instance {
        n_sites,
        horizon: cfg.horizon,
        economics: EconomicParams {
            idle_penalty: cfg.idle_penalty,
            demand_penalty: cfg.demand_penalty,
            travel_cost: cfg.travel_cost,
            max_maint_per_period: cfg.max_maint_per_period,
        },
        machines,
        scenarios,
        demand,
        dmc,
        seed: cfg.seed,
    };
    instance.validate()?;
    Ok(instance)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(seed: u64) -> GeneratorConfig {
        GeneratorConfig::new(SiteFamily::Fixed(3), 5, 4, 2, 6, seed)
    }

    #[test]
    fn equal_seeds_give_identical_instances() {
        let a = generate_instance(&tiny(42)).unwrap();
        let b = generate_instance(&tiny(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_give_different_demand() {
        let a = generate_instance(&tiny(1)).unwrap();
        let b = generate_instance(&tiny(2)).unwrap();
        assert_ne!(a.demand, b.demand);
    }

    #[test]
    fn random_family_covers_all_site_counts_uniformly() {
        let mut counts = [0usize; 10];
        let n = 1000;
        for seed in 0..n {
            let cfg = GeneratorConfig::new(SiteFamily::Random, 4, 4, 2, 2, seed);
            let inst = generate_instance(&cfg).unwrap();
            assert!((1..=10).contains(&inst.n_sites));
            counts[(inst.n_sites - 1) as usize] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let freq = c as f64 / n as f64;
            assert!(
                (freq - 0.10).abs() <= 0.03,
                "L={} drawn with frequency {freq}",
                i + 1
            );
        }
    }

    #[test]
    fn overfull_config_is_rejected() {
        let cfg = GeneratorConfig::new(SiteFamily::Fixed(5), 25, 2, 1, 2, 0);
        match generate_instance(&cfg) {
            Err(ModelError::InfeasibleConfig { n_machines: 25, slots: 2 }) => {}
            other => panic!("expected InfeasibleConfig, got {other:?}"),
        }
    }

    #[test]
    fn generated_instances_validate_and_respect_site_bounds() {
        for seed in 0..20 {
            let inst = generate_instance(&tiny(seed)).unwrap();
            inst.validate().unwrap();
            assert!(inst.machines.iter().all(|m| m.site >= 1 && m.site <= inst.n_sites));
            assert!(inst
                .machines
                .iter()
                .all(|m| m.preventive_cost <= m.corrective_cost));
        }
    }

    #[test]
    fn dmc_matrix_matches_direct_recomputation() {
        let inst = generate_instance(&tiny(9)).unwrap();
        for (mi, mach) in inst.machines.iter().enumerate() {
            for t in 1..=inst.horizon {
                let want = compute_dynamic_cost(
                    &mach.survival,
                    mach.preventive_cost,
                    mach.corrective_cost,
                    t as f64,
                    mach.survival.integration_cap(),
                )
                .unwrap();
                assert_eq!(inst.dmc[[mi, t - 1]], want);
            }
        }
    }
}
