//! Named problem configurations.
//!
//! The `L*P*M*` family mirrors the benchmark naming convention (`Lx` sites,
//! `Px` periods, `Mx` machines, three crews per period; `LR` draws the site
//! count per instance). The `D_*` desk presets are small enough for the
//! exact solver to certify optimality, which is what the gap studies need.

use crate::model::{GeneratorConfig, SiteFamily};

/// One named configuration. `seed` is filled in by the caller.
#[derive(Debug, Clone, Copy)]
pub struct Preset {
    pub name: &'static str,
    pub family: SiteFamily,
    pub n_machines: usize,
    pub horizon: usize,
    /// Maintenance crews (slots) per period.
    pub dup: usize,
    pub n_scenarios: usize,
}

/// Scenario count shared by every preset: enough to exercise scenario
/// averaging while keeping desk-scale oracles instant.
const SCENARIOS: usize = 5;

pub const PRESETS: &[Preset] = &[
    // Benchmark scale, three crews per period.
    Preset { name: "L5P10M25", family: SiteFamily::Fixed(5), n_machines: 25, horizon: 10, dup: 3, n_scenarios: SCENARIOS },
    Preset { name: "L5P15M40", family: SiteFamily::Fixed(5), n_machines: 40, horizon: 15, dup: 3, n_scenarios: SCENARIOS },
    Preset { name: "L5P20M50", family: SiteFamily::Fixed(5), n_machines: 50, horizon: 20, dup: 3, n_scenarios: SCENARIOS },
    Preset { name: "L10P10M25", family: SiteFamily::Fixed(10), n_machines: 25, horizon: 10, dup: 3, n_scenarios: SCENARIOS },
    Preset { name: "L10P15M40", family: SiteFamily::Fixed(10), n_machines: 40, horizon: 15, dup: 3, n_scenarios: SCENARIOS },
    Preset { name: "L10P20M50", family: SiteFamily::Fixed(10), n_machines: 50, horizon: 20, dup: 3, n_scenarios: SCENARIOS },
    Preset { name: "LRP15M40", family: SiteFamily::Random, n_machines: 40, horizon: 15, dup: 3, n_scenarios: SCENARIOS },
    Preset { name: "LRP20M50", family: SiteFamily::Random, n_machines: 50, horizon: 20, dup: 3, n_scenarios: SCENARIOS },
    // Desk scale: exact-solver-friendly configurations for gap studies.
    Preset { name: "D_L2P4M6_J2", family: SiteFamily::Fixed(2), n_machines: 6, horizon: 4, dup: 2, n_scenarios: SCENARIOS },
    Preset { name: "D_L3P5M8_J2", family: SiteFamily::Fixed(3), n_machines: 8, horizon: 5, dup: 2, n_scenarios: SCENARIOS },
];

/// Generator configuration for a named preset, or `None` for an unknown
/// name. The returned config carries seed 0; override it per instance.
pub fn preset(name: &str) -> Option<GeneratorConfig> {
    PRESETS.iter().find(|p| p.name == name).map(|p| {
        GeneratorConfig::new(p.family, p.n_machines, p.horizon, p.dup, p.n_scenarios, 0)
    })
}

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.name).collect()
}
