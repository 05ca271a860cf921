//! Exact solvers for the slot-sequencing problem: exhaustive depth-first
//! enumeration for tiny instances and depth-first branch-and-bound with an
//! admissible remaining-cost bound for desk-scale ones.
//!
//! Both solvers accumulate cost left-to-right with the same step function, so
//! a proven branch-and-bound run returns the bit-identical optimal cost the
//! exhaustive solver finds.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::Schedule;
use crate::features::FeatureTensor;
use crate::model::EconomicParams;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("search space {space:.3e} exceeds the node budget {budget:.3e}; use solve_bnb")]
    BudgetExceeded { space: f64, budget: f64 },
    #[error("no feasible schedule: {n_real} machines but only {n_slots} slots")]
    NoFeasibleSchedule { n_real: usize, n_slots: usize },
}

/// Search limits. Defaults: 5e7 nodes, 600 s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub node_budget: u64,
    pub time_budget: Duration,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { node_budget: 50_000_000, time_budget: Duration::from_secs(600) }
    }
}

/// Solver outcome; `proven` is false when a budget cut the search short and
/// `cost` is only the best incumbent found.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub schedule: Schedule,
    pub cost: f64,
    pub proven: bool,
    pub nodes: u64,
    pub ms: f64,
}

/// The JSON shape the CLI emits for one solved instance.
#[derive(Debug, Serialize, Deserialize)]
pub struct OracleResultJson {
    pub cost: f64,
    pub seq: Vec<usize>,
    pub proven: bool,
    pub nodes: u64,
    pub ms: f64,
}

impl OracleResult {
    pub fn to_json(&self) -> OracleResultJson {
        OracleResultJson {
            cost: self.cost,
            seq: self.schedule.seq.clone(),
            proven: self.proven,
            nodes: self.nodes,
            ms: self.ms,
        }
    }
}

/// Incremental cost of choosing `row` at `col` with the crew at `crew`:
/// the cell cost plus travel if the crew moves. Returns the new crew site.
#[inline]
fn step_cost(
    features: &FeatureTensor,
    economics: &EconomicParams,
    row: usize,
    col: usize,
    crew: u32,
) -> (f64, u32) {
    let site = features.site[row];
    let mut cost = features.chi[[row, col]] + features.y[[row, col]];
    if site != crew {
        cost += economics.travel_cost;
    }
    (cost, site)
}

struct Dfs<'a> {
    features: &'a FeatureTensor,
    economics: &'a EconomicParams,
    n_slots: usize,
    idle: usize,
    /// Ascending-cost child order per (remaining-slot) column is recomputed
    /// cheaply; this holds the per-row minimum of `chi + y` over columns
    /// `c..`, used by the lower bound.
    suffix_min: Vec<Vec<f64>>,
    best_cost: f64,
    best_seq: Vec<usize>,
    nodes: u64,
    node_budget: u64,
    deadline: Option<Instant>,
    /// Set when a budget stopped the search before the tree was exhausted.
    cut_short: bool,
    /// Absolute slack added to the incumbent before pruning so float
    /// round-off can never discard the true optimum.
    prune_eps: f64,
    use_bound: bool,
    seq: Vec<usize>,
    chosen: Vec<bool>,
}

impl Dfs<'_> {
    /// `suffix_min[c][m]` = min over columns `>= c` of `chi + y` for row `m`.
    fn build_suffix_min(features: &FeatureTensor) -> Vec<Vec<f64>> {
        let n_slots = features.n_cols();
        let n_real = features.n_real;
        let mut table = vec![vec![f64::INFINITY; n_real]; n_slots + 1];
        for c in (0..n_slots).rev() {
            for m in 0..n_real {
                let here = features.chi[[m, c]] + features.y[[m, c]];
                table[c][m] = here.min(table[c + 1][m]);
            }
        }
        table
    }

    /// Admissible remaining-cost bound: every unplaced machine must still pay
    /// at least its cheapest remaining cell; travel and idle cost >= 0.
    fn lower_bound(&self, next_col: usize) -> f64 {
        let mins = &self.suffix_min[next_col];
        self.chosen
            .iter()
            .enumerate()
            .filter(|(_, &done)| !done)
            .map(|(m, _)| mins[m])
            .sum()
    }

    fn out_of_budget(&mut self) -> bool {
        if self.nodes >= self.node_budget {
            self.cut_short = true;
            return true;
        }
        if let Some(deadline) = self.deadline {
            // An Instant read per node would dominate tiny searches; sample.
            if self.nodes % 4096 == 0 && Instant::now() >= deadline {
                self.cut_short = true;
                return true;
            }
        }
        false
    }

    fn search(&mut self, col: usize, partial: f64, crew: u32, remaining_real: usize) {
        if col == self.n_slots {
            // Exact cost ties resolve to the lexicographically smallest
            // sequence. Tied leaves are never pruned (their prefixes sit
            // within the epsilon slack), so both search modes land on the
            // same argmin even when several schedules share the optimum.
            if partial < self.best_cost
                || (partial == self.best_cost && self.seq < self.best_seq)
            {
                self.best_cost = partial;
                self.best_seq = self.seq.clone();
                self.prune_eps = 1e-9 * (1.0 + self.best_cost.abs());
            }
            return;
        }
        if self.out_of_budget() {
            return;
        }
        self.nodes += 1;

        let remaining_steps = self.n_slots - col;
        let forced_real = remaining_real == remaining_steps;

        // Candidate children: real unchosen rows, plus idle unless every
        // remaining slot is needed for a real machine.
        let mut children: Vec<(f64, usize, u32)> = Vec::with_capacity(remaining_real + 1);
        for m in 0..self.features.n_real {
            if !self.chosen[m] {
                let (c, site) = step_cost(self.features, self.economics, m, col, crew);
                children.push((c, m, site));
            }
        }
        if !forced_real {
            let (c, site) = step_cost(self.features, self.economics, self.idle, col, crew);
            children.push((c, self.idle, site));
        }
        if self.use_bound {
            children.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }

        for (cost, row, site) in children {
            let sub_partial = partial + cost;
            let real = row != self.idle;
            if self.use_bound {
                let lb = {
                    if real {
                        self.chosen[row] = true;
                    }
                    let lb = self.lower_bound(col + 1);
                    if real {
                        self.chosen[row] = false;
                    }
                    lb
                };
                if sub_partial + lb > self.best_cost + self.prune_eps {
                    continue;
                }
            } else if sub_partial >= self.best_cost && self.best_seq.len() == self.n_slots {
                // Exhaustive mode may still drop provably-not-smaller
                // extensions: costs only grow, and the first-found optimum is
                // already the lexicographically smallest.
                continue;
            }
            if real {
                self.chosen[row] = true;
            }
            self.seq.push(row);
            self.search(col + 1, sub_partial, site, remaining_real - usize::from(real));
            self.seq.pop();
            if real {
                self.chosen[row] = false;
            }
            if self.cut_short {
                return;
            }
        }
    }
}

fn run_dfs(
    features: &FeatureTensor,
    economics: &EconomicParams,
    config: &OracleConfig,
    use_bound: bool,
    incumbent: Option<(Vec<usize>, f64)>,
) -> Result<OracleResult, OracleError> {
    let n_slots = features.n_cols();
    if features.n_real > n_slots {
        return Err(OracleError::NoFeasibleSchedule { n_real: features.n_real, n_slots });
    }
    let start = Instant::now();
    let (best_seq, best_cost) = incumbent.unwrap_or((Vec::new(), f64::INFINITY));
    let mut dfs = Dfs {
        features,
        economics,
        n_slots,
        idle: features.idle_row(),
        suffix_min: Dfs::build_suffix_min(features),
        prune_eps: 1e-9 * (1.0 + if best_cost.is_finite() { best_cost.abs() } else { 0.0 }),
        best_cost,
        best_seq,
        nodes: 0,
        node_budget: config.node_budget,
        deadline: Some(start + config.time_budget),
        cut_short: false,
        use_bound,
        seq: Vec::with_capacity(n_slots),
        chosen: vec![false; features.n_real],
    };
    dfs.search(0, 0.0, 0, features.n_real);
    Ok(OracleResult {
        schedule: Schedule::new(dfs.best_seq),
        cost: dfs.best_cost,
        proven: !dfs.cut_short,
        nodes: dfs.nodes,
        ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Enumerates every feasible sequence in lexicographic order and returns the
/// provably optimal one (ties resolved to the lexicographically smallest).
/// Refuses instances whose raw sequence space exceeds `node_budget`.
pub fn solve_exhaustive(
    features: &FeatureTensor,
    economics: &EconomicParams,
    node_budget: u64,
) -> Result<OracleResult, OracleError> {
    let space = ((features.n_real + 1) as f64).powi(features.n_cols() as i32);
    if space > node_budget as f64 {
        return Err(OracleError::BudgetExceeded { space, budget: node_budget as f64 });
    }
    let config = OracleConfig {
        node_budget: u64::MAX,
        time_budget: Duration::from_secs(24 * 3600),
    };
    run_dfs(features, economics, &config, false, None)
}

/// Greedy incumbent: at each slot pick the cheapest feasible row (ties to the
/// lowest index), honoring the forced-completion rule.
pub fn greedy_schedule(
    features: &FeatureTensor,
    economics: &EconomicParams,
) -> Option<(Schedule, f64)> {
    let n_slots = features.n_cols();
    if features.n_real > n_slots {
        return None;
    }
    let idle = features.idle_row();
    let mut chosen = vec![false; features.n_real];
    let mut seq = Vec::with_capacity(n_slots);
    let mut crew = 0u32;
    let mut total = 0.0;
    let mut remaining_real = features.n_real;
    for col in 0..n_slots {
        let forced_real = remaining_real == n_slots - col;
        let mut best: Option<(f64, usize, u32)> = None;
        for m in 0..features.n_real {
            if !chosen[m] {
                let (c, site) = step_cost(features, economics, m, col, crew);
                if best.as_ref().is_none_or(|b| c < b.0) {
                    best = Some((c, m, site));
                }
            }
        }
        if !forced_real {
            let (c, site) = step_cost(features, economics, idle, col, crew);
            if best.as_ref().is_none_or(|b| c < b.0) {
                best = Some((c, idle, site));
            }
        }
        let (c, row, site) = best?;
        if row != idle {
            chosen[row] = true;
            remaining_real -= 1;
        }
        total += c;
        crew = site;
        seq.push(row);
    }
    Some((Schedule::new(seq), total))
}

/// Depth-first branch-and-bound, seeded with the greedy incumbent. Children
/// expand in ascending incremental-cost order (ties by row index); a branch
/// is cut only when its admissible bound exceeds the incumbent by more than a
/// float-safety margin, so a `proven` result is exactly optimal and carries
/// the same lexicographically-smallest argmin [`solve_exhaustive`] returns.
pub fn solve_bnb(
    features: &FeatureTensor,
    economics: &EconomicParams,
    config: &OracleConfig,
) -> Result<OracleResult, OracleError> {
    let incumbent = greedy_schedule(features, economics).map(|(s, c)| (s.seq, c));
    run_dfs(features, economics, config, true, incumbent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{check_feasible_shape, sequence_cost};
    use crate::features::assemble_features;
    use crate::model::{generate_instance, GeneratorConfig, SiteFamily};
    use crate::testkit::{micro_instance, ManualInstance};

    /// Independent brute force: enumerate ALL row sequences, filter by the
    /// public feasibility check, cost via the public evaluator.
    fn brute_force(features: &FeatureTensor, economics: &EconomicParams) -> (Vec<usize>, f64) {
        let rows = features.n_rows();
        let slots = features.n_cols();
        let mut best = (Vec::new(), f64::INFINITY);
        let mut seq = vec![0usize; slots];
        loop {
            let schedule = Schedule::new(seq.clone());
            if check_feasible_shape(&schedule, features.n_real, features.horizon, features.dup)
                .is_empty()
            {
                let c = sequence_cost(&schedule, features, economics).unwrap().total;
                if c < best.1 {
                    best = (seq.clone(), c);
                }
            }
            // Odometer increment over base `rows`.
            let mut i = slots;
            loop {
                if i == 0 {
                    return best;
                }
                i -= 1;
                seq[i] += 1;
                if seq[i] < rows {
                    break;
                }
                seq[i] = 0;
            }
        }
    }

    #[test]
    fn single_slot_single_machine_is_forced() {
        let inst = ManualInstance {
            horizon: 1,
            sites: vec![1],
            corrective: vec![9.0],
            failures: vec![vec![2]],
            dmc_rows: vec![vec![4.0]],
            idle_penalty: 1.0,
            ..ManualInstance::default()
        }
        .build();
        let f = assemble_features(&inst);
        let r = solve_exhaustive(&f, &inst.economics, 1000).unwrap();
        assert_eq!(r.schedule.seq, vec![0]);
        assert_eq!(r.cost, 5.0); // dmc 4 + one period idle
        assert!(r.proven);
    }

    #[test]
    fn zero_travel_one_site_reduces_to_separable_assignment() {
        let inst = ManualInstance {
            horizon: 2,
            sites: vec![1, 1],
            corrective: vec![30.0, 40.0],
            failures: vec![vec![3, 3]],
            dmc_rows: vec![vec![4.0, 6.0], vec![5.0, 1.0]],
            travel_cost: 0.0,
            ..ManualInstance::default()
        }
        .build();
        let f = assemble_features(&inst);
        let r = solve_exhaustive(&f, &inst.economics, 1000).unwrap();
        // min(4 + 1, 6 + 5) over the two assignments.
        assert_eq!(r.cost, 5.0);
        assert_eq!(r.schedule.seq, vec![0, 1]);
    }

    #[test]
    fn tied_optima_resolve_to_the_same_lexicographic_argmin() {
        // Two interchangeable machines: [0, 1] and [1, 0] cost exactly the
        // same, and the greedy incumbent is the lexicographically larger one,
        // so without the leaf tie-break the two solvers would disagree.
        let inst = ManualInstance {
            horizon: 2,
            sites: vec![1, 1],
            corrective: vec![30.0, 30.0],
            failures: vec![vec![3, 3]],
            dmc_rows: vec![vec![5.0, 5.0], vec![4.0, 4.0]],
            ..ManualInstance::default()
        }
        .build();
        let f = assemble_features(&inst);
        let (greedy, _) = greedy_schedule(&f, &inst.economics).unwrap();
        assert_eq!(greedy.seq, vec![1, 0]);

        let full = solve_exhaustive(&f, &inst.economics, 1000).unwrap();
        let pruned = solve_bnb(&f, &inst.economics, &OracleConfig::default()).unwrap();
        assert_eq!(full.cost, 9.0);
        assert_eq!(pruned.cost, 9.0);
        assert_eq!(full.schedule.seq, vec![0, 1]);
        assert_eq!(pruned.schedule.seq, full.schedule.seq);
    }

    #[test]
    fn exhaustive_matches_independent_brute_force() {
        let cfg = GeneratorConfig::new(SiteFamily::Fixed(2), 5, 3, 2, 3, 33);
        let inst = generate_instance(&cfg).unwrap();
        let f = assemble_features(&inst);
        let ours = solve_exhaustive(&f, &inst.economics, 10_000_000).unwrap();
        let (_, want) = brute_force(&f, &inst.economics);
        assert!((ours.cost - want).abs() <= 1e-9 * want.abs());
        assert!(ours.proven);
    }

    #[test]
    fn budget_precondition_is_enforced() {
        let inst = micro_instance(0);
        let f = assemble_features(&inst);
        match solve_exhaustive(&f, &inst.economics, 10) {
            Err(OracleError::BudgetExceeded { .. }) => {}
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn bnb_agrees_with_exhaustive_bit_for_bit() {
        for seed in 0..25 {
            let inst = micro_instance(seed);
            let f = assemble_features(&inst);
            let ex = solve_exhaustive(&f, &inst.economics, 1_000_000).unwrap();
            let bb = solve_bnb(&f, &inst.economics, &OracleConfig::default()).unwrap();
            assert!(bb.proven);
            assert_eq!(bb.cost, ex.cost, "seed {seed}");
        }
    }

    #[test]
    fn full_board_matches_permutation_enumeration() {
        // M = T * J: every feasible sequence is a permutation of machines.
        let cfg = GeneratorConfig::new(SiteFamily::Fixed(2), 6, 3, 2, 3, 7);
        let inst = generate_instance(&cfg).unwrap();
        let f = assemble_features(&inst);
        let economics = inst.economics;

        fn permutations(items: Vec<usize>) -> Vec<Vec<usize>> {
            if items.len() <= 1 {
                return vec![items];
            }
            let mut out = Vec::new();
            for i in 0..items.len() {
                let mut rest = items.clone();
                let head = rest.remove(i);
                for mut tail in permutations(rest) {
                    tail.insert(0, head);
                    out.push(tail);
                }
            }
            out
        }

        let mut want = f64::INFINITY;
        for perm in permutations((0..6).collect()) {
            let c = sequence_cost(&Schedule::new(perm), &f, &economics).unwrap().total;
            want = want.min(c);
        }
        let r = solve_bnb(&f, &economics, &OracleConfig::default()).unwrap();
        assert!(r.proven);
        assert!((r.cost - want).abs() <= 1e-9 * want.abs());
    }

    #[test]
    fn raising_travel_cost_never_lowers_the_optimum() {
        for seed in [2, 4, 8] {
            let inst = micro_instance(seed);
            let f = assemble_features(&inst);
            let mut economics = inst.economics;
            let mut prev = 0.0;
            for delta in [0.0, 5.0, 20.0, 80.0] {
                economics.travel_cost = delta;
                let r = solve_bnb(&f, &economics, &OracleConfig::default()).unwrap();
                assert!(r.proven);
                assert!(r.cost >= prev - 1e-12, "seed {seed} delta {delta}");
                prev = r.cost;
            }
        }
    }

    #[test]
    fn identical_inputs_give_identical_sequences() {
        let inst = micro_instance(11);
        let f = assemble_features(&inst);
        let a = solve_bnb(&f, &inst.economics, &OracleConfig::default()).unwrap();
        let b = solve_bnb(&f, &inst.economics, &OracleConfig::default()).unwrap();
        assert_eq!(a.schedule, b.schedule);
        assert_eq!(a.cost, b.cost);
        assert_eq!(a.nodes, b.nodes);
    }

    #[test]
    fn node_budget_exhaustion_returns_unproven_incumbent() {
        let cfg = GeneratorConfig::new(SiteFamily::Fixed(3), 8, 5, 2, 4, 3);
        let inst = generate_instance(&cfg).unwrap();
        let f = assemble_features(&inst);
        let config = OracleConfig { node_budget: 50, ..OracleConfig::default() };
        let r = solve_bnb(&f, &inst.economics, &config).unwrap();
        assert!(!r.proven);
        assert!(r.cost.is_finite(), "greedy incumbent must survive the cut");
        assert!(check_feasible_shape(&r.schedule, f.n_real, f.horizon, f.dup).is_empty());
    }

    #[test]
    fn greedy_schedule_is_feasible_and_bounds_the_optimum() {
        for seed in 0..10 {
            let inst = micro_instance(seed);
            let f = assemble_features(&inst);
            let (schedule, cost) = greedy_schedule(&f, &inst.economics).unwrap();
            assert!(check_feasible_shape(&schedule, f.n_real, f.horizon, f.dup).is_empty());
            let opt = solve_exhaustive(&f, &inst.economics, 1_000_000).unwrap();
            assert!(cost >= opt.cost - 1e-12);
            let replay = sequence_cost(&schedule, &f, &inst.economics).unwrap().total;
            assert!((cost - replay).abs() <= 1e-9 * replay.abs().max(1.0));
        }
    }
}
