//! Exhaustive reference search for small instances and the planner-vs-oracle
//! comparison.
//!
//! The search covers every admissible cut layer, every aggregator layer below
//! it, every aggregator subset up to a size cap and every assignment of the
//! remaining clients to the chosen aggregators. As in the planner, at least
//! one client is left without an aggregator role.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::delay::{DelayBreakdown, Evaluator};
use crate::plan::{check_layers, Plan, PlanError};
use crate::planner::{self, better, feasible_cut_layers, PlannerConfig, PlannerError};
use crate::scenario::{ClientId, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleBudget {
    pub max_clients: usize,
    pub max_aggregator_set_size: usize,
    /// Refuse to start when the configuration count estimate exceeds this.
    pub max_configs: u64,
}

impl Default for OracleBudget {
    fn default() -> Self {
        OracleBudget {
            max_clients: 8,
            max_aggregator_set_size: 3,
            max_configs: 20_000_000,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("oracle budget values must be positive")]
    InvalidBudget,
    #[error("oracle needs at least 2 clients, scenario has {0}")]
    TooFewClients(usize),
    #[error("oracle budget exceeded: {clients} clients > max_clients {max}")]
    TooManyClients { clients: usize, max: usize },
    #[error("oracle budget exceeded: estimated {estimate} configurations > guard {guard}")]
    BudgetExceeded { estimate: u128, guard: u64 },
    #[error("no feasible (h, v): every candidate in {candidates:?} violates 2 < v < L={layers}")]
    Infeasible {
        candidates: Vec<usize>,
        layers: usize,
    },
    #[error("aggregator set is empty or names an unknown client")]
    BadAggregators,
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub plan: Plan,
    pub delay: DelayBreakdown,
    pub configs_evaluated: u64,
}

fn binomial(n: usize, k: usize) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Largest aggregator set searched: the cap, leaving at least one client
/// without an aggregator role.
pub fn aggregator_set_limit(n: usize, cap: usize) -> usize {
    cap.min(n.saturating_sub(1)).max(1)
}

/// Assignments per `(h, v)` pair with up to `cap` aggregators among `n` clients.
pub fn assignments_per_layer_pair(n: usize, cap: usize) -> u128 {
    (1..=aggregator_set_limit(n, cap))
        .map(|k| binomial(n, k).saturating_mul((k as u128).saturating_pow((n - k) as u32)))
        .fold(0u128, u128::saturating_add)
}

/// Number of configurations [`exhaustive_best`] would evaluate.
pub fn estimate(s: &Scenario, candidates: &[usize], b: &OracleBudget) -> u128 {
    let pairs: u128 = feasible_cut_layers(candidates, s.model().layer_count())
        .iter()
        .map(|&v| (v - 2) as u128)
        .sum();
    pairs.saturating_mul(assignments_per_layer_pair(
        s.client_count(),
        b.max_aggregator_set_size,
    ))
}

fn check_budget(
    s: &Scenario,
    candidates: &[usize],
    b: &OracleBudget,
) -> Result<Vec<usize>, OracleError> {
    if b.max_clients == 0 || b.max_aggregator_set_size == 0 || b.max_configs == 0 {
        return Err(OracleError::InvalidBudget);
    }
    let n = s.client_count();
    if n < 2 {
        return Err(OracleError::TooFewClients(n));
    }
    if n > b.max_clients {
        return Err(OracleError::TooManyClients {
            clients: n,
            max: b.max_clients,
        });
    }
    let layers = s.model().layer_count();
    let cut_layers = feasible_cut_layers(candidates, layers);
    if cut_layers.is_empty() {
        return Err(OracleError::Infeasible {
            candidates: candidates.to_vec(),
            layers,
        });
    }
    let estimate = estimate(s, candidates, b);
    if estimate > u128::from(b.max_configs) {
        return Err(OracleError::BudgetExceeded {
            estimate,
            guard: b.max_configs,
        });
    }
    Ok(cut_layers)
}

/// Advances `subset` to the next `k`-combination of `0..n` in lexicographic
/// order; false when exhausted.
fn next_combination(subset: &mut [usize], n: usize) -> bool {
    let k = subset.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if subset[i] < n - k + i {
            subset[i] += 1;
            for j in i + 1..k {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Best assignment for a fixed aggregator set, found by enumerating every
/// mapping of non-aggregators onto aggregators.
struct AssignmentSearch<'e, 'a> {
    eval: &'e mut Evaluator<'a>,
    evaluated: u64,
}

impl AssignmentSearch<'_, '_> {
    /// Returns the best assignment (lowest delay, first in odometer order).
    fn run(&mut self, n: usize, aggregators: &[ClientId]) -> (Vec<ClientId>, DelayBreakdown) {
        let mut assign = vec![aggregators[0]; n];
        let mut free = Vec::with_capacity(n);
        for (i, slot) in assign.iter_mut().enumerate() {
            if aggregators.iter().any(|k| k.0 == i) {
                *slot = ClientId(i);
            } else {
                free.push(i);
            }
        }
        let mut digits = vec![0usize; free.len()];
        let mut best: Option<(Vec<ClientId>, DelayBreakdown)> = None;
        loop {
            for (d, &c) in digits.iter().zip(&free) {
                assign[c] = aggregators[*d];
            }
            let delay = self.eval.evaluate(&assign);
            self.evaluated += 1;
            if best.as_ref().is_none_or(|(_, b)| delay.t_round < b.t_round) {
                best = Some((assign.clone(), delay));
            }
            // odometer: last free client varies fastest
            let mut pos = digits.len();
            loop {
                if pos == 0 {
                    return best.expect("at least one assignment");
                }
                pos -= 1;
                digits[pos] += 1;
                if digits[pos] < aggregators.len() {
                    break;
                }
                digits[pos] = 0;
            }
        }
    }
}

/// Globally best configuration within the budget. Ties are broken as in the
/// planner: lower delay, then lower `v`, `h`, aggregator count; remaining ties
/// keep the first configuration in enumeration order.
pub fn exhaustive_best(
    s: &Scenario,
    candidates: &[usize],
    b: &OracleBudget,
) -> Result<OracleResult, OracleError> {
    let cut_layers = check_budget(s, candidates, b)?;
    let n = s.client_count();
    let mut best: Option<(Plan, DelayBreakdown)> = None;
    let mut evaluated = 0u64;
    for &v in &cut_layers {
        for h in 2..v {
            let mut eval = Evaluator::new(s, h, v);
            let mut search = AssignmentSearch {
                eval: &mut eval,
                evaluated: 0,
            };
            for k in 1..=aggregator_set_limit(n, b.max_aggregator_set_size) {
                let mut subset: Vec<usize> = (0..k).collect();
                loop {
                    let aggregators: Vec<ClientId> = subset.iter().map(|&i| ClientId(i)).collect();
                    let (assign, delay) = search.run(n, &aggregators);
                    let candidate = Plan::new(h, v, aggregators, assign);
                    if best
                        .as_ref()
                        .is_none_or(|(p, d)| better(delay.t_round, &candidate, d.t_round, p))
                    {
                        best = Some((candidate, delay));
                    }
                    if !next_combination(&mut subset, n) {
                        break;
                    }
                }
            }
            evaluated += search.evaluated;
        }
    }
    let (plan, delay) = best.expect("budget check guarantees a feasible pair");
    Ok(OracleResult {
        plan,
        delay,
        configs_evaluated: evaluated,
    })
}

/// Optimal assignment for fixed `(h, v)` and aggregator set.
pub fn best_assignment(
    s: &Scenario,
    h: usize,
    v: usize,
    aggregators: &[ClientId],
    b: &OracleBudget,
) -> Result<OracleResult, OracleError> {
    check_layers(h, v, s.model().layer_count())?;
    let n = s.client_count();
    if n > b.max_clients {
        return Err(OracleError::TooManyClients {
            clients: n,
            max: b.max_clients,
        });
    }
    let mut aggs = aggregators.to_vec();
    aggs.sort();
    aggs.dedup();
    if aggs.is_empty() || aggs.iter().any(|k| k.0 >= n) {
        return Err(OracleError::BadAggregators);
    }
    let estimate = (aggs.len() as u128).saturating_pow((n - aggs.len()) as u32);
    if estimate > u128::from(b.max_configs) {
        return Err(OracleError::BudgetExceeded {
            estimate,
            guard: b.max_configs,
        });
    }
    let mut eval = Evaluator::new(s, h, v);
    let mut search = AssignmentSearch {
        eval: &mut eval,
        evaluated: 0,
    };
    let (assign, delay) = search.run(n, &aggs);
    let evaluated = search.evaluated;
    Ok(OracleResult {
        plan: Plan::new(h, v, aggs, assign),
        delay,
        configs_evaluated: evaluated,
    })
}

/// Runs `f` repeatedly until `min_total` has elapsed and returns the mean
/// wall time of one run together with the last result.
pub fn time_repeated<T>(min_total: Duration, mut f: impl FnMut() -> T) -> (Duration, T) {
    let start = Instant::now();
    let mut runs = 0u32;
    loop {
        let out = f();
        runs += 1;
        let elapsed = start.elapsed();
        if elapsed >= min_total {
            return (elapsed / runs, out);
        }
    }
}

/// Planner-vs-oracle comparison for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub seed: u64,
    #[serde(rename = "N")]
    pub n: usize,
    pub oracle_t: f64,
    pub heuristic_t: f64,
    pub suboptimality_pct: f64,
    pub oracle_ms: f64,
    pub heuristic_ms: f64,
    pub speedup: f64,
}

/// Full comparison outcome, including the two plans and the searched space.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub row: Comparison,
    pub oracle: OracleResult,
    pub heuristic: planner::Decision,
}

/// Minimum measured wall time per side; short runs are repeated and averaged.
pub const MIN_TIMING: Duration = Duration::from_millis(20);

/// Compares the planner against the oracle on one scenario. Both run
/// single-threaded on the calling thread, and the planner's aggregator count
/// is held to the oracle's subset-size cap so both search the same space.
pub fn compare(
    s: &Scenario,
    candidates: &[usize],
    cfg: &PlannerConfig,
    b: &OracleBudget,
    seed: u64,
) -> Result<ComparisonReport, OracleError> {
    check_budget(s, candidates, b)?;
    let cfg = PlannerConfig {
        aggregator_cap: Some(cfg.aggregator_cap.map_or(b.max_aggregator_set_size, |c| {
            c.min(b.max_aggregator_set_size)
        })),
        ..*cfg
    };
    let (h_time, heuristic) = time_repeated(MIN_TIMING, || planner::plan(s, candidates, &cfg));
    let heuristic = heuristic?;
    let (o_time, oracle) = time_repeated(MIN_TIMING, || exhaustive_best(s, candidates, b));
    let oracle = oracle?;
    let oracle_t = oracle.delay.t_round;
    let heuristic_t = heuristic.delay.t_round;
    let oracle_ms = o_time.as_secs_f64() * 1e3;
    let heuristic_ms = h_time.as_secs_f64() * 1e3;
    Ok(ComparisonReport {
        row: Comparison {
            seed,
            n: s.client_count(),
            oracle_t,
            heuristic_t,
            suboptimality_pct: (heuristic_t - oracle_t) / oracle_t * 100.0,
            oracle_ms,
            heuristic_ms,
            speedup: oracle_ms / heuristic_ms,
        },
        oracle,
        heuristic,
    })
}
