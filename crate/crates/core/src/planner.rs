//! Joint selection of the aggregator layer, cut layer and client-to-aggregator
//! assignment.
//!
//! For every admissible cut layer `v` the planner walks the aggregator layer
//! `h` from 2, balancing the slowest aggregator's forward work against the
//! slowest client's forward work. At every visited `h` it tries aggregator
//! counts `ceil(lambda * N)` for `lambda = beta, 2*beta, ...` up to a bound
//! derived from client heterogeneity, nominating the strongest clients and
//! assigning the rest greedily. The lowest-delay configuration seen anywhere
//! is returned.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::delay::{round_delay, DelayBreakdown, Evaluator, StageCosts};
use crate::plan::{Plan, PlanError};
use crate::scenario::{ClientId, Scenario, ScenarioError, SystemChange};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Balance threshold in seconds.
    pub delta: f64,
    /// Aggregator-fraction step `beta`.
    pub lambda_step: f64,
    /// Cap on `h` updates per cut layer; `ceil(log2 L) + 1` when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_h_iterations: Option<usize>,
    /// Upper limit on the aggregator count, applied on top of the
    /// heterogeneity bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregator_cap: Option<usize>,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            delta: 0.5,
            lambda_step: 0.01,
            max_h_iterations: None,
            aggregator_cap: None,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(PlannerError::Config(format!(
                "delta must be > 0, got {}",
                self.delta
            )));
        }
        if !(self.lambda_step > 0.0 && self.lambda_step <= 1.0) {
            return Err(PlannerError::Config(format!(
                "lambda step must be in (0, 1], got {}",
                self.lambda_step
            )));
        }
        if self.max_h_iterations == Some(0) {
            return Err(PlannerError::Config("max_h_iterations must be >= 1".into()));
        }
        if self.aggregator_cap == Some(0) {
            return Err(PlannerError::Config("aggregator cap must be >= 1".into()));
        }
        Ok(())
    }

    pub fn h_iteration_cap(&self, layers: usize) -> usize {
        self.max_h_iterations
            .unwrap_or_else(|| (layers as f64).log2().ceil() as usize + 1)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PlannerError {
    #[error("invalid planner configuration: {0}")]
    Config(String),
    #[error("no candidate cut layers supplied")]
    NoCandidates,
    #[error("planning needs at least 2 clients, scenario has {0}")]
    TooFewClients(usize),
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
    Scenario(#[from] ScenarioError),
}

/// A chosen configuration and the search effort that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub plan: Plan,
    pub delay: DelayBreakdown,
    /// `h` updates summed over cut layers.
    pub iterations: usize,
    /// Full configurations evaluated with the delay model.
    pub evaluated_configs: usize,
    /// Client-aggregator delay estimates made by greedy assignment.
    pub pair_evaluations: u64,
}

/// Serializable decision record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub h: usize,
    pub v: usize,
    pub lambda: f64,
    pub aggregators: Vec<ClientId>,
    pub assignment: Vec<ClientId>,
    pub delay_breakdown: DelayBreakdown,
    pub iterations: usize,
    pub evaluated_configs: usize,
    pub pair_evaluations: u64,
}

impl Decision {
    pub fn lambda(&self) -> f64 {
        self.plan.lambda()
    }

    pub fn record(&self) -> DecisionRecord {
        DecisionRecord {
            h: self.plan.h,
            v: self.plan.v,
            lambda: self.plan.lambda(),
            aggregators: self.plan.aggregators.clone(),
            assignment: self.plan.assign.clone(),
            delay_breakdown: self.delay,
            iterations: self.iterations,
            evaluated_configs: self.evaluated_configs,
            pair_evaluations: self.pair_evaluations,
        }
    }
}

/// Strict "is better" under the shared tie-break: lower delay, then lower
/// `v`, lower `h`, fewer aggregators.
pub(crate) fn better(a_delay: f64, a: &Plan, b_delay: f64, b: &Plan) -> bool {
    match a_delay.total_cmp(&b_delay) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => {
            (a.v, a.h, a.aggregators.len()) < (b.v, b.h, b.aggregators.len())
        }
    }
}

/// Upper bound on the aggregator count for `(h, v)`, from heterogeneity and
/// the ratio of client-side to aggregator-side FLOPs, clamped to `[1, N-1]`.
pub fn max_aggregators(s: &Scenario, h: usize, v: usize) -> usize {
    let n = s.client_count();
    let upper = n.saturating_sub(1).max(1);
    let m = s.model();
    let client = m.flops_between(1, h);
    // the shared range deliberately starts at h, not h + 1
    let shared = m.flops_between(h, v);
    let raw = if shared > 0.0 {
        ((s.heterogeneity() - 1.0) * client / shared).floor()
    } else {
        f64::INFINITY
    };
    if raw.is_nan() || raw < 1.0 {
        1
    } else if raw >= upper as f64 {
        upper
    } else {
        raw as usize
    }
}

/// Distinct aggregator counts visited by the lambda sweep, in sweep order.
pub fn aggregator_counts(max_aggr: usize, n: usize, step: f64) -> Vec<usize> {
    let lambda_max = max_aggr as f64 / n as f64;
    let mut seen = BTreeSet::new();
    let mut counts = Vec::new();
    let mut i = 1usize;
    loop {
        let lambda = i as f64 * step;
        if lambda > lambda_max + 1e-12 {
            break;
        }
        let k = ((lambda * n as f64 - 1e-9).ceil() as usize).clamp(1, max_aggr);
        if seen.insert(k) {
            counts.push(k);
        }
        i += 1;
    }
    if counts.is_empty() {
        // the step overshoots lambda_max; fall back to the bound itself
        counts.push(max_aggr);
    }
    counts
}

/// Running state of greedy assignment for one aggregator.
#[derive(Debug, Clone, Copy)]
struct Slot {
    id: ClientId,
    members: usize,
    /// Largest member-specific part of the forward+backward path.
    worst_member: f64,
}

fn member_cost(s: &Scenario, c: &StageCosts, n: ClientId, k: ClientId) -> f64 {
    3.0 * c.client_flops / s.throughput(n)
        + c.act_h / s.client_rate(n, k)
        + c.act_h / s.client_rate(k, n)
}

fn shared_cost(s: &Scenario, c: &StageCosts, k: ClientId, members: usize) -> f64 {
    3.0 * members as f64 * c.agg_flops / s.throughput(k) + c.act_v / s.server_rate(k)
}

/// Greedy assignment with pre-ranked clients; returns the assignment and the
/// number of pair estimates made.
fn greedy_core(
    s: &Scenario,
    c: &StageCosts,
    ranked: &[ClientId],
    aggregators: &[ClientId],
) -> (Vec<ClientId>, u64) {
    let n = s.client_count();
    let mut assign = vec![ClientId(usize::MAX); n];
    let mut is_agg = vec![false; n];
    let mut slots: Vec<Slot> = aggregators
        .iter()
        .map(|&k| {
            is_agg[k.0] = true;
            assign[k.0] = k;
            Slot {
                id: k,
                members: 1,
                worst_member: member_cost(s, c, k, k),
            }
        })
        .collect();
    // lowest id first among equal estimates
    slots.sort_by_key(|slot| slot.id);
    let mut pairs = 0u64;
    for &client in ranked.iter().filter(|c| !is_agg[c.0]) {
        let mut best: Option<(usize, f64, f64)> = None;
        for (i, slot) in slots.iter().enumerate() {
            pairs += 1;
            let own = member_cost(s, c, client, slot.id);
            let estimate =
                slot.worst_member.max(own) + shared_cost(s, c, slot.id, slot.members + 1);
            if best.is_none_or(|(_, e, _)| estimate < e) {
                best = Some((i, estimate, own));
            }
        }
        let (i, _, own) = best.expect("at least one aggregator");
        let slot = &mut slots[i];
        slot.members += 1;
        slot.worst_member = slot.worst_member.max(own);
        assign[client.0] = slot.id;
    }
    (assign, pairs)
}

/// Assigns every non-aggregator, strongest first, to the aggregator with the
/// smallest resulting pair delay. Aggregators serve themselves.
pub fn greedy_assign(
    s: &Scenario,
    h: usize,
    v: usize,
    aggregators: &[ClientId],
) -> Result<Plan, PlannerError> {
    crate::plan::check_layers(h, v, s.model().layer_count())?;
    if aggregators.is_empty() || aggregators.iter().any(|k| k.0 >= s.client_count()) {
        return Err(PlannerError::BadAggregators);
    }
    let unique: BTreeSet<ClientId> = aggregators.iter().copied().collect();
    let unique: Vec<ClientId> = unique.into_iter().collect();
    let costs = StageCosts::new(s, h, v);
    let (assign, _) = greedy_core(s, &costs, &s.by_throughput_desc(), &unique);
    Ok(Plan::new(h, v, unique, assign))
}

/// How the aggregator count is chosen at each visited `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregatorCount {
    /// Sweep lambda up to the heterogeneity bound.
    Sweep,
    /// Use exactly this many aggregators (clamped to `1..=N`).
    Fixed(usize),
}

/// Runs the full heuristic over the candidate cut layers.
pub fn plan(
    s: &Scenario,
    candidates: &[usize],
    cfg: &PlannerConfig,
) -> Result<Decision, PlannerError> {
    search(s, candidates, cfg, AggregatorCount::Sweep)
}

/// As [`plan`], with the aggregator fraction pinned instead of swept.
pub fn plan_with_lambda(
    s: &Scenario,
    candidates: &[usize],
    cfg: &PlannerConfig,
    lambda: f64,
) -> Result<Decision, PlannerError> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(PlannerError::Config(format!(
            "lambda must be in (0, 1], got {lambda}"
        )));
    }
    let k = (lambda * s.client_count() as f64 - 1e-9).ceil() as usize;
    search(s, candidates, cfg, AggregatorCount::Fixed(k))
}

/// Feasible cut layers among `candidates`, ascending and unique.
pub fn feasible_cut_layers(candidates: &[usize], layers: usize) -> Vec<usize> {
    let set: BTreeSet<usize> = candidates
        .iter()
        .copied()
        .filter(|&v| v > 2 && v < layers)
        .collect();
    set.into_iter().collect()
}

pub fn search(
    s: &Scenario,
    candidates: &[usize],
    cfg: &PlannerConfig,
    count: AggregatorCount,
) -> Result<Decision, PlannerError> {
    cfg.validate()?;
    let n = s.client_count();
    if n < 2 {
        return Err(PlannerError::TooFewClients(n));
    }
    if candidates.is_empty() {
        return Err(PlannerError::NoCandidates);
    }
    let layers = s.model().layer_count();
    let cut_layers = feasible_cut_layers(candidates, layers);
    if cut_layers.is_empty() {
        return Err(PlannerError::Infeasible {
            candidates: candidates.to_vec(),
            layers,
        });
    }
    let ranked = s.by_throughput_desc();
    let cap = cfg.h_iteration_cap(layers);

    let mut best: Option<(Plan, DelayBreakdown)> = None;
    let mut iterations = 0usize;
    let mut evaluated = 0usize;
    let mut pairs = 0u64;

    for &v in &cut_layers {
        let mut h = 2usize;
        let mut visited = BTreeSet::new();
        while visited.len() < cap && visited.insert(h) {
            iterations += 1;
            let mut eval = Evaluator::new(s, h, v);
            let costs = *eval.costs();
            let counts = match count {
                AggregatorCount::Sweep => {
                    let bound =
                        max_aggregators(s, h, v).min(cfg.aggregator_cap.unwrap_or(usize::MAX));
                    aggregator_counts(bound, n, cfg.lambda_step)
                }
                AggregatorCount::Fixed(k) => vec![k.clamp(1, n)],
            };
            let mut best_here: Option<(Plan, DelayBreakdown)> = None;
            for k in counts {
                let aggregators: Vec<ClientId> = ranked[..k].to_vec();
                let (assign, made) = greedy_core(s, &costs, &ranked, &aggregators);
                pairs += made;
                let delay = eval.evaluate(&assign);
                evaluated += 1;
                let candidate = Plan::new(h, v, aggregators, assign);
                if best_here
                    .as_ref()
                    .is_none_or(|(p, d)| better(delay.t_round, &candidate, d.t_round, p))
                {
                    best_here = Some((candidate, delay));
                }
            }
            let (plan_here, delay_here) = best_here.expect("at least one aggregator count");

            let t_aggr = plan_here
                .aggregators
                .iter()
                .map(|&k| plan_here.members(k).count() as f64 * costs.agg_flops / s.throughput(k))
                .fold(0.0, f64::max);
            let t_clients = s
                .clients()
                .iter()
                .map(|c| costs.client_flops / c.throughput)
                .fold(0.0, f64::max);

            if best
                .as_ref()
                .is_none_or(|(p, d)| better(delay_here.t_round, &plan_here, d.t_round, p))
            {
                best = Some((plan_here, delay_here));
            }

            if t_aggr - t_clients <= cfg.delta {
                break;
            }
            let next = if t_aggr > t_clients {
                (h + v - 1).div_ceil(2)
            } else {
                h.div_ceil(2)
            };
            h = next.clamp(2, v - 1);
        }
    }

    let (plan, delay) = best.expect("at least one feasible cut layer");
    Ok(Decision {
        plan,
        delay,
        iterations,
        evaluated_configs: evaluated,
        pair_evaluations: pairs,
    })
}

/// Outcome of re-planning after system changes.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplanOutcome {
    /// Decision on the unchanged scenario.
    pub baseline: Decision,
    /// The baseline plan evaluated on the changed scenario.
    pub fixed: DelayBreakdown,
    /// Fresh heuristic run on the changed scenario.
    pub fresh: Decision,
    /// Configuration to deploy next round: the fresh decision unless the
    /// incumbent plan is strictly faster on the changed system.
    pub chosen: Decision,
    pub kept_incumbent: bool,
}

/// Applies `changes` and plans again from scratch.
pub fn replan(
    s: &Scenario,
    changes: &[SystemChange],
    candidates: &[usize],
    cfg: &PlannerConfig,
) -> Result<ReplanOutcome, PlannerError> {
    let baseline = plan(s, candidates, cfg)?;
    replan_from(s, &baseline, changes, candidates, cfg)
}

/// As [`replan`], reusing an already computed baseline decision.
pub fn replan_from(
    s: &Scenario,
    baseline: &Decision,
    changes: &[SystemChange],
    candidates: &[usize],
    cfg: &PlannerConfig,
) -> Result<ReplanOutcome, PlannerError> {
    let changed = s.apply_changes(changes)?;
    let fixed = round_delay(&changed, &baseline.plan)?;
    let fresh = plan(&changed, candidates, cfg)?;
    let kept_incumbent = fixed.t_round < fresh.delay.t_round;
    let chosen = if kept_incumbent {
        Decision {
            plan: baseline.plan.clone(),
            delay: fixed,
            ..fresh.clone()
        }
    } else {
        fresh.clone()
    };
    Ok(ReplanOutcome {
        baseline: baseline.clone(),
        fixed,
        fresh,
        chosen,
        kept_incumbent,
    })
}
