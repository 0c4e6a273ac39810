//! Analytic round delay and per-round communication volume.
//!
//! A round is model download (`t1`), `E * Q` batch executions (`t2` each) and
//! model upload (`t3 = t1`). A batch execution is a forward pass over the
//! slowest client-aggregator path (`t_fp`) followed by the backward pass
//! (`t_bp`), where server-side work overlaps with the local-loss backward path.

use serde::{Deserialize, Serialize};

use crate::plan::{Plan, PlanError};
use crate::scenario::{ClientId, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DelayBreakdown {
    pub t1: f64,
    pub t_fp: f64,
    pub t_s: f64,
    pub t_bp: f64,
    pub t2: f64,
    pub t3: f64,
    pub t_round: f64,
    pub overhead_bytes: f64,
}

/// One CSV/JSON row of a decision and its delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayRow {
    pub h: usize,
    pub v: usize,
    pub lambda: f64,
    pub t1: f64,
    pub t_fp: f64,
    pub t_s: f64,
    pub t_bp: f64,
    pub t2: f64,
    pub t3: f64,
    pub t_round: f64,
    pub overhead_bytes: f64,
}

impl DelayBreakdown {
    pub fn row(&self, plan: &Plan) -> DelayRow {
        DelayRow {
            h: plan.h,
            v: plan.v,
            lambda: plan.lambda(),
            t1: self.t1,
            t_fp: self.t_fp,
            t_s: self.t_s,
            t_bp: self.t_bp,
            t2: self.t2,
            t3: self.t3,
            t_round: self.t_round,
            overhead_bytes: self.overhead_bytes,
        }
    }
}

/// Layer-sum constants for one `(h, v)` pair.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StageCosts {
    /// FLOPs of layers `1..=h`.
    pub client_flops: f64,
    /// FLOPs of layers `h+1..=v`, per client.
    pub agg_flops: f64,
    /// FLOPs of layers `v+1..=L`, per client.
    pub server_flops: f64,
    /// Weight bytes of layers `1..=h`.
    pub weak_model_bytes: f64,
    /// Weight bytes of layers `1..=v`.
    pub agg_model_bytes: f64,
    pub act_h: f64,
    pub act_v: f64,
    /// `E * Q`.
    pub batch_executions: f64,
}

impl StageCosts {
    pub fn new(s: &Scenario, h: usize, v: usize) -> Self {
        let m = s.model();
        StageCosts {
            client_flops: m.flops_between(1, h),
            agg_flops: m.flops_between(h + 1, v),
            server_flops: m.flops_between(v + 1, m.layer_count()),
            weak_model_bytes: m.weights_between(1, h),
            agg_model_bytes: m.weights_between(1, v),
            act_h: m.act_at(h),
            act_v: m.act_at(v),
            batch_executions: f64::from(s.epochs_per_round()) * s.batches_per_epoch() as f64,
        }
    }
}

/// Delay terms of one client on its forward and backward paths.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PathTerms {
    pub fp: f64,
    pub bp: f64,
}

/// Forward and backward path of client `n` served by `k`, with `pooled`
/// clients sharing `k`.
pub(crate) fn path_terms(
    s: &Scenario,
    c: &StageCosts,
    n: ClientId,
    k: ClientId,
    pooled: usize,
) -> PathTerms {
    let p_n = s.throughput(n);
    let p_k = s.throughput(k);
    let pooled_flops = pooled as f64 * c.agg_flops;
    let fp = c.client_flops / p_n
        + c.act_h / s.client_rate(n, k)
        + pooled_flops / p_k
        + c.act_v / s.server_rate(k);
    let bp = 2.0 * pooled_flops / p_k + c.act_h / s.client_rate(k, n) + 2.0 * c.client_flops / p_n;
    PathTerms { fp, bp }
}

/// Evaluates many assignments for one `(h, v)` without re-deriving layer sums.
pub(crate) struct Evaluator<'a> {
    s: &'a Scenario,
    costs: StageCosts,
    counts: Vec<usize>,
}

impl<'a> Evaluator<'a> {
    pub fn new(s: &'a Scenario, h: usize, v: usize) -> Self {
        Evaluator {
            s,
            costs: StageCosts::new(s, h, v),
            counts: vec![0; s.client_count()],
        }
    }

    pub fn costs(&self) -> &StageCosts {
        &self.costs
    }

    /// `assign` must already be a valid assignment for the scenario.
    pub fn evaluate(&mut self, assign: &[ClientId]) -> DelayBreakdown {
        let s = self.s;
        let c = &self.costs;
        self.counts.iter_mut().for_each(|x| *x = 0);
        for k in assign {
            self.counts[k.0] += 1;
        }

        let mut t1 = 0.0_f64;
        let mut t_fp = 0.0_f64;
        let mut client_bp = 0.0_f64;
        let mut model_bytes = 0.0;
        let mut relay_transfers = 0usize;
        for (i, &k) in assign.iter().enumerate() {
            let n = ClientId(i);
            let bytes = if k == n {
                c.agg_model_bytes
            } else {
                c.weak_model_bytes
            };
            t1 = t1.max(bytes / s.server_rate(n));
            model_bytes += bytes;
            if k != n {
                relay_transfers += 1;
            }
            let path = path_terms(s, c, n, k, self.counts[k.0]);
            t_fp = t_fp.max(path.fp);
            client_bp = client_bp.max(path.bp);
        }
        let n_clients = assign.len() as f64;
        let t_s = 3.0 * n_clients * c.server_flops / s.server_throughput();
        let t_bp = t_s.max(client_bp);
        let t2 = t_fp + t_bp;
        let t3 = t1;
        let t_round = t1 + c.batch_executions * t2 + t3;
        let per_batch = 2.0 * relay_transfers as f64 * c.act_h + n_clients * c.act_v;
        let overhead_bytes = 2.0 * model_bytes + c.batch_executions * per_batch;
        DelayBreakdown {
            t1,
            t_fp,
            t_s,
            t_bp,
            t2,
            t3,
            t_round,
            overhead_bytes,
        }
    }
}

fn checked(s: &Scenario, p: &Plan) -> Result<DelayBreakdown, PlanError> {
    p.validate(s.client_count(), s.model().layer_count())?;
    Ok(Evaluator::new(s, p.h, p.v).evaluate(&p.assign))
}

/// Phase-1 model download delay.
pub fn t1(s: &Scenario, p: &Plan) -> Result<f64, PlanError> {
    checked(s, p).map(|d| d.t1)
}

/// Forward-pass delay of one batch execution.
pub fn t_fp(s: &Scenario, p: &Plan) -> Result<f64, PlanError> {
    checked(s, p).map(|d| d.t_fp)
}

/// Server-side forward and backward delay of one batch execution.
pub fn t_s(s: &Scenario, p: &Plan) -> Result<f64, PlanError> {
    checked(s, p).map(|d| d.t_s)
}

/// Backward-pass delay of one batch execution.
pub fn t_bp(s: &Scenario, p: &Plan) -> Result<f64, PlanError> {
    checked(s, p).map(|d| d.t_bp)
}

/// Full breakdown of one training round.
pub fn round_delay(s: &Scenario, p: &Plan) -> Result<DelayBreakdown, PlanError> {
    checked(s, p)
}

/// Payload bytes moved over the network in one round.
pub fn round_overhead(s: &Scenario, p: &Plan) -> Result<f64, PlanError> {
    checked(s, p).map(|d| d.overhead_bytes)
}
