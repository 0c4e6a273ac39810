#![allow(dead_code)]

use std::sync::Arc;

use hsfl_core::profile::LayerProfile;
use hsfl_core::scenario::LinkRates;
use hsfl_core::{ClientId, ModelProfile, Plan, Scenario};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn tiny_model() -> Arc<ModelProfile> {
    let layers = (1..=4)
        .map(|index| LayerProfile {
            index,
            flops_fp: 100.0,
            weight_bytes: 1000.0,
            act_bytes: 50.0,
        })
        .collect();
    Arc::new(ModelProfile::new("tiny", 1, layers).unwrap())
}

pub fn tiny() -> Scenario {
    Scenario::new(
        vec![(100.0, 1), (200.0, 1)],
        1000.0,
        LinkRates::uniform(2, 50.0),
        1,
        tiny_model(),
    )
    .unwrap()
}

pub fn p0() -> Plan {
    Plan::new(2, 3, [ClientId(1)], vec![ClientId(1), ClientId(1)])
}

pub fn random_model(rng: &mut impl Rng, layers: usize, batch: u32) -> Arc<ModelProfile> {
    let layers = (1..=layers)
        .map(|index| LayerProfile {
            index,
            flops_fp: rng.gen_range(1e6..5e9),
            weight_bytes: rng.gen_range(0.0..2e7),
            act_bytes: rng.gen_range(1e3..5e6),
        })
        .collect();
    Arc::new(ModelProfile::new("random", batch, layers).unwrap())
}

/// Clients with mixed throughputs and dataset sizes over random links.
pub fn random_scenario(rng: &mut impl Rng, clients: usize, model: Arc<ModelProfile>) -> Scenario {
    let entries = (0..clients)
        .map(|_| (rng.gen_range(1e9..2e10), rng.gen_range(1..400u64)))
        .collect();
    let links = LinkRates::random(clients, 1e6, 4e6, rng);
    let epochs = rng.gen_range(1..4);
    Scenario::new(entries, rng.gen_range(5e10..2e11), links, epochs, model).unwrap()
}

/// Any structurally valid plan: random partition layers, aggregator set and assignment.
pub fn random_plan(rng: &mut impl Rng, clients: usize, layers: usize) -> Plan {
    let v = rng.gen_range(3..layers);
    let h = rng.gen_range(2..v);
    let k = rng.gen_range(1..=clients);
    let mut ids: Vec<ClientId> = (0..clients).map(ClientId).collect();
    ids.shuffle(rng);
    let aggregators: Vec<ClientId> = ids[..k].to_vec();
    let assign = (0..clients)
        .map(|n| {
            let c = ClientId(n);
            if aggregators.contains(&c) {
                c
            } else {
                *aggregators.choose(rng).unwrap()
            }
        })
        .collect();
    Plan::new(h, v, aggregators, assign)
}

/// Raw numbers describing one round, kept apart from the library types.
pub struct RawSystem {
    pub f: Vec<f64>,
    pub w: Vec<f64>,
    pub g: Vec<f64>,
    pub p: Vec<f64>,
    pub p_s: f64,
    /// `(N+1) x (N+1)`, index `N` is the server; diagonal unused.
    pub r: Vec<Vec<f64>>,
    pub epochs: f64,
    pub batches: f64,
}

impl RawSystem {
    pub fn from_scenario(s: &Scenario) -> Self {
        let m = s.model();
        let n = s.client_count();
        let mut r = s.links().to_matrix();
        assert_eq!(r.len(), n + 1);
        for (i, row) in r.iter_mut().enumerate() {
            row[i] = f64::INFINITY;
        }
        let batch = f64::from(m.batch_size());
        RawSystem {
            f: m.layers().iter().map(|l| l.flops_fp).collect(),
            w: m.layers().iter().map(|l| l.weight_bytes).collect(),
            g: m.layers().iter().map(|l| l.act_bytes).collect(),
            p: s.clients().iter().map(|c| c.throughput).collect(),
            p_s: s.server_throughput(),
            r,
            epochs: f64::from(s.epochs_per_round()),
            batches: s
                .clients()
                .iter()
                .map(|c| (c.dataset_size as f64 / batch).ceil())
                .fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawDelay {
    pub t1: f64,
    pub t_fp: f64,
    pub t_s: f64,
    pub t_bp: f64,
    pub t2: f64,
    pub t3: f64,
    pub t_round: f64,
    pub overhead: f64,
}

/// Round delay evaluated term by term from the defining sums, with
/// 1-based inclusive layer ranges and an explicit loop per client.
pub fn formula_round(sys: &RawSystem, h: usize, v: usize, assign: &[usize]) -> RawDelay {
    let n_clients = sys.p.len();
    let server = n_clients;
    let sum = |xs: &[f64], lo: usize, hi: usize| -> f64 { (lo..=hi).map(|l| xs[l - 1]).sum() };
    let layers = sys.f.len();
    let wc_flops = sum(&sys.f, 1, h);
    let wa_flops = sum(&sys.f, h + 1, v);
    let ws_flops = sum(&sys.f, v + 1, layers);
    let wc_bytes = sum(&sys.w, 1, h);
    let wa_bytes = sum(&sys.w, h + 1, v);
    let g_h = sys.g[h - 1];
    let g_v = sys.g[v - 1];
    let count = |k: usize| assign.iter().filter(|&&a| a == k).count() as f64;
    let is_agg = |n: usize| assign[n] == n;
    let link = |a: usize, b: usize| if a == b { 0.0 } else { 1.0 / sys.r[a][b] };

    let mut t1: f64 = 0.0;
    let mut t_fp: f64 = 0.0;
    let mut bp_clients: f64 = 0.0;
    let mut downloaded = 0.0;
    let mut non_self = 0.0;
    for (n, &k) in assign.iter().enumerate() {
        let bytes = wc_bytes + if is_agg(n) { wa_bytes } else { 0.0 };
        downloaded += bytes;
        t1 = t1.max(bytes * link(server, n));
        let fp = wc_flops / sys.p[n]
            + g_h * link(n, k)
            + count(k) * wa_flops / sys.p[k]
            + g_v * link(k, server);
        t_fp = t_fp.max(fp);
        let bp =
            2.0 * count(k) * wa_flops / sys.p[k] + g_h * link(k, n) + 2.0 * wc_flops / sys.p[n];
        bp_clients = bp_clients.max(bp);
        if k != n {
            non_self += 1.0;
        }
    }
    let t_s = 3.0 * n_clients as f64 * ws_flops / sys.p_s;
    let t_bp = t_s.max(bp_clients);
    let t2 = t_fp + t_bp;
    let t3 = t1;
    let eq = sys.epochs * sys.batches;
    RawDelay {
        t1,
        t_fp,
        t_s,
        t_bp,
        t2,
        t3,
        t_round: t1 + eq * t2 + t3,
        overhead: 2.0 * downloaded + eq * (2.0 * g_h * non_self + n_clients as f64 * g_v),
    }
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}
