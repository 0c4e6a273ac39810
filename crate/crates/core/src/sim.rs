//! Event-driven simulation of one training round.
//!
//! The round is expanded into a dependency graph of compute and transfer
//! tasks. Each client and the server run one compute task at a time;
//! transfers never queue, even when several share a link. Batch executions
//! proceed in lockstep: the backward phase starts once every cut-layer
//! activation has reached the server, and the next batch starts once the
//! server and every client finished the backward phase. Aggregation itself
//! takes no time.
//!
//! Task durations are derived from the layer profile and scenario directly,
//! so the makespan is an independent check of the analytic delay model.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::io::Write;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::plan::{Plan, PlanError};
use crate::scenario::{ClientId, Endpoint, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Actor {
    Client(ClientId),
    Server,
    Link {
        from: Endpoint,
        to: Endpoint,
    },
    /// Synchronization points; never busy.
    Barrier,
}

impl Actor {
    fn is_compute(self) -> bool {
        matches!(self, Actor::Client(_) | Actor::Server)
    }
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Actor::Client(c) => write!(f, "{c}"),
            Actor::Server => write!(f, "server"),
            Actor::Link { from, to } => write!(f, "{from}->{to}"),
            Actor::Barrier => write!(f, "barrier"),
        }
    }
}

impl Serialize for Actor {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ModelDownload,
    WeakForward,
    ActivationUpload,
    AggregatorForward,
    CutUpload,
    ServerForwardBackward,
    AggregatorBackward,
    GradientDownload,
    WeakBackward,
    ModelUpload,
    Sync,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskId(usize);

#[derive(Debug, Clone, PartialEq)]
struct Task {
    actor: Actor,
    kind: TaskKind,
    batch: Option<u64>,
    duration: f64,
    deps: Vec<TaskId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskRecord {
    pub actor: Actor,
    pub kind: TaskKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch: Option<u64>,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskTrace {
    pub makespan: f64,
    pub tasks: Vec<TaskRecord>,
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("dependency cycle: {unfinished} tasks never became ready")]
    Cycle { unfinished: usize },
    #[error("task {task} depends on unknown task {dep}")]
    UnknownDependency { task: usize, dep: usize },
    #[error("task duration must be finite and >= 0, got {0}")]
    BadDuration(f64),
}

/// Dependency graph of timed tasks.
#[derive(Debug, Clone, Default)]
pub struct TaskGraph {
    tasks: Vec<Task>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ready {
    time: f64,
    actor: Actor,
    kind: TaskKind,
    id: TaskId,
}

impl Eq for Ready {}

impl Ord for Ready {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.actor.cmp(&other.actor))
            .then(self.kind.cmp(&other.kind))
            .then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Ready {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl TaskGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn add(
        &mut self,
        actor: Actor,
        kind: TaskKind,
        batch: Option<u64>,
        duration: f64,
        deps: &[TaskId],
    ) -> TaskId {
        self.tasks.push(Task {
            actor,
            kind,
            batch,
            duration,
            deps: deps.to_vec(),
        });
        TaskId(self.tasks.len() - 1)
    }

    /// Adds a dependency after creation; permits building cyclic graphs.
    pub fn add_dependency(&mut self, task: TaskId, dep: TaskId) {
        self.tasks[task.0].deps.push(dep);
    }

    /// Runs the graph. Ready tasks are dispatched in `(ready time, actor,
    /// kind, id)` order; a compute actor starts a task when it is free.
    pub fn run(&self) -> Result<TaskTrace, SimError> {
        let n = self.tasks.len();
        let mut waiting = vec![0usize; n];
        let mut successors = vec![Vec::new(); n];
        for (i, t) in self.tasks.iter().enumerate() {
            if !(t.duration >= 0.0 && t.duration.is_finite()) {
                return Err(SimError::BadDuration(t.duration));
            }
            for d in &t.deps {
                if d.0 >= n {
                    return Err(SimError::UnknownDependency { task: i, dep: d.0 });
                }
                successors[d.0].push(i);
            }
            waiting[i] = t.deps.len();
        }

        let mut ready_at = vec![0.0_f64; n];
        let mut heap = BinaryHeap::new();
        for (i, t) in self.tasks.iter().enumerate() {
            if waiting[i] == 0 {
                heap.push(Reverse(Ready {
                    time: 0.0,
                    actor: t.actor,
                    kind: t.kind,
                    id: TaskId(i),
                }));
            }
        }

        let mut free_at: BTreeMap<Actor, f64> = BTreeMap::new();
        let mut records = Vec::with_capacity(n);
        while let Some(Reverse(ev)) = heap.pop() {
            let task = &self.tasks[ev.id.0];
            let start = if task.actor.is_compute() {
                ev.time
                    .max(free_at.get(&task.actor).copied().unwrap_or(0.0))
            } else {
                ev.time
            };
            let end = start + task.duration;
            if task.actor.is_compute() {
                free_at.insert(task.actor, end);
            }
            records.push((ev.id, start, end));
            for &succ in &successors[ev.id.0] {
                ready_at[succ] = ready_at[succ].max(end);
                waiting[succ] -= 1;
                if waiting[succ] == 0 {
                    let t = &self.tasks[succ];
                    heap.push(Reverse(Ready {
                        time: ready_at[succ],
                        actor: t.actor,
                        kind: t.kind,
                        id: TaskId(succ),
                    }));
                }
            }
        }
        if records.len() < n {
            return Err(SimError::Cycle {
                unfinished: n - records.len(),
            });
        }

        records.sort_by(|a, b| {
            let (ta, tb) = (&self.tasks[a.0 .0], &self.tasks[b.0 .0]);
            a.1.total_cmp(&b.1)
                .then(ta.actor.cmp(&tb.actor))
                .then(ta.kind.cmp(&tb.kind))
                .then(a.0.cmp(&b.0))
        });
        let makespan = records.iter().map(|r| r.2).fold(0.0, f64::max);
        let tasks = records
            .into_iter()
            .filter(|(id, _, _)| self.tasks[id.0].actor != Actor::Barrier)
            .map(|(id, start, end)| {
                let t = &self.tasks[id.0];
                TaskRecord {
                    actor: t.actor,
                    kind: t.kind,
                    batch: t.batch,
                    start,
                    end,
                }
            })
            .collect();
        Ok(TaskTrace { makespan, tasks })
    }
}

fn link(from: Endpoint, to: Endpoint) -> Actor {
    Actor::Link { from, to }
}

/// Builds the task graph of one round under plan `p`.
pub fn round_graph(s: &Scenario, p: &Plan) -> Result<TaskGraph, SimError> {
    let layers = s.model().layers();
    p.validate(s.client_count(), layers.len())?;
    let (h, v) = (p.h, p.v);
    let sum = |range: std::ops::RangeInclusive<usize>,
               f: fn(&crate::profile::LayerProfile) -> f64|
     -> f64 {
        layers
            .iter()
            .filter(|l| range.contains(&l.index))
            .map(f)
            .sum()
    };
    let weak_flops = sum(1..=h, |l| l.flops_fp);
    let relay_flops = sum(h + 1..=v, |l| l.flops_fp);
    let server_flops = sum(v + 1..=layers.len(), |l| l.flops_fp);
    let weak_bytes = sum(1..=h, |l| l.weight_bytes);
    let relay_bytes = sum(h + 1..=v, |l| l.weight_bytes);
    let act_h = layers[h - 1].act_bytes;
    let act_v = layers[v - 1].act_bytes;

    let clients: Vec<ClientId> = (0..s.client_count()).map(ClientId).collect();
    let server = Endpoint::Server;
    let at = |c: ClientId| Endpoint::Client(c);
    let mut g = TaskGraph::new();

    let downloads: Vec<TaskId> = clients
        .iter()
        .map(|&n| {
            let bytes = if p.is_aggregator(n) {
                weak_bytes + relay_bytes
            } else {
                weak_bytes
            };
            g.add(
                link(server, at(n)),
                TaskKind::ModelDownload,
                None,
                bytes / s.rate(server, at(n)),
                &[],
            )
        })
        .collect();
    let mut gate = g.add(Actor::Barrier, TaskKind::Sync, None, 0.0, &downloads);

    let executions = u64::from(s.epochs_per_round()) * s.batches_per_epoch();
    let mut pooled = vec![0usize; clients.len()];
    for &k in &p.assign {
        pooled[k.0] += 1;
    }
    for q in 0..executions {
        let b = Some(q);
        let uploads: Vec<TaskId> = clients
            .iter()
            .map(|&n| {
                let fwd = g.add(
                    Actor::Client(n),
                    TaskKind::WeakForward,
                    b,
                    weak_flops / s.throughput(n),
                    &[gate],
                );
                let k = p.assign[n.0];
                g.add(
                    link(at(n), at(k)),
                    TaskKind::ActivationUpload,
                    b,
                    act_h / s.rate(at(n), at(k)),
                    &[fwd],
                )
            })
            .collect();
        let mut cut_uploads = Vec::new();
        let mut relay_fwd = BTreeMap::new();
        for &k in &p.aggregators {
            let inbound: Vec<TaskId> = clients
                .iter()
                .filter(|n| p.assign[n.0] == k)
                .map(|n| uploads[n.0])
                .collect();
            let work = pooled[k.0] as f64 * relay_flops / s.throughput(k);
            let fwd = g.add(
                Actor::Client(k),
                TaskKind::AggregatorForward,
                b,
                work,
                &inbound,
            );
            relay_fwd.insert(k, fwd);
            for _ in 0..pooled[k.0] {
                cut_uploads.push(g.add(
                    link(at(k), server),
                    TaskKind::CutUpload,
                    b,
                    act_v / s.rate(at(k), server),
                    &[fwd],
                ));
            }
        }
        let forward_done = g.add(Actor::Barrier, TaskKind::Sync, b, 0.0, &cut_uploads);

        let mut finished = vec![g.add(
            Actor::Server,
            TaskKind::ServerForwardBackward,
            b,
            3.0 * clients.len() as f64 * server_flops / s.server_throughput(),
            &[forward_done],
        )];
        let mut relay_bwd = BTreeMap::new();
        for &k in &p.aggregators {
            let work = 2.0 * pooled[k.0] as f64 * relay_flops / s.throughput(k);
            relay_bwd.insert(
                k,
                g.add(
                    Actor::Client(k),
                    TaskKind::AggregatorBackward,
                    b,
                    work,
                    &[forward_done],
                ),
            );
        }
        for &n in &clients {
            let k = p.assign[n.0];
            let down = g.add(
                link(at(k), at(n)),
                TaskKind::GradientDownload,
                b,
                act_h / s.rate(at(k), at(n)),
                &[relay_bwd[&k]],
            );
            finished.push(g.add(
                Actor::Client(n),
                TaskKind::WeakBackward,
                b,
                2.0 * weak_flops / s.throughput(n),
                &[down],
            ));
        }
        gate = g.add(Actor::Barrier, TaskKind::Sync, b, 0.0, &finished);
    }

    for &n in &clients {
        let bytes = if p.is_aggregator(n) {
            weak_bytes + relay_bytes
        } else {
            weak_bytes
        };
        g.add(
            link(at(n), server),
            TaskKind::ModelUpload,
            None,
            bytes / s.rate(at(n), server),
            &[gate],
        );
    }
    Ok(g)
}

/// Simulates one round under plan `p`.
pub fn simulate_round(s: &Scenario, p: &Plan) -> Result<TaskTrace, SimError> {
    round_graph(s, p)?.run()
}

impl TaskTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    /// Gantt-style CSV: actor, kind, batch, start, end.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["actor", "kind", "batch", "start", "end"])?;
        for t in &self.tasks {
            let kind = serde_json::to_value(t.kind).expect("kind serializes");
            w.write_record([
                t.actor.to_string(),
                kind.as_str().unwrap_or_default().to_string(),
                t.batch.map(|b| b.to_string()).unwrap_or_default(),
                t.start.to_string(),
                t.end.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
