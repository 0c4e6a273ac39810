//! Training configuration: partition layers and client-to-aggregator map.
//!
//! A [`Plan`] stores the assignment compactly. [`AssignmentTensor`] is the
//! expanded binary form `x[n][k][l]`, which is 1 iff client `n`'s layer `l`
//! is trained on aggregator `k`; it exists to check the placement constraints
//! independently of the compact form.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::ClientId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("aggregator layer h={h} must satisfy 1 < h < v={v}")]
    AggregatorLayerOutOfRange { h: usize, v: usize },
    #[error("cut layer v={v} must satisfy 2 < v < L={layers}")]
    CutLayerOutOfRange { v: usize, layers: usize },
    #[error("cut layer v={v} is not in the admissible set")]
    CutLayerNotAdmissible { v: usize },
    #[error("assignment covers {got} clients, scenario has {expected}")]
    AssignmentLength { expected: usize, got: usize },
    #[error("plan has no aggregators")]
    NoAggregators,
    #[error("aggregator {0} is listed twice")]
    DuplicateAggregator(ClientId),
    #[error("{0} is not a client of this scenario")]
    UnknownClient(ClientId),
    #[error("{client} is assigned to {target}, which is not an aggregator")]
    NotAnAggregator { client: ClientId, target: ClientId },
    #[error("aggregator {aggregator} must be assigned to itself, not {target}")]
    AggregatorNotSelfAssigned {
        aggregator: ClientId,
        target: ClientId,
    },
    #[error("x[{client}][{aggregator}][{layer}] = {value} is not binary")]
    NonBinary {
        client: ClientId,
        aggregator: ClientId,
        layer: usize,
        value: u8,
    },
    #[error("{client} is assigned to {count} aggregators at layer h+1")]
    MultipleAggregators { client: ClientId, count: usize },
    #[error("{client} has no aggregator")]
    Unassigned { client: ClientId },
    #[error("{client}'s aggregator-side block on {aggregator} is split at layer {layer}")]
    SplitBlock {
        client: ClientId,
        aggregator: ClientId,
        layer: usize,
    },
    #[error("{client} has layer {layer} placed on {aggregator}, outside h+1..=v")]
    OutsideBlock {
        client: ClientId,
        aggregator: ClientId,
        layer: usize,
    },
    #[error("tensor shape {got:?} does not match {expected:?}")]
    TensorShape {
        expected: (usize, usize),
        got: (usize, usize),
    },
}

/// Aggregator layer `h`, cut layer `v` and the client-to-aggregator map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub h: usize,
    pub v: usize,
    /// Sorted, unique.
    pub aggregators: Vec<ClientId>,
    /// `assign[n]` is client `n`'s aggregator.
    pub assign: Vec<ClientId>,
}

impl Plan {
    /// Builds a plan; the aggregator list is sorted and deduplicated.
    pub fn new(
        h: usize,
        v: usize,
        aggregators: impl IntoIterator<Item = ClientId>,
        assign: Vec<ClientId>,
    ) -> Self {
        let aggregators: BTreeSet<ClientId> = aggregators.into_iter().collect();
        Plan {
            h,
            v,
            aggregators: aggregators.into_iter().collect(),
            assign,
        }
    }

    pub fn client_count(&self) -> usize {
        self.assign.len()
    }

    /// Fraction of clients acting as aggregators.
    pub fn lambda(&self) -> f64 {
        self.aggregators.len() as f64 / self.assign.len().max(1) as f64
    }

    pub fn is_aggregator(&self, c: ClientId) -> bool {
        self.assign.get(c.0) == Some(&c)
    }

    /// Clients assigned to `k`, in id order.
    pub fn members(&self, k: ClientId) -> impl Iterator<Item = ClientId> + '_ {
        self.assign
            .iter()
            .enumerate()
            .filter(move |(_, a)| **a == k)
            .map(|(n, _)| ClientId(n))
    }

    /// Checks the layer ranges and assignment consistency for `n_clients` and `layers`.
    pub fn validate(&self, n_clients: usize, layers: usize) -> Result<(), PlanError> {
        check_layers(self.h, self.v, layers)?;
        if self.assign.len() != n_clients {
            return Err(PlanError::AssignmentLength {
                expected: n_clients,
                got: self.assign.len(),
            });
        }
        if self.aggregators.is_empty() {
            return Err(PlanError::NoAggregators);
        }
        let mut seen = BTreeSet::new();
        for &k in &self.aggregators {
            if k.0 >= n_clients {
                return Err(PlanError::UnknownClient(k));
            }
            if !seen.insert(k) {
                return Err(PlanError::DuplicateAggregator(k));
            }
        }
        for &k in &self.aggregators {
            let target = self.assign[k.0];
            if target != k {
                return Err(PlanError::AggregatorNotSelfAssigned {
                    aggregator: k,
                    target,
                });
            }
        }
        for (n, &k) in self.assign.iter().enumerate() {
            if k.0 >= n_clients {
                return Err(PlanError::UnknownClient(k));
            }
            if !seen.contains(&k) {
                return Err(PlanError::NotAnAggregator {
                    client: ClientId(n),
                    target: k,
                });
            }
        }
        Ok(())
    }

    /// As [`Plan::validate`], additionally requiring `v` to be admissible.
    pub fn validate_with_candidates(
        &self,
        n_clients: usize,
        layers: usize,
        candidates: &[usize],
    ) -> Result<(), PlanError> {
        self.validate(n_clients, layers)?;
        if candidates.contains(&self.v) {
            Ok(())
        } else {
            Err(PlanError::CutLayerNotAdmissible { v: self.v })
        }
    }

    /// Expands to the binary placement tensor over `layers` layers.
    pub fn expand(&self, layers: usize) -> AssignmentTensor {
        let n = self.assign.len();
        let mut x = AssignmentTensor::zeros(n, layers);
        for (client, &k) in self.assign.iter().enumerate() {
            for l in (self.h + 1)..=self.v.min(layers) {
                x.set(ClientId(client), k, l, 1);
            }
        }
        x
    }
}

pub(crate) fn check_layers(h: usize, v: usize, layers: usize) -> Result<(), PlanError> {
    if !(v > 2 && v < layers) {
        return Err(PlanError::CutLayerOutOfRange { v, layers });
    }
    if !(h > 1 && h < v) {
        return Err(PlanError::AggregatorLayerOutOfRange { h, v });
    }
    Ok(())
}

/// Dense `x[n][k][l]` with `l` 1-based. Values are bytes so that non-binary
/// entries can be represented and rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentTensor {
    clients: usize,
    layers: usize,
    data: Vec<u8>,
}

impl AssignmentTensor {
    pub fn zeros(clients: usize, layers: usize) -> Self {
        AssignmentTensor {
            clients,
            layers,
            data: vec![0; clients * clients * layers],
        }
    }

    fn idx(&self, n: ClientId, k: ClientId, l: usize) -> usize {
        assert!(n.0 < self.clients && k.0 < self.clients && (1..=self.layers).contains(&l));
        (n.0 * self.clients + k.0) * self.layers + (l - 1)
    }

    pub fn get(&self, n: ClientId, k: ClientId, l: usize) -> u8 {
        self.data[self.idx(n, k, l)]
    }

    pub fn set(&mut self, n: ClientId, k: ClientId, l: usize, value: u8) {
        let i = self.idx(n, k, l);
        self.data[i] = value;
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.clients, self.layers)
    }

    /// Checks binarity, single-aggregator, contiguous-block and completeness
    /// constraints for partition layers `h`, `v`.
    pub fn check(&self, h: usize, v: usize) -> Result<(), PlanError> {
        check_layers(h, v, self.layers)?;
        let ids = (0..self.clients).map(ClientId);
        for n in ids.clone() {
            for k in ids.clone() {
                for l in 1..=self.layers {
                    let value = self.get(n, k, l);
                    if value > 1 {
                        return Err(PlanError::NonBinary {
                            client: n,
                            aggregator: k,
                            layer: l,
                            value,
                        });
                    }
                }
            }
        }
        for n in ids.clone() {
            let owners: Vec<ClientId> = ids
                .clone()
                .filter(|&k| self.get(n, k, h + 1) == 1)
                .collect();
            match owners.len() {
                0 => return Err(PlanError::Unassigned { client: n }),
                1 => {}
                count => return Err(PlanError::MultipleAggregators { client: n, count }),
            }
            for k in ids.clone() {
                let head = self.get(n, k, h + 1);
                for l in 1..=self.layers {
                    let value = self.get(n, k, l);
                    let inside = l > h && l <= v;
                    if inside && value != head {
                        return Err(PlanError::SplitBlock {
                            client: n,
                            aggregator: k,
                            layer: l,
                        });
                    }
                    if !inside && value == 1 {
                        return Err(PlanError::OutsideBlock {
                            client: n,
                            aggregator: k,
                            layer: l,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Recovers the compact plan, rejecting any constraint violation.
    pub fn decode(&self, h: usize, v: usize) -> Result<Plan, PlanError> {
        self.check(h, v)?;
        let assign: Vec<ClientId> = (0..self.clients)
            .map(|n| {
                (0..self.clients)
                    .map(ClientId)
                    .find(|&k| self.get(ClientId(n), k, h + 1) == 1)
                    .expect("checked")
            })
            .collect();
        let aggregators: BTreeSet<ClientId> = assign.iter().copied().collect();
        let plan = Plan::new(h, v, aggregators, assign);
        plan.validate(self.clients, self.layers)?;
        Ok(plan)
    }
}
