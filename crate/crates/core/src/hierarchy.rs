//! Two-level aggregation structure: one aggregate series over `m` producers.
//!
//! Every vector in the crate that covers the whole hierarchy is ordered
//! `[aggregate, producer 1, ..., producer m]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for coherence of ingested data, MW.
pub const INGEST_COHERENCE_TOL: f64 = 1e-6;

/// Relative tolerance for values produced through the structure matrix.
pub const CONSTRUCTED_COHERENCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    names: Vec<String>,
    capacities: Vec<f64>,
    total_capacity: f64,
}

impl Hierarchy {
    pub fn new(names: Vec<String>, capacities: Vec<f64>) -> Result<Self> {
        if capacities.is_empty() {
            return Err(Error::Config("hierarchy needs at least one producer".into()));
        }
        if names.len() != capacities.len() {
            return Err(Error::Shape {
                expected: format!("{} names", capacities.len()),
                actual: format!("{} names", names.len()),
            });
        }
        if let Some(bad) = capacities.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
            return Err(Error::Config(format!("capacity must be positive, got {bad}")));
        }
        let total_capacity = capacities.iter().sum();
        Ok(Self {
            names,
            capacities,
            total_capacity,
        })
    }

    /// Producers named `wpp1..wppm`.
    pub fn with_capacities(capacities: Vec<f64>) -> Result<Self> {
        let names = (1..=capacities.len()).map(|i| format!("wpp{i}")).collect();
        Self::new(names, capacities)
    }

    pub fn m(&self) -> usize {
        self.capacities.len()
    }

    /// Number of series including the aggregate.
    pub fn n_series(&self) -> usize {
        self.m() + 1
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn capacities(&self) -> &[f64] {
        &self.capacities
    }

    pub fn total_capacity(&self) -> f64 {
        self.total_capacity
    }

    /// Capacity of series `s` in hierarchy ordering (0 is the aggregate).
    pub fn series_capacity(&self, s: usize) -> f64 {
        if s == 0 {
            self.total_capacity
        } else {
            self.capacities[s - 1]
        }
    }

    /// Series labels in hierarchy ordering.
    pub fn series_labels(&self) -> Vec<String> {
        std::iter::once(AGGREGATE_LABEL.to_string())
            .chain(self.names.iter().cloned())
            .collect()
    }

    /// Stable identity string used to refuse checkpoints trained on another hierarchy.
    pub fn fingerprint(&self) -> String {
        let parts: Vec<String> = self
            .names
            .iter()
            .zip(&self.capacities)
            .map(|(n, c)| format!("{n}={c:?}"))
            .collect();
        format!("m={};{}", self.m(), parts.join(";"))
    }

    /// The `(m+1) x m` structure matrix: a row of ones over the identity.
    pub fn structure_matrix(&self) -> Vec<Vec<f64>> {
        let m = self.m();
        let mut g = vec![vec![1.0; m]];
        g.extend((0..m).map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect()));
        g
    }

    /// `G b`, coherent by construction.
    pub fn aggregate_bottom(&self, bottom: &[f64]) -> Vec<f64> {
        debug_assert_eq!(bottom.len(), self.m());
        aggregate_bottom(bottom)
    }
}

pub const AGGREGATE_LABEL: &str = "aggregate";

/// `G b` for any bottom vector: prepends the sum.
pub fn aggregate_bottom(bottom: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(bottom.len() + 1);
    out.push(bottom.iter().sum());
    out.extend_from_slice(bottom);
    out
}

/// True iff the aggregate entry equals the sum of the bottom entries within `tol` MW.
pub fn is_coherent(v: &[f64], tol: f64) -> bool {
    coherence_gap(v) <= tol
}

pub fn coherence_gap(v: &[f64]) -> f64 {
    match v.split_first() {
        Some((agg, parts)) => (agg - parts.iter().sum::<f64>()).abs(),
        None => 0.0,
    }
}
