//! Scenario-by-scenario reconciliation.
//!
//! Every reconciler maps a base vector `[aggregate, producers...]` to a
//! reconciled bottom-level vector `h`; the coherent output is always `G h`.
//! Variants are registered by name in a [`ReconcilerRegistry`] and selected at
//! runtime.

mod bottom_up;
mod nonparametric;
mod projection;
mod train;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{aggregate_bottom, Hierarchy};
use crate::learn::Activation;
use crate::panel::ScenarioPanel;

pub use bottom_up::BottomUp;
pub use nonparametric::Nonparametric;
pub use projection::Projection;
pub use train::{train, EpochRecord, TrainConfig, TrainingReport};

pub trait Reconciler: Send + Sync + fmt::Debug {
    /// Registry name of the variant.
    fn name(&self) -> &'static str;

    fn hierarchy(&self) -> &Hierarchy;

    /// Reconciled bottom-level values, clipped to `[0, capacity]`.
    fn reconcile_bottom(&self, base: &[f64]) -> Vec<f64>;

    fn apply(&self, base: &[f64]) -> Vec<f64> {
        aggregate_bottom(&self.reconcile_bottom(base))
    }

    fn trainable(&self) -> Option<&dyn Trainable> {
        None
    }

    fn trainable_mut(&mut self) -> Option<&mut dyn Trainable> {
        None
    }

    /// Variant parameters for checkpointing.
    fn parameters(&self) -> serde_json::Value;
}

/// A reconciler whose bottom-level map is differentiable in its parameters.
pub trait Trainable: Send + Sync {
    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    /// Adds `d <upstream, reconcile_bottom(base)> / d params` to `grad`.
    ///
    /// Clipped outputs contribute zero gradient.
    fn accumulate_gradient(&self, base: &[f64], upstream: &[f64], grad: &mut [f64]);
}

/// Knobs for constructing a fresh reconciler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconcilerInit {
    pub seed: u64,
    /// Hidden widths; `None` means two layers of `4 (m + 1)`.
    #[serde(default)]
    pub hidden: Option<Vec<usize>>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_activation() -> Activation {
    Activation::Tanh
}

impl Default for ReconcilerInit {
    fn default() -> Self {
        Self {
            seed: 0,
            hidden: None,
            activation: default_activation(),
        }
    }
}

pub type CreateFn = fn(&Hierarchy, &ReconcilerInit) -> Result<Box<dyn Reconciler>>;
pub type RestoreFn = fn(&Hierarchy, serde_json::Value) -> Result<Box<dyn Reconciler>>;

#[derive(Clone, Copy)]
pub struct ReconcilerFactory {
    pub create: CreateFn,
    pub restore: RestoreFn,
}

/// Name-keyed table of reconciler variants.
#[derive(Clone, Default)]
pub struct ReconcilerRegistry {
    entries: BTreeMap<&'static str, ReconcilerFactory>,
}

impl ReconcilerRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// `bottom_up`, `projection` and `nonparametric`.
    pub fn builtin() -> Self {
        let mut r = Self::new();
        r.register(BottomUp::NAME, BottomUp::FACTORY);
        r.register(Projection::NAME, Projection::FACTORY);
        r.register(Nonparametric::NAME, Nonparametric::FACTORY);
        r
    }

    pub fn register(&mut self, name: &'static str, factory: ReconcilerFactory) {
        self.entries.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    fn get(&self, name: &str) -> Result<&ReconcilerFactory> {
        self.entries.get(name).ok_or_else(|| Error::Unknown {
            kind: "reconciler",
            name: name.to_string(),
        })
    }

    pub fn create(
        &self,
        name: &str,
        hierarchy: &Hierarchy,
        init: &ReconcilerInit,
    ) -> Result<Box<dyn Reconciler>> {
        (self.get(name)?.create)(hierarchy, init)
    }

    pub fn restore(&self, checkpoint: &Checkpoint, hierarchy: &Hierarchy) -> Result<Box<dyn Reconciler>> {
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                checkpoint.version
            )));
        }
        let actual = hierarchy.fingerprint();
        if checkpoint.hierarchy_fingerprint != actual {
            return Err(Error::HierarchyMismatch {
                expected: checkpoint.hierarchy_fingerprint.clone(),
                actual,
            });
        }
        (self.get(&checkpoint.variant)?.restore)(hierarchy, checkpoint.parameters.clone())
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized reconciler: variant tag, parameters and the hierarchy it was built for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub variant: String,
    pub hierarchy_fingerprint: String,
    pub seed: u64,
    pub parameters: serde_json::Value,
}

impl Checkpoint {
    pub fn of(r: &dyn Reconciler, seed: u64) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            variant: r.name().to_string(),
            hierarchy_fingerprint: r.hierarchy().fingerprint(),
            seed,
            parameters: r.parameters(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }
}

pub(crate) fn check_base_len(h: &Hierarchy, base: &[f64]) {
    assert_eq!(base.len(), h.n_series(), "base vector length");
}

pub(crate) fn clip_to_capacity(h: &Hierarchy, raw: Vec<f64>) -> Vec<f64> {
    raw.into_iter()
        .zip(h.capacities())
        .map(|(v, c)| v.clamp(0.0, *c))
        .collect()
}

/// Zeroes upstream entries whose raw output was clipped.
pub(crate) fn mask_clipped(h: &Hierarchy, raw: &[f64], upstream: &[f64]) -> Vec<f64> {
    raw.iter()
        .zip(h.capacities())
        .zip(upstream)
        .map(|((v, c), u)| if *v < 0.0 || *v > *c { 0.0 } else { *u })
        .collect()
}

/// Reconciles every scenario of a panel; observations pass through unchanged.
pub fn apply_panel(r: &dyn Reconciler, panel: &ScenarioPanel) -> Result<ScenarioPanel> {
    if r.hierarchy() != panel.hierarchy() {
        return Err(Error::HierarchyMismatch {
            expected: r.hierarchy().fingerprint(),
            actual: panel.hierarchy().fingerprint(),
        });
    }
    let s = panel.n_series();
    let blocks: Vec<Vec<f64>> = (0..panel.n_cases())
        .into_par_iter()
        .map(|c| {
            panel
                .case_scenarios(c)
                .chunks(s)
                .flat_map(|row| r.apply(row))
                .collect()
        })
        .collect();
    panel.with_data(blocks.concat())
}
