use serde::{Deserialize, Serialize};

use super::{check_base_len, clip_to_capacity, mask_clipped, Reconciler, ReconcilerFactory, Trainable};
use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;

/// Linear reconciliation `h = Q y~` with a learnable `m x (m+1)` matrix `Q`.
#[derive(Debug, Clone)]
pub struct Projection {
    hierarchy: Hierarchy,
    q: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ProjectionParams {
    q: Vec<f64>,
}

impl Projection {
    pub const NAME: &'static str = "projection";

    pub const FACTORY: ReconcilerFactory = ReconcilerFactory {
        create: |h, _| Ok(Box::new(Projection::bottom_up(h.clone()))),
        restore: |h, value| {
            let p: ProjectionParams = serde_json::from_value(value)
                .map_err(|e| Error::Config(format!("projection parameters: {e}")))?;
            Ok(Box::new(Projection::new(h.clone(), p.q)?))
        },
    };

    /// `Q` given row-major.
    pub fn new(hierarchy: Hierarchy, q: Vec<f64>) -> Result<Self> {
        let expected = hierarchy.m() * hierarchy.n_series();
        if q.len() != expected {
            return Err(Error::Shape {
                expected: format!("{expected} entries in Q"),
                actual: format!("{}", q.len()),
            });
        }
        Ok(Self { hierarchy, q })
    }

    /// `Q = [0 | I_m]`, which reproduces bottom-up reconciliation.
    pub fn bottom_up(hierarchy: Hierarchy) -> Self {
        let m = hierarchy.m();
        let cols = m + 1;
        let mut q = vec![0.0; m * cols];
        for i in 0..m {
            q[i * cols + i + 1] = 1.0;
        }
        Self { hierarchy, q }
    }

    pub fn matrix(&self) -> &[f64] {
        &self.q
    }

    fn raw(&self, base: &[f64]) -> Vec<f64> {
        self.q
            .chunks(base.len())
            .map(|row| row.iter().zip(base).map(|(q, y)| q * y).sum())
            .collect()
    }
}

impl Reconciler for Projection {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn hierarchy(&self) -> &Hierarchy {
        &self.hierarchy
    }

    fn reconcile_bottom(&self, base: &[f64]) -> Vec<f64> {
        check_base_len(&self.hierarchy, base);
        clip_to_capacity(&self.hierarchy, self.raw(base))
    }

    fn trainable(&self) -> Option<&dyn Trainable> {
        Some(self)
    }

    fn trainable_mut(&mut self) -> Option<&mut dyn Trainable> {
        Some(self)
    }

    fn parameters(&self) -> serde_json::Value {
        serde_json::to_value(ProjectionParams { q: self.q.clone() }).expect("serializable")
    }
}

impl Trainable for Projection {
    fn params(&self) -> &[f64] {
        &self.q
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.q
    }

    fn accumulate_gradient(&self, base: &[f64], upstream: &[f64], grad: &mut [f64]) {
        let up = mask_clipped(&self.hierarchy, &self.raw(base), upstream);
        let cols = base.len();
        for (i, u) in up.iter().enumerate() {
            for (g, y) in grad[i * cols..(i + 1) * cols].iter_mut().zip(base) {
                *g += u * y;
            }
        }
    }
}
