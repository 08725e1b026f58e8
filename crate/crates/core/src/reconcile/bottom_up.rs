use super::{check_base_len, clip_to_capacity, Reconciler, ReconcilerFactory};
use crate::hierarchy::Hierarchy;

/// Discards the base aggregate and sums the base producer entries.
#[derive(Debug, Clone)]
pub struct BottomUp {
    hierarchy: Hierarchy,
}

impl BottomUp {
    pub const NAME: &'static str = "bottom_up";

    pub const FACTORY: ReconcilerFactory = ReconcilerFactory {
        create: |h, _| Ok(Box::new(BottomUp::new(h.clone()))),
        restore: |h, _| Ok(Box::new(BottomUp::new(h.clone()))),
    };

    pub fn new(hierarchy: Hierarchy) -> Self {
        Self { hierarchy }
    }

}

impl Reconciler for BottomUp {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn hierarchy(&self) -> &Hierarchy {
        &self.hierarchy
    }

    fn reconcile_bottom(&self, base: &[f64]) -> Vec<f64> {
        check_base_len(&self.hierarchy, base);
        clip_to_capacity(&self.hierarchy, base[1..].to_vec())
    }

    fn parameters(&self) -> serde_json::Value {
        serde_json::Value::Null
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discards_base_aggregate() {
        let h = Hierarchy::with_capacities(vec![100.0, 100.0]).unwrap();
        assert_eq!(BottomUp::new(h).apply(&[999.0, 4.0, 6.0]), vec![10.0, 4.0, 6.0]);
    }
}
