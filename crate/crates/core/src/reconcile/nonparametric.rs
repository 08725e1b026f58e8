use super::{
    check_base_len, clip_to_capacity, mask_clipped, Reconciler, ReconcilerFactory,
    ReconcilerInit, Trainable,
};
use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::learn::DenseNetwork;

/// Neural reconciliation: `h = cap * (net(y~ / cap_series) )`, where the network
/// carries the fixed residual `[0 | I_m]` on its capacity-normalized input.
///
/// With its output layer zeroed the map reproduces bottom-up reconciliation.
#[derive(Debug, Clone)]
pub struct Nonparametric {
    hierarchy: Hierarchy,
    net: DenseNetwork,
}

impl Nonparametric {
    pub const NAME: &'static str = "nonparametric";

    pub const FACTORY: ReconcilerFactory = ReconcilerFactory {
        create: |h, init| Ok(Box::new(Nonparametric::init(h.clone(), init)?)),
        restore: |h, value| {
            let net: DenseNetwork = serde_json::from_value(value)
                .map_err(|e| Error::Config(format!("network parameters: {e}")))?;
            Ok(Box::new(Nonparametric::new(h.clone(), net)?))
        },
    };

    pub fn new(hierarchy: Hierarchy, net: DenseNetwork) -> Result<Self> {
        if net.d_in() != hierarchy.n_series() || net.d_out() != hierarchy.m() {
            return Err(Error::Shape {
                expected: format!("{} -> {} network", hierarchy.n_series(), hierarchy.m()),
                actual: format!("{} -> {}", net.d_in(), net.d_out()),
            });
        }
        Ok(Self { hierarchy, net })
    }

    /// Random hidden layers, zero output layer, bottom-selecting residual.
    pub fn init(hierarchy: Hierarchy, init: &ReconcilerInit) -> Result<Self> {
        let m = hierarchy.m();
        let hidden = init.hidden.clone().unwrap_or_else(|| vec![4 * (m + 1); 2]);
        let mut sizes = vec![m + 1];
        sizes.extend(hidden);
        sizes.push(m);
        let net = DenseNetwork::random(sizes, init.activation, init.seed)?
            .zero_output_layer()
            .with_residual(bottom_selector(m))?;
        Self::new(hierarchy, net)
    }

    pub fn network(&self) -> &DenseNetwork {
        &self.net
    }

    fn normalize(&self, base: &[f64]) -> Vec<f64> {
        base.iter()
            .enumerate()
            .map(|(s, v)| v / self.hierarchy.series_capacity(s))
            .collect()
    }

    fn raw(&self, base: &[f64]) -> Vec<f64> {
        self.net
            .forward(&self.normalize(base))
            .into_iter()
            .zip(self.hierarchy.capacities())
            .map(|(v, c)| v * c)
            .collect()
    }
}

/// Row-major `m x (m+1)` matrix `[0 | I_m]`.
fn bottom_selector(m: usize) -> Vec<f64> {
    let mut r = vec![0.0; m * (m + 1)];
    for i in 0..m {
        r[i * (m + 1) + i + 1] = 1.0;
    }
    r
}

impl Reconciler for Nonparametric {
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
        serde_json::to_value(&self.net).expect("serializable")
    }
}

impl Trainable for Nonparametric {
    fn params(&self) -> &[f64] {
        self.net.params()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    fn accumulate_gradient(&self, base: &[f64], upstream: &[f64], grad: &mut [f64]) {
        let up = mask_clipped(&self.hierarchy, &self.raw(base), upstream);
        let scaled: Vec<f64> = up
            .iter()
            .zip(self.hierarchy.capacities())
            .map(|(u, c)| u * c)
            .collect();
        self.net.backward_into(&self.normalize(base), &scaled, grad);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::check_gradient_fn;
    use crate::reconcile::BottomUp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_init_matches_bottom_up() {
        let h = Hierarchy::with_capacities(vec![120.0, 80.0, 60.0, 40.0]).unwrap();
        let np = Nonparametric::init(h.clone(), &ReconcilerInit::default()).unwrap();
        let bu = BottomUp::new(h.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let mut base = vec![rng.random_range(0.0..300.0)];
            base.extend(h.capacities().iter().map(|c| rng.random_range(0.0..*c)));
            for (a, b) in np.apply(&base).iter().zip(bu.apply(&base)) {
                worst = worst.max((a - b).abs());
            }
        }
        assert!(worst <= 1e-9, "{worst}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let h = Hierarchy::with_capacities(vec![50.0, 70.0]).unwrap();
        let mut np = Nonparametric::init(
            h,
            &ReconcilerInit {
                seed: 3,
                ..Default::default()
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for p in np.params_mut() {
            *p += rng.random_range(-0.05..0.05);
        }
        let base = [60.0, 20.0, 35.0];
        let up = [0.7, -0.4];
        let p0 = np.params().to_vec();
        let err = check_gradient_fn(
            &p0,
            |p| {
                let mut n = np.clone();
                n.params_mut().copy_from_slice(p);
                n.reconcile_bottom(&base).iter().zip(&up).map(|(a, b)| a * b).sum()
            },
            |p| {
                let mut n = np.clone();
                n.params_mut().copy_from_slice(p);
                let mut g = vec![0.0; p.len()];
                n.accumulate_gradient(&base, &up, &mut g);
                g
            },
        );
        assert!(err < 1e-4, "{err}");
    }
}
