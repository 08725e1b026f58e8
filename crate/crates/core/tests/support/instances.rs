//! Random problem instances shared by the integration and acceptance tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use windpool_core::market::PriceTriple;

/// Strictly positive penalties, so every minimizer of the offering program is
/// bracketed by order statistics.
pub fn random_prices(rng: &mut ChaCha8Rng) -> PriceTriple {
    if rng.random_bool(0.2) {
        return PriceTriple::reference();
    }
    let psi_plus = rng.random_range(0.1..20.0);
    let psi_minus = rng.random_range(0.1..20.0);
    PriceTriple::new(25.0, psi_plus, psi_minus).unwrap()
}

/// `n` scenario values in `[0, capacity]`; a third of the instances are
/// integer-valued to force ties.
pub fn random_scenarios(rng: &mut ChaCha8Rng, n: usize, capacity: f64) -> Vec<f64> {
    let integer = rng.random_bool(1.0 / 3.0);
    (0..n)
        .map(|_| {
            let v = rng.random_range(0.0..=capacity);
            if integer {
                v.round().min(capacity)
            } else {
                v
            }
        })
        .collect()
}

/// Brute-force scan of the expected cost over scenario values: (smallest
/// minimizing scenario value, minimum cost).
pub fn brute_force_offer(y: &[f64], p: &PriceTriple) -> (f64, f64) {
    let cost = |x: f64| {
        y.iter()
            .map(|v| {
                if *v >= x {
                    p.psi_plus * (v - x)
                } else {
                    p.psi_minus * (x - v)
                }
            })
            .sum::<f64>()
            / y.len() as f64
    };
    let costs: Vec<(f64, f64)> = y.iter().map(|x| (*x, cost(*x))).collect();
    let best = costs.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let tol = 1e-9 * best.abs().max(1.0);
    let smallest = costs
        .iter()
        .filter(|c| c.1 <= best + tol)
        .map(|c| c.0)
        .fold(f64::INFINITY, f64::min);
    (smallest, best)
}

/// Bottom-level scenarios (N rows of m producers) and capacities for a
/// random coalition: independent, comonotone or partly anti-comonotone.
pub struct CoalitionInstance {
    pub bottom: Vec<Vec<f64>>,
    pub capacities: Vec<f64>,
    pub prices: PriceTriple,
}

impl CoalitionInstance {
    pub fn aggregate(&self) -> Vec<f64> {
        self.bottom.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn total_capacity(&self) -> f64 {
        self.capacities.iter().sum()
    }
}

pub fn random_coalition(rng: &mut ChaCha8Rng, m: usize, n: usize) -> CoalitionInstance {
    let capacities: Vec<f64> = (0..m).map(|_| rng.random_range(20.0..300.0)).collect();
    let mode = rng.random_range(0..3);
    let flips: Vec<bool> = (0..m).map(|_| rng.random_bool(0.4)).collect();
    let bottom = (0..n)
        .map(|_| {
            let common: f64 = rng.random();
            (0..m)
                .map(|i| {
                    let u: f64 = match mode {
                        0 => rng.random(),
                        1 => (common + 0.1 * rng.random::<f64>()).min(1.0),
                        _ => {
                            let c = if flips[i] { 1.0 - common } else { common };
                            (0.8 * c + 0.2 * rng.random::<f64>()).min(1.0)
                        }
                    };
                    capacities[i] * u
                })
                .collect()
        })
        .collect();
    CoalitionInstance {
        bottom,
        capacities,
        prices: random_prices(rng),
    }
}
