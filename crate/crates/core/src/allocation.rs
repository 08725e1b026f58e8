//! Dual-based sharing of the coalition's imbalance cost.
//!
//! With coherent scenarios and optimal duals `nu` of the grand-coalition
//! offering program, producer `i` is allocated `a_i = (1/N) sum_xi y_i^xi nu^xi`.
//! These allocations sum to the coalition's optimal expected cost and no
//! sub-coalition is allocated more than it would pay on its own. Realized
//! costs are split in proportion to `a`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{solve_offer, OfferSolution, PriceTriple};

/// Tolerance for efficiency and core inequalities, currency/h.
pub const CORE_TOL: f64 = 1e-6;

/// Coalitions are enumerated exhaustively up to this many producers.
pub const MAX_EXHAUSTIVE: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationVector {
    /// Expected allocated cost per producer, currency/h.
    pub a: Vec<f64>,
    /// Optimal expected cost of the grand coalition.
    pub grand_cost: f64,
    pub duals: Vec<f64>,
}

impl AllocationVector {
    pub fn efficiency_gap(&self) -> f64 {
        (self.a.iter().sum::<f64>() - self.grand_cost).abs()
    }
}

/// `a_i = (1/N) sum_xi bottom[xi][i] * nu[xi]`.
///
/// `aggregate` holds the scenario values the grand-coalition program was solved
/// on; they must equal the row sums of `bottom`.
pub fn expected_allocation(
    bottom: &[Vec<f64>],
    aggregate: &[f64],
    solution: &OfferSolution,
) -> Result<AllocationVector> {
    let n = bottom.len();
    if n == 0 || aggregate.len() != n || solution.duals.len() != n {
        return Err(Error::Shape {
            expected: format!("{n} scenarios, aggregates and duals"),
            actual: format!("{} aggregates, {} duals", aggregate.len(), solution.duals.len()),
        });
    }
    let m = bottom[0].len();
    for (xi, (row, agg)) in bottom.iter().zip(aggregate).enumerate() {
        let sum: f64 = row.iter().sum();
        let gap = (sum - agg).abs();
        if row.len() != m || gap > 1e-9 * agg.abs().max(1.0) {
            return Err(Error::Incoherent {
                context: "expected allocation",
                scenario: xi,
                gap,
            });
        }
    }
    let mut a = vec![0.0; m];
    for (row, nu) in bottom.iter().zip(&solution.duals) {
        for (ai, y) in a.iter_mut().zip(row) {
            *ai += y * nu;
        }
    }
    a.iter_mut().for_each(|v| *v /= n as f64);
    let alloc = AllocationVector {
        a,
        grand_cost: solution.expected_cost,
        duals: solution.duals.clone(),
    };
    if alloc.efficiency_gap() > CORE_TOL * solution.expected_cost.abs().max(1.0) {
        return Err(Error::DualityGap {
            primal: solution.expected_cost,
            dual: alloc.a.iter().sum(),
        });
    }
    Ok(alloc)
}

/// Scenario-wise sums over the producers in `members`.
fn coalition_scenarios(bottom: &[Vec<f64>], members: &[usize]) -> Vec<f64> {
    bottom
        .iter()
        .map(|row| members.iter().map(|i| row[*i]).sum())
        .collect()
}

/// `l(S)`: optimal expected cost of coalition `members` offering its summed scenarios.
pub fn characteristic_value(
    members: &[usize],
    bottom: &[Vec<f64>],
    p: &PriceTriple,
    capacities: &[f64],
) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::Config("coalition must be nonempty".into()));
    }
    let cap: f64 = members.iter().map(|i| capacities[*i]).sum();
    // Summation round-off can push a coalition total a hair above its capacity.
    let ys: Vec<f64> = coalition_scenarios(bottom, members)
        .into_iter()
        .map(|v| v.clamp(0.0, cap))
        .collect();
    Ok(solve_offer(&ys, p, cap)?.expected_cost)
}

/// Splits a realized cost in proportion to `a`, with the last share taken as the
/// remainder so the shares sum to `realized` exactly.
///
/// When `a` sums to zero, shares follow `expected_generation`, and fall back to
/// an equal split when that also sums to zero.
pub fn expost_shares(a: &[f64], realized: f64, expected_generation: &[f64]) -> Vec<f64> {
    let m = a.len();
    if m == 0 {
        return Vec::new();
    }
    let weights: Vec<f64> = if a.iter().sum::<f64>() != 0.0 {
        a.to_vec()
    } else if expected_generation.iter().sum::<f64>() != 0.0 {
        expected_generation.to_vec()
    } else {
        vec![1.0; m]
    };
    let total: f64 = weights.iter().sum();
    let mut shares: Vec<f64> = weights[..m - 1].iter().map(|w| w / total * realized).collect();
    let others: f64 = shares.iter().sum();
    if let Some(c) = remainder(realized, others) {
        shares.push(c);
        return shares;
    }
    // Round-half-even can make the target unreachable from the current partial
    // sum. Walking a proportional share moves the partial sum to a neighbouring
    // grid point; shares on a finer grid than the partial sum reach points the
    // later ones skip.
    for k in (0..shares.len()).rev() {
        let base = shares[k];
        for step in 1..=64 {
            for up in [true, false] {
                shares[k] = (0..step).fold(base, |v, _| if up { v.next_up() } else { v.next_down() });
                let others: f64 = shares.iter().sum();
                if let Some(c) = remainder(realized, others) {
                    shares.push(c);
                    return shares;
                }
            }
        }
        shares[k] = base;
    }
    log::warn!("realized cost split is not bit-exact: total {realized}");
    let others: f64 = shares.iter().sum();
    shares.push(realized - others);
    shares
}

/// `c` with `others + c == total` in floating point.
///
/// Signed shares much larger than the total can make this unreachable.
fn remainder(total: f64, others: f64) -> Option<f64> {
    let guess = total - others;
    if others + guess == total {
        return Some(guess);
    }
    // `c -> others + c` is monotone, so bisect over the ordered bit patterns.
    let width = (guess.abs() + others.abs() + total.abs()) * f64::EPSILON * 4.0;
    let (mut lo, mut hi) = (ordered(guess - width), ordered(guess + width));
    while lo <= hi {
        let mid = lo + (hi - lo) / 2;
        let s = others + from_ordered(mid);
        if s == total {
            return Some(from_ordered(mid));
        }
        if s < total {
            lo = mid + 1;
        } else {
            hi = mid - 1;
        }
    }
    None
}

fn ordered(x: f64) -> i64 {
    let b = x.to_bits() as i64;
    if b < 0 {
        i64::MIN - b
    } else {
        b
    }
}

fn from_ordered(k: i64) -> f64 {
    let b = if k < 0 { i64::MIN - k } else { k };
    f64::from_bits(b as u64)
}

/// Day-ahead revenue on actual output minus the allocated realized cost.
pub fn cooperative_profit(actual: f64, cost_share: f64, p: &PriceTriple) -> f64 {
    p.pi_f * actual - cost_share
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoalitionCheck {
    pub members: Vec<usize>,
    pub allocated: f64,
    pub value: f64,
    /// `allocated - value`; positive means the coalition would rather leave.
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreAudit {
    pub is_core: bool,
    pub worst_violation: f64,
    pub efficiency_gap: f64,
    pub exhaustive: bool,
    pub coalitions: Vec<CoalitionCheck>,
}

fn members_of(mask: u64, m: usize) -> Vec<usize> {
    (0..m).filter(|i| mask >> i & 1 == 1).collect()
}

/// Checks efficiency and `sum_{i in S} a_i <= l(S)` for every nonempty coalition
/// (or `n_samples` random ones when `m > MAX_EXHAUSTIVE`).
pub fn audit_core(
    a: &[f64],
    bottom: &[Vec<f64>],
    p: &PriceTriple,
    capacities: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<CoreAudit> {
    let m = a.len();
    let exhaustive = m <= MAX_EXHAUSTIVE;
    let grand_mask = if m == 64 { u64::MAX } else { (1u64 << m) - 1 };
    let masks: Vec<u64> = if exhaustive {
        (1..=grand_mask).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<u64> = (0..n_samples)
            .map(|_| rng.random::<u64>() & grand_mask)
            .filter(|s| *s != 0)
            .collect();
        v.push(grand_mask);
        v
    };
    let coalitions = masks
        .par_iter()
        .map(|mask| {
            let members = members_of(*mask, m);
            let value = characteristic_value(&members, bottom, p, capacities)?;
            let allocated: f64 = members.iter().map(|i| a[*i]).sum();
            Ok(CoalitionCheck {
                members,
                allocated,
                value,
                violation: allocated - value,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let grand = coalitions.last().expect("grand coalition present");
    let efficiency_gap = (grand.allocated - grand.value).abs();
    let worst_violation = coalitions
        .iter()
        .map(|c| c.violation)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(CoreAudit {
        is_core: worst_violation <= CORE_TOL && efficiency_gap <= CORE_TOL,
        worst_violation,
        efficiency_gap,
        exhaustive,
        coalitions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperadditivityAudit {
    pub passed: bool,
    pub pairs_checked: usize,
    /// Largest `l(S u T) - l(S) - l(T)`.
    pub worst_violation: f64,
}

/// Checks `l(S u T) <= l(S) + l(T)` over disjoint nonempty pairs: all of them
/// when there are at most `n_pairs`, otherwise `n_pairs` random ones.
pub fn audit_superadditivity(
    bottom: &[Vec<f64>],
    p: &PriceTriple,
    capacities: &[f64],
    n_pairs: usize,
    seed: u64,
) -> Result<SuperadditivityAudit> {
    let m = capacities.len();
    if m < 2 {
        return Err(Error::Config("superadditivity needs at least two producers".into()));
    }
    // Each producer is in S, in T, or in neither: 3^m labelings.
    let labelings = 3f64.powi(m as i32);
    let mut pairs = Vec::new();
    if labelings <= n_pairs as f64 {
        for code in 0..(labelings as u64) {
            let (mut s, mut t, mut c) = (0u64, 0u64, code);
            for i in 0..m {
                match c % 3 {
                    1 => s |= 1 << i,
                    2 => t |= 1 << i,
                    _ => {}
                }
                c /= 3;
            }
            if s != 0 && t != 0 && s < t {
                pairs.push((s, t));
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        while pairs.len() < n_pairs {
            let (mut s, mut t) = (0u64, 0u64);
            for i in 0..m {
                match rng.random_range(0..3) {
                    1 => s |= 1 << i,
                    2 => t |= 1 << i,
                    _ => {}
                }
            }
            if s != 0 && t != 0 {
                pairs.push((s, t));
            }
        }
    }
    let value = |mask: u64| characteristic_value(&members_of(mask, m), bottom, p, capacities);
    let gaps = pairs
        .par_iter()
        .map(|(s, t)| Ok(value(s | t)? - value(*s)? - value(*t)?))
        .collect::<Result<Vec<f64>>>()?;
    let worst = gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(SuperadditivityAudit {
        passed: worst <= CORE_TOL,
        pairs_checked: gaps.len(),
        worst_violation: worst,
    })
}
