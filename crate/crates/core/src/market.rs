//! Day-ahead offering under dual-price imbalance settlement.
//!
//! For `N` equiprobable scenarios `y_1..y_N` the expected imbalance cost of an
//! offer `x` is `(1/N) sum [psi+ (y - x)^+ + psi- (x - y)^+]`. Its minimizers
//! form an interval of order statistics around the `psi+ / (psi+ + psi-)`
//! quantile; we always return the smallest one, together with an optimal
//! solution of the dual program `max (1/N) sum nu y` subject to
//! `sum nu <= 0` and `-psi- <= nu <= psi+`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for strong duality.
pub const DUALITY_TOL: f64 = 1e-6;

/// Day-ahead price and imbalance penalties, currency/MWh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceTriple {
    pub pi_f: f64,
    /// Surplus penalty, day-ahead minus downward-regulation price.
    pub psi_plus: f64,
    /// Shortfall penalty, upward-regulation minus day-ahead price.
    pub psi_minus: f64,
}

impl PriceTriple {
    pub fn new(pi_f: f64, psi_plus: f64, psi_minus: f64) -> Result<Self> {
        let p = Self {
            pi_f,
            psi_plus,
            psi_minus,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.pi_f, self.psi_plus, self.psi_minus]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::NonFinite("prices"));
        }
        if self.psi_plus < 0.0 || self.psi_minus < 0.0 {
            return Err(Error::Config(format!(
                "penalties must be nonnegative, got psi+ = {}, psi- = {}",
                self.psi_plus, self.psi_minus
            )));
        }
        Ok(())
    }

    /// Day-ahead 25, surplus penalty 4, shortfall penalty 12.
    pub fn reference() -> Self {
        Self {
            pi_f: 25.0,
            psi_plus: 4.0,
            psi_minus: 12.0,
        }
    }
}

/// `psi+ / (psi+ + psi-)`.
pub fn critical_ratio(p: &PriceTriple) -> Result<f64> {
    p.validate()?;
    let total = p.psi_plus + p.psi_minus;
    if total <= 0.0 {
        return Err(Error::Config(
            "both penalties are zero; every offer is optimal".into(),
        ));
    }
    Ok(p.psi_plus / total)
}

/// 1-based order statistic selected for quantile level `alpha` over `n` scenarios:
/// the smallest `k >= 1` with `k / n >= alpha`.
fn order_statistic_index(alpha: f64, n: usize) -> usize {
    // The slack absorbs rounding in alpha, e.g. 0.3 * 10 = 3.0000000000000004.
    let k = (alpha * n as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(n)
}

fn sorted(scenarios: &[f64]) -> Vec<f64> {
    let mut v = scenarios.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Smallest expected-cost-minimizing offer: the `ceil(alpha N)`-th order statistic.
pub fn quantile_offer(scenarios: &[f64], p: &PriceTriple) -> Result<f64> {
    check_scenarios(scenarios)?;
    let alpha = critical_ratio(p)?;
    let s = sorted(scenarios);
    Ok(s[order_statistic_index(alpha, s.len()) - 1])
}

/// Imbalance cost of `offer` against one outcome.
pub fn realized_cost(offer: f64, actual: f64, p: &PriceTriple) -> f64 {
    p.psi_minus * (offer - actual).max(0.0) + p.psi_plus * (actual - offer).max(0.0)
}

/// Day-ahead revenue on actual output minus the imbalance cost.
pub fn independent_profit(offer: f64, actual: f64, p: &PriceTriple) -> f64 {
    p.pi_f * actual - realized_cost(offer, actual, p)
}

/// Mean imbalance cost of `offer` over equiprobable scenarios.
pub fn expected_cost(offer: f64, scenarios: &[f64], p: &PriceTriple) -> f64 {
    scenarios
        .iter()
        .map(|y| realized_cost(offer, *y, p))
        .sum::<f64>()
        / scenarios.len() as f64
}

fn check_scenarios(scenarios: &[f64]) -> Result<()> {
    if scenarios.is_empty() {
        return Err(Error::Config("at least one scenario is required".into()));
    }
    if scenarios.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("offer scenarios"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfferSolution {
    /// MW.
    pub offer: f64,
    /// Optimal expected imbalance cost, currency/h.
    pub expected_cost: f64,
    /// Optimal dual value per scenario, currency/MWh.
    pub duals: Vec<f64>,
    pub dual_objective: f64,
    pub solver: String,
}

impl OfferSolution {
    pub fn duality_gap(&self) -> f64 {
        (self.expected_cost - self.dual_objective).abs()
    }
}

/// Solves the one-hour offering program and its dual in closed form.
///
/// Scenarios above the offer get dual `psi+`, those below get `-psi-`; the
/// scenarios equal to the offer share the single value that makes the dual sum
/// vanish, which is the largest value compatible with `sum nu <= 0` and yields
/// a zero duality gap.
pub fn solve_offer(scenarios: &[f64], p: &PriceTriple, capacity: f64) -> Result<OfferSolution> {
    check_scenarios(scenarios)?;
    if let Some(v) = scenarios.iter().find(|v| **v < 0.0 || **v > capacity) {
        return Err(Error::Config(format!(
            "scenario value {v} MW outside [0, {capacity}] MW"
        )));
    }
    let offer = quantile_offer(scenarios, p)?;
    let n = scenarios.len() as f64;
    let above = scenarios.iter().filter(|y| **y > offer).count() as f64;
    let below = scenarios.iter().filter(|y| **y < offer).count() as f64;
    let equal = n - above - below;
    let tied = ((below * p.psi_minus - above * p.psi_plus) / equal).clamp(-p.psi_minus, p.psi_plus);
    let duals: Vec<f64> = scenarios
        .iter()
        .map(|y| {
            if *y > offer {
                p.psi_plus
            } else if *y < offer {
                -p.psi_minus
            } else {
                tied
            }
        })
        .collect();
    let primal = expected_cost(offer, scenarios, p);
    let dual = duals.iter().zip(scenarios).map(|(v, y)| v * y).sum::<f64>() / n;
    if (primal - dual).abs() > DUALITY_TOL * primal.abs().max(1.0) {
        return Err(Error::DualityGap { primal, dual });
    }
    Ok(OfferSolution {
        offer,
        expected_cost: primal,
        duals,
        dual_objective: dual,
        solver: "analytic-quantile".into(),
    })
}
