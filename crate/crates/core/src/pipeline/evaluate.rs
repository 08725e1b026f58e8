use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EvaluationOptions, SeedPlan, INDEPENDENT};
use crate::allocation::{audit_core, cooperative_profit, expected_allocation, expost_shares};
use crate::error::{Error, Result};
use crate::market::{independent_profit, realized_cost, solve_offer, PriceTriple};
use crate::panel::ScenarioPanel;
use crate::reconcile::{apply_panel, Reconciler};
use crate::rng::derive_seed;
use crate::scoring::{
    case_energy_scores, consistency_band, deviation_from_uniform, panel_ranks, RankHistogram,
};

/// One producer in one trading hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProducerHour {
    /// Observed output, MW.
    pub actual: f64,
    /// Stand-alone quantile offer on the producer's own base forecast, MW.
    pub independent_offer: f64,
    /// Expected cost allocated by the coalition, or the stand-alone expected
    /// cost under independent offering, currency/h.
    pub a: f64,
    /// Realized cost share, or the stand-alone realized cost, currency/h.
    pub c: f64,
    /// `None` under independent offering.
    pub profit_coop: Option<f64>,
    pub profit_indep: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourAudit {
    pub worst_violation: f64,
    pub efficiency_gap: f64,
    pub is_core: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourResult {
    pub issuance: String,
    pub lead: usize,
    /// Coalition offer, or the sum of stand-alone offers, MW.
    pub offer: f64,
    pub expected_cost: f64,
    pub realized_cost: f64,
    /// Coalition duals per scenario; empty under independent offering.
    pub duals: Vec<f64>,
    pub producers: Vec<ProducerHour>,
    pub audit: Option<HourAudit>,
}

impl HourResult {
    /// Shares sum to the realized cost bit for bit.
    pub fn budget_balanced(&self) -> bool {
        self.producers.iter().map(|p| p.c).sum::<f64>() == self.realized_cost
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProducerMetrics {
    pub name: String,
    pub capacity: f64,
    /// Average profit, currency/h, and its standard error over hours.
    pub ap_cooperative: Option<f64>,
    pub ap_cooperative_se: Option<f64>,
    pub ap_independent: f64,
    pub ap_independent_se: f64,
    /// Mean of the hourly cooperative-minus-independent profit, and its standard error.
    pub ap_gain: Option<f64>,
    pub ap_gain_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreSummary {
    pub hours: usize,
    pub hours_in_core: usize,
    pub worst_violation: f64,
    pub all_in_core: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub method: String,
    pub seed: u64,
    pub n_cases: usize,
    pub n_scenarios: usize,
    /// Average energy score, MW, and its standard error over cases.
    pub aes: f64,
    pub aes_se: f64,
    pub deviation: f64,
    pub chi_square: f64,
    pub fraction_in_band: f64,
    pub mean_expected_cost: f64,
    pub mean_realized_cost: f64,
    pub budget_balanced: bool,
    pub producers: Vec<ProducerMetrics>,
    pub core: Option<CoreSummary>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub hours: Vec<HourResult>,
    pub ranks: Vec<usize>,
    pub histogram: RankHistogram,
    /// The scenarios that were scored and offered: reconciled, or the base panel.
    pub scored: ScenarioPanel,
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Stand-alone offers of every producer on its own base-forecast scenarios.
fn independent_offers(
    base: &ScenarioPanel,
    case: usize,
    p: &PriceTriple,
) -> Result<Vec<crate::market::OfferSolution>> {
    let h = base.hierarchy();
    let s = base.n_series();
    let rows = base.case_scenarios(case);
    (0..h.m())
        .map(|i| {
            let own: Vec<f64> = rows.chunks(s).map(|r| r[i + 1]).collect();
            solve_offer(&own, p, h.capacities()[i])
        })
        .collect()
}

fn independent_hour(base: &ScenarioPanel, case: usize, p: &PriceTriple) -> Result<HourResult> {
    let (t, k) = base.case_position(case);
    let obs = base.case_observation(case).expect("checked");
    let solutions = independent_offers(base, case, p)?;
    let producers: Vec<ProducerHour> = solutions
        .iter()
        .zip(&obs[1..])
        .map(|(sol, actual)| ProducerHour {
            actual: *actual,
            independent_offer: sol.offer,
            a: sol.expected_cost,
            c: realized_cost(sol.offer, *actual, p),
            profit_coop: None,
            profit_indep: independent_profit(sol.offer, *actual, p),
        })
        .collect();
    Ok(HourResult {
        issuance: base.issuance_times()[t].clone(),
        lead: base.lead_times()[k],
        offer: solutions.iter().map(|s| s.offer).sum(),
        expected_cost: solutions.iter().map(|s| s.expected_cost).sum(),
        realized_cost: producers.iter().map(|p| p.c).sum(),
        duals: Vec::new(),
        producers,
        audit: None,
    })
}

fn cooperative_hour(
    base: &ScenarioPanel,
    reconciled: &ScenarioPanel,
    case: usize,
    p: &PriceTriple,
    opts: &EvaluationOptions,
    audit_seed: u64,
) -> Result<HourResult> {
    let h = reconciled.hierarchy();
    let (t, k) = reconciled.case_position(case);
    let s = reconciled.n_series();
    let obs = reconciled.case_observation(case).expect("checked");
    let rows = reconciled.case_scenarios(case);
    let bottom: Vec<Vec<f64>> = rows.chunks(s).map(|r| r[1..].to_vec()).collect();
    let aggregate: Vec<f64> = rows
        .chunks(s)
        .map(|r| r[0].min(h.total_capacity()))
        .collect();

    let grand = solve_offer(&aggregate, p, h.total_capacity())?;
    let alloc = expected_allocation(&bottom, &aggregate, &grand)?;
    let actual = &obs[1..];
    let realized = realized_cost(grand.offer, actual.iter().sum(), p);
    let expected_generation: Vec<f64> = (0..h.m())
        .map(|i| bottom.iter().map(|b| b[i]).sum::<f64>() / bottom.len() as f64)
        .collect();
    let shares = expost_shares(&alloc.a, realized, &expected_generation);
    let independent = independent_offers(base, case, p)?;

    let audit = audit_core(
        &alloc.a,
        &bottom,
        p,
        h.capacities(),
        opts.audit_samples,
        derive_seed(audit_seed, &[t as u64, k as u64]),
    )?;
    let producers = (0..h.m())
        .map(|i| ProducerHour {
            actual: actual[i],
            independent_offer: independent[i].offer,
            a: alloc.a[i],
            c: shares[i],
            profit_coop: Some(cooperative_profit(actual[i], shares[i], p)),
            profit_indep: independent_profit(independent[i].offer, actual[i], p),
        })
        .collect();
    Ok(HourResult {
        issuance: reconciled.issuance_times()[t].clone(),
        lead: reconciled.lead_times()[k],
        offer: grand.offer,
        expected_cost: grand.expected_cost,
        realized_cost: realized,
        duals: grand.duals,
        producers,
        audit: Some(HourAudit {
            worst_violation: audit.worst_violation,
            efficiency_gap: audit.efficiency_gap,
            is_core: audit.is_core,
        }),
    })
}

/// Offers, settles, scores and audits every hour of `test`.
///
/// `reconciler` is `None` for independent offering, which scores the base
/// forecasts as issued.
pub fn evaluate(
    method: &str,
    reconciler: Option<&dyn Reconciler>,
    test: &ScenarioPanel,
    prices: &PriceTriple,
    seed: u64,
    opts: &EvaluationOptions,
) -> Result<Evaluation> {
    if !test.has_observations() {
        return Err(Error::Config("evaluation needs observations".into()));
    }
    if reconciler.is_none() != (method == INDEPENDENT) {
        return Err(Error::Config(format!(
            "method '{method}' and the supplied reconciler disagree"
        )));
    }
    prices.validate()?;
    let seeds = SeedPlan::from_seed(seed);
    let scored = match reconciler {
        Some(r) => apply_panel(r, test)?,
        None => test.clone(),
    };

    let hours: Vec<HourResult> = (0..test.n_cases())
        .into_par_iter()
        .map(|case| {
            let result = match reconciler {
                None => independent_hour(test, case, prices),
                Some(_) => cooperative_hour(test, &scored, case, prices, opts, seeds.audit),
            };
            result.map_err(|e| {
                let (t, k) = test.case_position(case);
                e.at_hour(&test.issuance_times()[t], test.lead_times()[k])
            })
        })
        .collect::<Result<_>>()?;

    let scores = case_energy_scores(&scored)?;
    let (aes, aes_se) = mean_se(&scores);
    let ranks = panel_ranks(&scored, seeds.ranks)?;
    let n = test.n_scenarios();
    let band = consistency_band(n, ranks.len(), opts.band_level, opts.band_simulations, seeds.band)?;
    let histogram = RankHistogram::from_ranks(&ranks, n + 1).with_band(band);

    let h = test.hierarchy();
    let producers = (0..h.m())
        .map(|i| {
            let indep: Vec<f64> = hours.iter().map(|r| r.producers[i].profit_indep).collect();
            let (ap_independent, ap_independent_se) = mean_se(&indep);
            let coop: Option<Vec<f64>> = hours.iter().map(|r| r.producers[i].profit_coop).collect();
            let (ap_cooperative, ap_cooperative_se, ap_gain, ap_gain_se) = match coop {
                Some(c) => {
                    let gain: Vec<f64> = c.iter().zip(&indep).map(|(a, b)| a - b).collect();
                    let (m, se) = mean_se(&c);
                    let (g, gse) = mean_se(&gain);
                    (Some(m), Some(se), Some(g), Some(gse))
                }
                None => (None, None, None, None),
            };
            ProducerMetrics {
                name: h.names()[i].clone(),
                capacity: h.capacities()[i],
                ap_cooperative,
                ap_cooperative_se,
                ap_independent,
                ap_independent_se,
                ap_gain,
                ap_gain_se,
            }
        })
        .collect();

    let core = reconciler.map(|_| {
        let audits: Vec<&HourAudit> = hours.iter().filter_map(|r| r.audit.as_ref()).collect();
        let in_core = audits.iter().filter(|a| a.is_core).count();
        CoreSummary {
            hours: audits.len(),
            hours_in_core: in_core,
            worst_violation: audits
                .iter()
                .map(|a| a.worst_violation)
                .fold(f64::NEG_INFINITY, f64::max),
            all_in_core: in_core == audits.len(),
        }
    });

    let n_hours = hours.len() as f64;
    let metrics = Metrics {
        method: method.to_string(),
        seed,
        n_cases: scores.len(),
        n_scenarios: n,
        aes,
        aes_se,
        deviation: deviation_from_uniform(&histogram),
        chi_square: histogram.chi_square(),
        fraction_in_band: histogram.fraction_in_band().expect("band attached"),
        mean_expected_cost: hours.iter().map(|r| r.expected_cost).sum::<f64>() / n_hours,
        mean_realized_cost: hours.iter().map(|r| r.realized_cost).sum::<f64>() / n_hours,
        budget_balanced: hours.iter().all(HourResult::budget_balanced),
        producers,
        core,
    };
    Ok(Evaluation {
        metrics,
        hours,
        ranks,
        histogram,
        scored,
    })
}
