//! Energy score, band-depth rank histograms and calibration summaries.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::ScenarioPanel;
use crate::rng::case_rng;

/// Norms below this are treated as zero when differentiating `||u||`.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyScore {
    pub value: f64,
    /// Mean distance from scenarios to the observation.
    pub accuracy: f64,
    /// Half the mean pairwise distance between scenarios.
    pub spread: f64,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn check_shape(scenarios: &[f64], d: usize) -> Result<usize> {
    if d == 0 || scenarios.is_empty() || scenarios.len() % d != 0 {
        return Err(Error::Shape {
            expected: format!("non-empty N x {d} scenario block"),
            actual: format!("{} values", scenarios.len()),
        });
    }
    Ok(scenarios.len() / d)
}

/// Energy score of a row-major `N x d` scenario block against an observation,
/// using the exact double sum over scenario pairs.
pub fn energy_score(scenarios: &[f64], observation: &[f64]) -> Result<EnergyScore> {
    let d = observation.len();
    let n = check_shape(scenarios, d)?;
    if scenarios.iter().chain(observation).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("energy score input"));
    }
    let rows: Vec<&[f64]> = scenarios.chunks(d).collect();
    let accuracy = rows.iter().map(|r| dist(r, observation)).sum::<f64>() / n as f64;
    let mut pairs = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            pairs += dist(rows[i], rows[j]);
        }
    }
    // Each unordered pair appears twice in the full double sum.
    let spread = 2.0 * pairs / (2.0 * (n * n) as f64);
    Ok(EnergyScore {
        value: accuracy - spread,
        accuracy,
        spread,
    })
}

/// Gradient of the energy score with respect to every scenario entry (`N x d`, row-major).
///
/// The gradient of `||u||` is taken as zero when `||u|| < NORM_EPS`.
pub fn energy_score_subgradient(scenarios: &[f64], observation: &[f64]) -> Result<Vec<f64>> {
    let d = observation.len();
    let n = check_shape(scenarios, d)?;
    let nf = n as f64;
    let mut grad = vec![0.0; n * d];
    for (i, gi) in grad.chunks_mut(d).enumerate() {
        let xi = &scenarios[i * d..(i + 1) * d];
        add_unit(gi, xi, observation, 1.0 / nf);
        for (j, xj) in scenarios.chunks(d).enumerate() {
            if j != i {
                add_unit(gi, xi, xj, -1.0 / (nf * nf));
            }
        }
    }
    Ok(grad)
}

fn add_unit(out: &mut [f64], a: &[f64], b: &[f64], scale: f64) {
    let norm = dist(a, b);
    if norm >= NORM_EPS {
        for ((g, x), y) in out.iter_mut().zip(a).zip(b) {
            *g += scale * (x - y) / norm;
        }
    }
}

/// Mean energy score over every (issuance, lead) case of a panel with observations.
pub fn average_energy_score(panel: &ScenarioPanel) -> Result<f64> {
    let scores = case_energy_scores(panel)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Energy score of every case, in case order.
pub fn case_energy_scores(panel: &ScenarioPanel) -> Result<Vec<f64>> {
    if !panel.has_observations() {
        return Err(Error::Config("energy score needs observations".into()));
    }
    (0..panel.n_cases())
        .into_par_iter()
        .map(|c| {
            energy_score(
                panel.case_scenarios(c),
                panel.case_observation(c).expect("checked"),
            )
            .map(|s| s.value)
        })
        .collect()
}

/// Ranks (1-based) of `values`, ties broken uniformly at random.
fn random_tiebreak_ranks<R: Rng + ?Sized>(values: &[f64], rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.shuffle(rng);
    // Stable sort over a shuffled order breaks ties uniformly.
    order.sort_by(|a, b| values[*a].total_cmp(&values[*b]));
    let mut ranks = vec![0; values.len()];
    for (r, idx) in order.into_iter().enumerate() {
        ranks[idx] = r + 1;
    }
    ranks
}

/// Band-depth pre-rank of each row of an `M x d` block:
/// `depth_j = (1/d) sum_k (M - r_jk)(r_jk - 1)` with `r_jk` the rank of coordinate `k`.
pub fn band_depth_prerank<R: Rng + ?Sized>(vectors: &[f64], d: usize, rng: &mut R) -> Vec<f64> {
    let m = vectors.len() / d;
    let mut depth = vec![0.0; m];
    let mut column = vec![0.0; m];
    for k in 0..d {
        for j in 0..m {
            column[j] = vectors[j * d + k];
        }
        for (j, r) in random_tiebreak_ranks(&column, rng).into_iter().enumerate() {
            depth[j] += ((m - r) * (r - 1)) as f64;
        }
    }
    depth.iter_mut().for_each(|v| *v /= d as f64);
    depth
}

/// Verification rank of the observation among the `N + 1` band depths, in `1..=N+1`.
pub fn multivariate_rank<R: Rng + ?Sized>(
    scenarios: &[f64],
    observation: &[f64],
    rng: &mut R,
) -> usize {
    let d = observation.len();
    let mut pooled = Vec::with_capacity(scenarios.len() + d);
    pooled.extend_from_slice(observation);
    pooled.extend_from_slice(scenarios);
    let depth = band_depth_prerank(&pooled, d, rng);
    let own = depth[0];
    let below = depth[1..].iter().filter(|v| **v < own).count();
    let ties = depth[1..].iter().filter(|v| **v == own).count();
    1 + below + rng.random_range(0..=ties)
}

/// Verification ranks for every case of a panel; case `(t, k)` draws from its own seeded stream.
pub fn panel_ranks(panel: &ScenarioPanel, seed: u64) -> Result<Vec<usize>> {
    if !panel.has_observations() {
        return Err(Error::Config("ranks need observations".into()));
    }
    Ok((0..panel.n_cases())
        .into_par_iter()
        .map(|c| {
            let (t, k) = panel.case_position(c);
            let mut rng = case_rng(seed, t, k);
            multivariate_rank(
                panel.case_scenarios(c),
                panel.case_observation(c).expect("checked"),
                &mut rng,
            )
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankHistogram {
    pub counts: Vec<usize>,
    pub total: usize,
    /// 95% consistency band per bin, counts.
    pub band: Option<Vec<(f64, f64)>>,
}

impl RankHistogram {
    /// Histogram over `n_bins` ranks `1..=n_bins`.
    pub fn from_ranks(ranks: &[usize], n_bins: usize) -> Self {
        let mut counts = vec![0; n_bins];
        for r in ranks {
            counts[r - 1] += 1;
        }
        Self {
            counts,
            total: ranks.len(),
            band: None,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|c| *c as f64 / self.total as f64)
            .collect()
    }

    pub fn with_band(mut self, band: Vec<(f64, f64)>) -> Self {
        self.band = Some(band);
        self
    }

    /// Groups contiguous bins into `target` coarser bins (sizes differ by at most one).
    pub fn rebin(&self, target: usize) -> Self {
        let b = self.n_bins();
        if target >= b {
            return self.clone();
        }
        let mut counts = vec![0; target];
        for (i, c) in self.counts.iter().enumerate() {
            counts[i * target / b] += c;
        }
        Self {
            counts,
            total: self.total,
            band: None,
        }
    }

    /// Pearson chi-square statistic against the uniform distribution.
    pub fn chi_square(&self) -> f64 {
        let expected = self.total as f64 / self.n_bins() as f64;
        self.counts
            .iter()
            .map(|c| (*c as f64 - expected).powi(2) / expected)
            .sum()
    }

    /// Fraction of bins whose count lies inside the consistency band.
    pub fn fraction_in_band(&self) -> Option<f64> {
        let band = self.band.as_ref()?;
        let inside = self
            .counts
            .iter()
            .zip(band)
            .filter(|(c, (lo, hi))| **c as f64 >= *lo && **c as f64 <= *hi)
            .count();
        Some(inside as f64 / self.n_bins() as f64)
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Pointwise central `level` band of bin counts for `n_cases` perfectly calibrated
/// ranks over `n_bins = n_scenarios + 1` bins, from `n_sim` simulated histograms.
pub fn consistency_band(
    n_scenarios: usize,
    n_cases: usize,
    level: f64,
    n_sim: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    consistency_band_grouped(n_scenarios, n_cases, n_scenarios + 1, level, n_sim, seed)
}

/// As [`consistency_band`], for histograms grouped into `target` bins by
/// [`RankHistogram::rebin`].
pub fn consistency_band_grouped(
    n_scenarios: usize,
    n_cases: usize,
    target: usize,
    level: f64,
    n_sim: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if n_scenarios == 0 || n_cases == 0 || n_sim == 0 || target == 0 || !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(
            "consistency band needs positive counts and a level in (0, 1)".into(),
        ));
    }
    let bins = n_scenarios + 1;
    let target = target.min(bins);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_bin: Vec<Vec<f64>> = vec![Vec::with_capacity(n_sim); target];
    let mut counts = vec![0usize; target];
    for _ in 0..n_sim {
        counts.iter_mut().for_each(|c| *c = 0);
        for _ in 0..n_cases {
            counts[rng.random_range(0..bins) * target / bins] += 1;
        }
        for (b, c) in counts.iter().enumerate() {
            per_bin[b].push(*c as f64);
        }
    }
    let tail = (1.0 - level) / 2.0;
    Ok(per_bin
        .into_iter()
        .map(|mut v| {
            v.sort_by(f64::total_cmp);
            (quantile_sorted(&v, tail), quantile_sorted(&v, 1.0 - tail))
        })
        .collect())
}

/// `sum_b |f_b - 1/B|` over the histogram's bins.
pub fn deviation_from_uniform(h: &RankHistogram) -> f64 {
    let uniform = 1.0 / h.n_bins() as f64;
    h.frequencies().iter().map(|f| (f - uniform).abs()).sum()
}
