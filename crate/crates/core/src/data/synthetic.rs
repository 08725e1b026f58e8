//! Seeded synthetic wind-power datasets.
//!
//! Truth: a latent Gaussian field over sites with correlation `exp(-|i-j|/L)`,
//! pushed through a logistic map and scaled by capacity. Each (day, lead) has a
//! latent mean that evolves as an AR(1) process over lead times; observations
//! and scenarios are conditional draws around it.
//!
//! Base forecasts are drawn from a corrupted version of the same conditional:
//! latent spread multiplied by `shrink`, the logistic output raised to
//! `warp_exponent`, then shifted by `bias_fraction` of capacity. The aggregate
//! series is an independent corrupted draw of the sum, so base forecasts are
//! incoherent with their parts.

use chrono::{Days, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{aggregate_bottom, Hierarchy};
use crate::panel::ScenarioPanel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub m: usize,
    pub n_scenarios: usize,
    pub n_days: usize,
    #[serde(default = "defaults::n_leads")]
    pub n_leads: usize,
    /// Site capacities, MW. Defaults to `100 + 25 * (i % 4)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacities: Option<Vec<f64>>,
    /// Site names. Default to `wpp1`, `wpp2`, ...
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
    #[serde(default = "defaults::correlation_length")]
    pub correlation_length: f64,
    /// Latent offset before the logistic map; negative values give capacity factors below 0.5.
    #[serde(default = "defaults::latent_mean")]
    pub latent_mean: f64,
    /// Spread of the day-to-day latent mean.
    #[serde(default = "defaults::day_std")]
    pub day_std: f64,
    #[serde(default = "defaults::lead_autocorr")]
    pub lead_autocorr: f64,
    /// Conditional spread of outcomes around the latent mean.
    #[serde(default = "defaults::noise_std")]
    pub noise_std: f64,
    #[serde(default)]
    pub bias_fraction: f64,
    #[serde(default = "defaults::one")]
    pub shrink: f64,
    #[serde(default = "defaults::one")]
    pub warp_exponent: f64,
    #[serde(default = "defaults::start_date")]
    pub start_date: String,
    pub seed: u64,
}

mod defaults {
    pub fn n_leads() -> usize {
        24
    }
    pub fn correlation_length() -> f64 {
        2.0
    }
    pub fn latent_mean() -> f64 {
        -0.5
    }
    pub fn day_std() -> f64 {
        1.0
    }
    pub fn lead_autocorr() -> f64 {
        0.9
    }
    pub fn noise_std() -> f64 {
        0.6
    }
    pub fn one() -> f64 {
        1.0
    }
    pub fn start_date() -> String {
        "2018-01-01".into()
    }
}

impl SyntheticSpec {
    /// A spec with every optional knob at its default.
    pub fn new(m: usize, n_scenarios: usize, n_days: usize, seed: u64) -> Self {
        Self {
            m,
            n_scenarios,
            n_days,
            n_leads: defaults::n_leads(),
            capacities: None,
            names: None,
            correlation_length: defaults::correlation_length(),
            latent_mean: defaults::latent_mean(),
            day_std: defaults::day_std(),
            lead_autocorr: defaults::lead_autocorr(),
            noise_std: defaults::noise_std(),
            bias_fraction: 0.0,
            shrink: 1.0,
            warp_exponent: 1.0,
            start_date: defaults::start_date(),
            seed,
        }
    }

    /// Reads and validates a TOML spec.
    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SyntheticSpec = toml::from_str(&text).map_err(|e| Error::parse(path, e))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.m == 0 || self.n_scenarios == 0 || self.n_days == 0 || self.n_leads == 0 {
            return fail("m, n_scenarios, n_days and n_leads must be positive".into());
        }
        if !(self.shrink > 0.0 && self.shrink <= 1.0) {
            return fail(format!("shrink must lie in (0, 1], got {}", self.shrink));
        }
        if !(self.correlation_length > 0.0) {
            return fail("correlation_length must be positive".into());
        }
        if !(self.warp_exponent > 0.0 && self.warp_exponent.is_finite()) {
            return fail("warp_exponent must be positive".into());
        }
        if !(self.lead_autocorr >= 0.0 && self.lead_autocorr < 1.0) {
            return fail("lead_autocorr must lie in [0, 1)".into());
        }
        if !(self.day_std >= 0.0 && self.noise_std > 0.0) {
            return fail("day_std must be nonnegative and noise_std positive".into());
        }
        if !self.bias_fraction.is_finite() || !self.latent_mean.is_finite() {
            return fail("bias_fraction and latent_mean must be finite".into());
        }
        if let Some(c) = &self.capacities {
            if c.len() != self.m {
                return fail(format!("{} capacities for m = {}", c.len(), self.m));
            }
        }
        if let Some(n) = &self.names {
            if n.len() != self.m {
                return fail(format!("{} names for m = {}", n.len(), self.m));
            }
        }
        NaiveDate::parse_from_str(&self.start_date, "%Y-%m-%d")
            .map_err(|e| Error::Config(format!("start_date: {e}")))?;
        Ok(())
    }

    pub fn hierarchy(&self) -> Result<Hierarchy> {
        let caps = self
            .capacities
            .clone()
            .unwrap_or_else(|| (0..self.m).map(|i| 100.0 + 25.0 * (i % 4) as f64).collect());
        match &self.names {
            Some(names) => Hierarchy::new(names.clone(), caps),
            None => Hierarchy::with_capacities(caps),
        }
    }
}

/// Draws fresh joint outcomes from the true conditional distribution of a generated dataset.
#[derive(Debug, Clone)]
pub struct TruthSampler {
    hierarchy: Hierarchy,
    n_leads: usize,
    latent_mean: f64,
    noise_std: f64,
    chol: DMatrix<f64>,
    means: Vec<f64>,
}

impl TruthSampler {
    pub fn hierarchy(&self) -> &Hierarchy {
        &self.hierarchy
    }

    /// One bottom-level outcome for (day, lead position), MW.
    pub fn sample<R: Rng + ?Sized>(&self, day: usize, lead: usize, rng: &mut R) -> Vec<f64> {
        let m = self.hierarchy.m();
        let start = (day * self.n_leads + lead) * m;
        let mu = &self.means[start..start + m];
        let z = correlated_normal(&self.chol, rng);
        (0..m)
            .map(|i| {
                let u = logistic(self.latent_mean + mu[i] + self.noise_std * z[i]);
                self.hierarchy.capacities()[i] * u
            })
            .collect()
    }

    /// `n` outcomes as a row-major `n x m` matrix.
    pub fn sample_many<R: Rng + ?Sized>(
        &self,
        day: usize,
        lead: usize,
        n: usize,
        rng: &mut R,
    ) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample(day, lead, rng)).collect()
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn correlated_normal<R: Rng + ?Sized>(chol: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let n = chol.nrows();
    let eps = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
    chol * eps
}

fn correlation_cholesky(m: usize, length: f64) -> DMatrix<f64> {
    let c = DMatrix::from_fn(m, m, |i, j| (-(i.abs_diff(j) as f64) / length).exp());
    // exp(-|i-j|/L) is the AR(1) correlation, positive definite for every L > 0.
    c.cholesky()
        .expect("exponential correlation is positive definite")
        .l()
}

/// Generates a panel with observations, deterministic given `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(ScenarioPanel, TruthSampler)> {
    spec.validate()?;
    let hierarchy = spec.hierarchy()?;
    let m = spec.m;
    let n = spec.n_scenarios;
    let caps = hierarchy.capacities().to_vec();
    let chol = correlation_cholesky(m, spec.correlation_length);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let innovation = (1.0 - spec.lead_autocorr * spec.lead_autocorr).sqrt();
    let mut means = Vec::with_capacity(spec.n_days * spec.n_leads * m);
    for _ in 0..spec.n_days {
        let mut mu = correlated_normal(&chol, &mut rng) * spec.day_std;
        for k in 0..spec.n_leads {
            if k > 0 {
                mu = mu * spec.lead_autocorr
                    + correlated_normal(&chol, &mut rng) * (spec.day_std * innovation);
            }
            means.extend(mu.iter());
        }
    }

    let truth = TruthSampler {
        hierarchy: hierarchy.clone(),
        n_leads: spec.n_leads,
        latent_mean: spec.latent_mean,
        noise_std: spec.noise_std,
        chol,
        means,
    };

    let corrupted = |mu: &[f64], rng: &mut ChaCha8Rng| -> Vec<f64> {
        let z = correlated_normal(&truth.chol, rng);
        (0..m)
            .map(|i| {
                let u = logistic(spec.latent_mean + mu[i] + spec.shrink * spec.noise_std * z[i]);
                let u = u.powf(spec.warp_exponent) + spec.bias_fraction;
                caps[i] * u.clamp(0.0, 1.0)
            })
            .collect()
    };

    let s = m + 1;
    let mut data = Vec::with_capacity(spec.n_days * spec.n_leads * n * s);
    let mut observations = Vec::with_capacity(spec.n_days * spec.n_leads * s);
    for day in 0..spec.n_days {
        for k in 0..spec.n_leads {
            let start = (day * spec.n_leads + k) * m;
            let mu = &truth.means[start..start + m];
            observations.extend(aggregate_bottom(&truth.sample(day, k, &mut rng)));
            for _ in 0..n {
                let bottom = corrupted(mu, &mut rng);
                let aggregate: f64 = corrupted(mu, &mut rng).iter().sum();
                data.push(aggregate);
                data.extend(bottom);
            }
        }
    }

    let start = NaiveDate::parse_from_str(&spec.start_date, "%Y-%m-%d")
        .map_err(|e| Error::Config(format!("start_date: {e}")))?;
    let times = (0..spec.n_days)
        .map(|d| {
            start
                .checked_add_days(Days::new(d as u64))
                .map(|date| date.format("%Y-%m-%d").to_string())
                .ok_or_else(|| Error::Config("date overflow".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let leads = (1..=spec.n_leads).collect();
    let panel = ScenarioPanel::new(hierarchy, times, leads, n, data, Some(observations))?;
    Ok((panel, truth))
}
