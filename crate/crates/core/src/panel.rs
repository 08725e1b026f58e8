//! Dense container for aligned scenario forecasts and observations.

use crate::error::{Error, Result};
use crate::hierarchy::{coherence_gap, Hierarchy, INGEST_COHERENCE_TOL};

/// Scenario forecasts for every series of a hierarchy, indexed by
/// (issuance, lead, scenario, series).
///
/// Scenario index `xi` is the coupling key across series: entry `xi` of every
/// series belongs to the same joint outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioPanel {
    hierarchy: Hierarchy,
    issuance_times: Vec<String>,
    lead_times: Vec<usize>,
    n_scenarios: usize,
    data: Vec<f64>,
    observations: Option<Vec<f64>>,
}

impl ScenarioPanel {
    pub fn new(
        hierarchy: Hierarchy,
        issuance_times: Vec<String>,
        lead_times: Vec<usize>,
        n_scenarios: usize,
        data: Vec<f64>,
        observations: Option<Vec<f64>>,
    ) -> Result<Self> {
        let s = hierarchy.n_series();
        let cases = issuance_times.len() * lead_times.len();
        if n_scenarios == 0 {
            return Err(Error::Config("panel needs at least one scenario".into()));
        }
        if data.len() != cases * n_scenarios * s {
            return Err(Error::Shape {
                expected: format!("{} forecast values", cases * n_scenarios * s),
                actual: format!("{}", data.len()),
            });
        }
        if let Some(obs) = &observations {
            if obs.len() != cases * s {
                return Err(Error::Shape {
                    expected: format!("{} observation values", cases * s),
                    actual: format!("{}", obs.len()),
                });
            }
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scenario panel"));
        }
        let panel = Self {
            hierarchy,
            issuance_times,
            lead_times,
            n_scenarios,
            data,
            observations,
        };
        panel.check_observation_coherence()?;
        Ok(panel)
    }

    fn check_observation_coherence(&self) -> Result<()> {
        if self.observations.is_none() {
            return Ok(());
        }
        for t in 0..self.n_issuances() {
            for k in 0..self.n_leads() {
                let obs = self.observation(t, k).expect("checked above");
                if obs.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("observations"));
                }
                if coherence_gap(obs) > INGEST_COHERENCE_TOL {
                    return Err(Error::IncoherentObservation {
                        issuance: self.issuance_times[t].clone(),
                        lead: self.lead_times[k],
                        aggregate: obs[0],
                        parts: obs[1..].iter().sum(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        &self.hierarchy
    }

    pub fn issuance_times(&self) -> &[String] {
        &self.issuance_times
    }

    pub fn lead_times(&self) -> &[usize] {
        &self.lead_times
    }

    pub fn n_issuances(&self) -> usize {
        self.issuance_times.len()
    }

    pub fn n_leads(&self) -> usize {
        self.lead_times.len()
    }

    pub fn n_scenarios(&self) -> usize {
        self.n_scenarios
    }

    pub fn n_series(&self) -> usize {
        self.hierarchy.n_series()
    }

    /// Number of (issuance, lead) pairs.
    pub fn n_cases(&self) -> usize {
        self.n_issuances() * self.n_leads()
    }

    pub fn has_observations(&self) -> bool {
        self.observations.is_some()
    }

    /// Flat case index for (issuance, lead).
    pub fn case_index(&self, t: usize, k: usize) -> usize {
        t * self.n_leads() + k
    }

    /// (issuance, lead) positions for a flat case index.
    pub fn case_position(&self, case: usize) -> (usize, usize) {
        (case / self.n_leads(), case % self.n_leads())
    }

    /// Row-major `N x (m+1)` block of scenarios for one case.
    pub fn case_scenarios(&self, case: usize) -> &[f64] {
        let w = self.n_scenarios * self.n_series();
        &self.data[case * w..(case + 1) * w]
    }

    pub fn scenarios(&self, t: usize, k: usize) -> &[f64] {
        self.case_scenarios(self.case_index(t, k))
    }

    pub fn scenario(&self, t: usize, k: usize, xi: usize) -> &[f64] {
        let s = self.n_series();
        &self.scenarios(t, k)[xi * s..(xi + 1) * s]
    }

    /// Scenario rows of one case as owned vectors.
    pub fn case_rows(&self, case: usize) -> Vec<Vec<f64>> {
        self.case_scenarios(case)
            .chunks(self.n_series())
            .map(<[f64]>::to_vec)
            .collect()
    }

    pub fn case_observation(&self, case: usize) -> Option<&[f64]> {
        let s = self.n_series();
        self.observations
            .as_ref()
            .map(|o| &o[case * s..(case + 1) * s])
    }

    pub fn observation(&self, t: usize, k: usize) -> Option<&[f64]> {
        self.case_observation(self.case_index(t, k))
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn observations(&self) -> Option<&[f64]> {
        self.observations.as_deref()
    }

    /// Same panel with new scenario values (observations and indices kept).
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(
            self.hierarchy.clone(),
            self.issuance_times.clone(),
            self.lead_times.clone(),
            self.n_scenarios,
            data,
            self.observations.clone(),
        )
    }

    /// Sub-panel restricted to a contiguous range of issuance positions.
    pub fn slice_issuances(&self, range: std::ops::Range<usize>) -> Self {
        let per_issuance = self.n_leads() * self.n_scenarios * self.n_series();
        let obs_per_issuance = self.n_leads() * self.n_series();
        Self {
            hierarchy: self.hierarchy.clone(),
            issuance_times: self.issuance_times[range.clone()].to_vec(),
            lead_times: self.lead_times.clone(),
            n_scenarios: self.n_scenarios,
            data: self.data[range.start * per_issuance..range.end * per_issuance].to_vec(),
            observations: self.observations.as_ref().map(|o| {
                o[range.start * obs_per_issuance..range.end * obs_per_issuance].to_vec()
            }),
        }
    }
}
