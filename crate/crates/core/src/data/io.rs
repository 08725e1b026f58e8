use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::Deserialize;

use super::DatasetManifest;
use crate::error::{Error, Result};
use crate::hierarchy::{coherence_gap, Hierarchy, INGEST_COHERENCE_TOL};
use crate::panel::ScenarioPanel;

pub const LONG_HEADER: [&str; 5] = ["issuance_time", "lead_time", "scenario", "series", "value_mw"];

/// Scenario index used for observation rows.
const OBSERVATION_SCENARIO: i64 = -1;

#[derive(Debug, Deserialize)]
struct LongRow {
    issuance_time: String,
    lead_time: usize,
    scenario: i64,
    series: String,
    value_mw: f64,
}

pub fn load_panel(manifest: &DatasetManifest) -> Result<ScenarioPanel> {
    let hierarchy = manifest.hierarchy()?;
    let forecasts = manifest.resolve(&manifest.forecasts);
    let observations = manifest.observations.as_ref().map(|p| manifest.resolve(p));
    read_panel_files(
        hierarchy,
        &forecasts,
        observations.as_deref(),
        manifest.n_scenarios,
    )
}

fn read_rows(path: &Path) -> Result<Vec<LongRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path, e))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| Error::parse(path, e)))
        .collect()
}

/// Reads long-form forecast (and optionally observation) files into a panel with
/// `n_scenarios` scenarios per case.
///
/// Rows with scenario `-1` are observations, whichever file they appear in. A
/// series whose scenario count differs from `n_scenarios` is resampled by
/// empirical-quantile matching. Values are clipped to `[0, capacity]`.
pub fn read_panel_files(
    hierarchy: Hierarchy,
    forecasts: &Path,
    observations: Option<&Path>,
    n_scenarios: usize,
) -> Result<ScenarioPanel> {
    let mut rows = read_rows(forecasts)?;
    if let Some(p) = observations {
        rows.extend(read_rows(p)?);
    }
    if n_scenarios == 0 {
        return Err(Error::Config("n_scenarios must be positive".into()));
    }

    let labels = hierarchy.series_labels();
    let series_index: HashMap<&str, usize> =
        labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let n_series = labels.len();

    let mut times = BTreeSet::new();
    let mut leads = BTreeSet::new();
    let mut counts = vec![0usize; n_series];
    for row in &rows {
        let s = *series_index
            .get(row.series.as_str())
            .ok_or_else(|| Error::parse(forecasts, format!("unknown series '{}'", row.series)))?;
        if row.scenario >= 0 {
            times.insert(row.issuance_time.clone());
            leads.insert(row.lead_time);
            counts[s] = counts[s].max(row.scenario as usize + 1);
        } else if row.scenario != OBSERVATION_SCENARIO {
            return Err(Error::parse(
                forecasts,
                format!("scenario index {} is invalid", row.scenario),
            ));
        }
        if !row.value_mw.is_finite() {
            return Err(Error::NonFinite("input file"));
        }
    }
    if times.is_empty() {
        return Err(Error::parse(forecasts, "no forecast rows"));
    }
    let times: Vec<String> = times.into_iter().collect();
    let leads: Vec<usize> = leads.into_iter().collect();
    let time_index: HashMap<&str, usize> =
        times.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let lead_index: HashMap<usize, usize> = leads.iter().enumerate().map(|(i, l)| (*l, i)).collect();
    let n_cases = times.len() * leads.len();

    // Per-series cells, sized by that series' own scenario count.
    let mut cells: Vec<Vec<Option<f64>>> =
        counts.iter().map(|c| vec![None; n_cases * c]).collect();
    let mut obs_cells: Vec<Option<f64>> = vec![None; n_cases * n_series];
    let mut any_obs = false;
    for row in &rows {
        let s = series_index[row.series.as_str()];
        let (t, k) = match (
            time_index.get(row.issuance_time.as_str()),
            lead_index.get(&row.lead_time),
        ) {
            (Some(t), Some(k)) => (*t, *k),
            _ => {
                return Err(Error::parse(
                    forecasts,
                    format!(
                        "observation at ({}, {}) has no matching forecast",
                        row.issuance_time, row.lead_time
                    ),
                ))
            }
        };
        let case = t * leads.len() + k;
        let slot = if row.scenario == OBSERVATION_SCENARIO {
            any_obs = true;
            &mut obs_cells[case * n_series + s]
        } else {
            &mut cells[s][case * counts[s] + row.scenario as usize]
        };
        if slot.replace(row.value_mw).is_some() {
            return Err(Error::parse(
                forecasts,
                format!(
                    "duplicate row ({}, {}, {}, {})",
                    row.issuance_time, row.lead_time, row.scenario, row.series
                ),
            ));
        }
    }

    let mut clipped = 0usize;
    let mut data = vec![0.0; n_cases * n_scenarios * n_series];
    for case in 0..n_cases {
        let (t, k) = (case / leads.len(), case % leads.len());
        for s in 0..n_series {
            let count = counts[s];
            let missing = |xi: usize| Error::MissingCell {
                issuance: times[t].clone(),
                lead: leads[k],
                scenario: xi as i64,
                series: labels[s].clone(),
            };
            if count == 0 {
                return Err(missing(0));
            }
            let mut column = Vec::with_capacity(count);
            for xi in 0..count {
                let v = cells[s][case * count + xi].ok_or_else(|| missing(xi))?;
                column.push(clip(v, hierarchy.series_capacity(s), &mut clipped));
            }
            if count != n_scenarios {
                column = resample_quantiles(column, n_scenarios);
            }
            for (xi, v) in column.into_iter().enumerate() {
                data[(case * n_scenarios + xi) * n_series + s] = v;
            }
        }
    }

    let observations = if any_obs {
        let mut obs = vec![0.0; n_cases * n_series];
        for case in 0..n_cases {
            let (t, k) = (case / leads.len(), case % leads.len());
            let mut row = Vec::with_capacity(n_series);
            for s in 0..n_series {
                row.push(obs_cells[case * n_series + s].ok_or_else(|| Error::MissingCell {
                    issuance: times[t].clone(),
                    lead: leads[k],
                    scenario: OBSERVATION_SCENARIO,
                    series: labels[s].clone(),
                })?);
            }
            if coherence_gap(&row) > INGEST_COHERENCE_TOL {
                return Err(Error::IncoherentObservation {
                    issuance: times[t].clone(),
                    lead: leads[k],
                    aggregate: row[0],
                    parts: row[1..].iter().sum(),
                });
            }
            let before = clipped;
            for s in 1..n_series {
                row[s] = clip(row[s], hierarchy.series_capacity(s), &mut clipped);
            }
            if clipped != before {
                row[0] = row[1..].iter().sum();
            }
            obs[case * n_series..(case + 1) * n_series].copy_from_slice(&row);
        }
        Some(obs)
    } else {
        None
    };

    if clipped > 0 {
        log::warn!(
            "{}: clipped {clipped} values to [0, capacity]",
            forecasts.display()
        );
    }
    ScenarioPanel::new(hierarchy, times, leads, n_scenarios, data, observations)
}

fn clip(v: f64, cap: f64, clipped: &mut usize) -> f64 {
    if v < 0.0 || v > cap {
        *clipped += 1;
        v.clamp(0.0, cap)
    } else {
        v
    }
}

/// Empirical quantiles of `values` at levels `(j + 0.5) / n`.
fn resample_quantiles(mut values: Vec<f64>, n: usize) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    let len = values.len();
    (0..n)
        .map(|j| {
            let level = (j as f64 + 0.5) / n as f64;
            values[((level * len as f64).floor() as usize).min(len - 1)]
        })
        .collect()
}

/// Writes scenarios (and observations, if present and `with_observations`) in long form.
pub fn write_long_csv(path: &Path, panel: &ScenarioPanel, with_scenarios: bool, with_observations: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
    let labels = panel.hierarchy().series_labels();
    let csv_err = |e: csv::Error| Error::parse(path, e);
    w.write_record(LONG_HEADER).map_err(csv_err)?;
    for t in 0..panel.n_issuances() {
        for k in 0..panel.n_leads() {
            let time = &panel.issuance_times()[t];
            let lead = panel.lead_times()[k].to_string();
            if with_scenarios {
                for xi in 0..panel.n_scenarios() {
                    let xi_s = xi.to_string();
                    for (s, v) in panel.scenario(t, k, xi).iter().enumerate() {
                        w.write_record([time, &lead, &xi_s, &labels[s], &v.to_string()])
                            .map_err(csv_err)?;
                    }
                }
            }
            if with_observations {
                if let Some(obs) = panel.observation(t, k) {
                    for (s, v) in obs.iter().enumerate() {
                        w.write_record([time, &lead, "-1", &labels[s], &v.to_string()])
                            .map_err(csv_err)?;
                    }
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Saves scenarios to `forecasts` and, when present, observations to `observations`.
pub fn save_panel(panel: &ScenarioPanel, forecasts: &Path, observations: &Path) -> Result<()> {
    write_long_csv(forecasts, panel, true, false)?;
    if panel.has_observations() {
        write_long_csv(observations, panel, false, true)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Site;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        writeln!(f, "issuance_time,lead_time,scenario,series,value_mw").unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    fn two_site() -> Hierarchy {
        Hierarchy::new(vec!["a".into(), "b".into()], vec![10.0, 20.0]).unwrap()
    }

    #[test]
    fn clips_out_of_range_values() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(
            dir.path(),
            "f.csv",
            "d1,1,0,aggregate,5\nd1,1,0,a,-3\nd1,1,0,b,25\n\
             d1,1,1,aggregate,40\nd1,1,1,a,2\nd1,1,1,b,3\n",
        );
        let p = read_panel_files(two_site(), &f, None, 2).unwrap();
        assert_eq!(p.scenario(0, 0, 0), &[5.0, 0.0, 20.0]);
        assert_eq!(p.scenario(0, 0, 1), &[30.0, 2.0, 3.0]);
        assert!(!p.has_observations());
    }

    #[test]
    fn missing_cell_names_first_index() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(
            dir.path(),
            "f.csv",
            "d1,1,0,aggregate,5\nd1,1,0,a,1\nd1,1,0,b,4\nd1,1,1,aggregate,5\nd1,1,1,b,4\nd1,1,1,a,1\n\
             d2,1,0,aggregate,5\nd2,1,0,a,1\nd2,1,1,aggregate,5\nd2,1,1,a,1\nd2,1,1,b,4\n",
        );
        match read_panel_files(two_site(), &f, None, 2) {
            Err(Error::MissingCell {
                issuance,
                lead,
                scenario,
                series,
            }) => {
                assert_eq!((issuance.as_str(), lead, scenario, series.as_str()), ("d2", 1, 0, "b"));
            }
            other => panic!("expected missing cell, got {other:?}"),
        }
    }

    #[test]
    fn incoherent_observation_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(
            dir.path(),
            "f.csv",
            "d1,1,0,aggregate,5\nd1,1,0,a,1\nd1,1,0,b,4\nd1,1,1,aggregate,5\nd1,1,1,a,1\nd1,1,1,b,4\n",
        );
        let o = write(
            dir.path(),
            "o.csv",
            "d1,1,-1,aggregate,100\nd1,1,-1,a,5\nd1,1,-1,b,85\n",
        );
        let h = Hierarchy::new(vec!["a".into(), "b".into()], vec![100.0, 100.0]).unwrap();
        assert!(matches!(
            read_panel_files(h, &f, Some(&o), 2),
            Err(Error::IncoherentObservation { .. })
        ));
    }

    #[test]
    fn resamples_uneven_scenario_counts() {
        let dir = tempfile::tempdir().unwrap();
        // Series b carries four members, the others two.
        let f = write(
            dir.path(),
            "f.csv",
            "d1,1,0,aggregate,5\nd1,1,1,aggregate,6\nd1,1,0,a,1\nd1,1,1,a,2\n\
             d1,1,0,b,4\nd1,1,1,b,1\nd1,1,2,b,3\nd1,1,3,b,2\n",
        );
        let p = read_panel_files(two_site(), &f, None, 2).unwrap();
        // Levels 0.25 and 0.75 over sorted {1,2,3,4}.
        assert_eq!(p.scenario(0, 0, 0)[2], 2.0);
        assert_eq!(p.scenario(0, 0, 1)[2], 4.0);
        assert_eq!(p.scenario(0, 0, 1)[1], 2.0);
    }

    #[test]
    fn table_capacity_manifest_totals() {
        let sites = [
            ("Marble_River", 215.25),
            ("Noble_Clinton", 100.5),
            ("Noble_Ellenburg", 81.0),
            ("Noble_Altona", 97.5),
            ("Noble_Chateaugay", 106.5),
            ("Jericho_Rise", 77.7),
            ("Bull_Run_II_Wind", 145.4),
            ("Bull_Run_Wind", 303.6),
        ];
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::new();
        for xi in 0..2 {
            body.push_str(&format!("2018-01-01,1,{xi},aggregate,100\n"));
            for (name, _) in &sites {
                body.push_str(&format!("2018-01-01,1,{xi},{name},10\n"));
            }
        }
        write(dir.path(), "f.csv", &body);
        let manifest = DatasetManifest {
            sites: sites
                .iter()
                .map(|(n, c)| Site {
                    name: n.to_string(),
                    capacity: *c,
                })
                .collect(),
            forecasts: "f.csv".into(),
            observations: None,
            n_scenarios: 2,
            split_fraction: 0.8,
            seed: 1,
            base_dir: dir.path().to_path_buf(),
        };
        let p = load_panel(&manifest).unwrap();
        assert!((p.hierarchy().total_capacity() - 1127.45).abs() < 1e-9);
        assert_eq!(p.n_series(), 9);
    }
}
