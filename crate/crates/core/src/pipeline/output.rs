use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::evaluate::{evaluate, Evaluation, Metrics};
use super::{load_dataset, load_reconciler, split_dataset, train_reconciler, RunConfig, SeedPlan, INDEPENDENT};
use crate::allocation::{audit_core, audit_superadditivity};
use crate::data::{generate_synthetic, read_panel_files, save_panel, write_long_csv, DatasetManifest, Site, SyntheticSpec};
use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::market::PriceTriple;
use crate::reconcile::{Checkpoint, ReconcilerRegistry, TrainingReport};
use crate::rng::derive_seed;
use crate::scoring::{consistency_band_grouped, RankHistogram};

pub(super) const CHECKPOINT: &str = "checkpoint.json";
pub const RUN_MANIFEST: &str = "run_manifest.json";
const METRICS: &str = "metrics.json";
const RECONCILED: &str = "reconciled_scenarios.csv";
const ALLOCATIONS: &str = "allocations.csv";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
}

struct Table {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl Table {
    fn create(path: PathBuf, header: &[&str]) -> Result<Self> {
        let mut writer = csv::Writer::from_path(&path).map_err(|e| Error::parse(&path, e))?;
        writer.write_record(header).map_err(|e| Error::parse(&path, e))?;
        Ok(Self { path, writer })
    }

    fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) -> Result<()> {
        self.writer
            .write_record(fields.into_iter().collect::<Vec<_>>())
            .map_err(|e| Error::parse(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyRecord {
    pub names: Vec<String>,
    pub capacities: Vec<f64>,
    pub total_capacity: f64,
    pub fingerprint: String,
}

impl HierarchyRecord {
    fn of(h: &Hierarchy) -> Self {
        Self {
            names: h.names().to_vec(),
            capacities: h.capacities().to_vec(),
            total_capacity: h.total_capacity(),
            fingerprint: h.fingerprint(),
        }
    }

    fn hierarchy(&self) -> Result<Hierarchy> {
        Hierarchy::new(self.names.clone(), self.capacities.clone())
    }
}

/// Everything needed to replay a command: the resolved config, the derived
/// seeds and what the data looked like.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub method: String,
    pub seed: u64,
    pub seeds: SeedPlan,
    pub prices: PriceTriple,
    pub config: String,
    pub hierarchy: HierarchyRecord,
    pub n_scenarios: usize,
    pub split_fraction: f64,
    pub fit_issuances: Vec<String>,
    pub validation_issuances: Vec<String>,
    pub test_issuances: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_variant: Option<String>,
}

fn manifest_for(cfg: &RunConfig, command: &str, splits: &super::Splits, split_fraction: f64, checkpoint: Option<&Checkpoint>) -> RunManifest {
    RunManifest {
        tool: "windpool".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        method: cfg.method.clone(),
        seed: cfg.seed,
        seeds: cfg.seeds(),
        prices: cfg.prices,
        config: cfg.to_toml(),
        hierarchy: HierarchyRecord::of(splits.test.hierarchy()),
        n_scenarios: splits.test.n_scenarios(),
        split_fraction,
        fit_issuances: splits.fit.issuance_times().to_vec(),
        validation_issuances: splits.validation.issuance_times().to_vec(),
        test_issuances: splits.test.issuance_times().to_vec(),
        checkpoint_variant: checkpoint.map(|c| c.variant.clone()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TruthRecord {
    generator: String,
    spec: SyntheticSpec,
    hierarchy: HierarchyRecord,
}

/// Writes a synthetic dataset: `forecasts.csv`, `observations.csv`,
/// `manifest.toml` and `truth.json` (the generating spec, corruption included).
pub fn generate_dataset(spec: &SyntheticSpec, dir: &Path) -> Result<DatasetManifest> {
    let (panel, _) = generate_synthetic(spec)?;
    create_dir(dir)?;
    save_panel(&panel, &dir.join("forecasts.csv"), &dir.join("observations.csv"))?;
    let h = panel.hierarchy();
    let manifest = DatasetManifest {
        sites: h
            .names()
            .iter()
            .zip(h.capacities())
            .map(|(name, capacity)| Site {
                name: name.clone(),
                capacity: *capacity,
            })
            .collect(),
        forecasts: "forecasts.csv".into(),
        observations: Some("observations.csv".into()),
        n_scenarios: spec.n_scenarios,
        split_fraction: 0.8,
        seed: spec.seed,
        base_dir: dir.to_path_buf(),
    };
    let path = dir.join("manifest.toml");
    fs::write(&path, manifest.to_toml()).map_err(|e| Error::io(&path, e))?;
    write_json(
        &dir.join("truth.json"),
        &TruthRecord {
            generator: "logistic-gaussian-field".into(),
            spec: spec.clone(),
            hierarchy: HierarchyRecord::of(h),
        },
    )?;
    Ok(manifest)
}

#[derive(Debug, Clone, Serialize)]
struct Timing {
    wall_time_secs: f64,
}

/// Trains the configured method and writes `checkpoint.json`,
/// `training_report.json`, `training_curve.csv`, `run_manifest.json` and
/// `timing.json` (the only file that varies between reruns).
pub fn train_to_dir(cfg: &RunConfig, registry: &ReconcilerRegistry) -> Result<TrainingReport> {
    cfg.validate(registry)?;
    let (panel, fraction) = load_dataset(cfg)?;
    let splits = split_dataset(&panel, fraction, cfg.training.validation_fraction)?;
    let (reconciler, report) = train_reconciler(cfg, registry, &splits)?;
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    let checkpoint = Checkpoint::of(reconciler.as_ref(), cfg.seeds().init);
    checkpoint.save(&dir.join(CHECKPOINT))?;
    write_json(&dir.join("training_report.json"), &report)?;
    let mut curve = Table::create(dir.join("training_curve.csv"), &["epoch", "train_aes", "val_aes", "selected"])?;
    for e in &report.epochs {
        curve.row([
            e.epoch.to_string(),
            opt(e.train_aes),
            e.val_aes.to_string(),
            (e.epoch == report.selected_epoch).to_string(),
        ])?;
    }
    curve.finish()?;
    write_json(
        &dir.join(RUN_MANIFEST),
        &manifest_for(cfg, "train", &splits, fraction, Some(&checkpoint)),
    )?;
    write_json(
        &dir.join("timing.json"),
        &Timing {
            wall_time_secs: report.wall_time_secs,
        },
    )?;
    Ok(report)
}

/// Evaluates the configured method on the test split and writes every run artifact.
pub fn run(cfg: &RunConfig, registry: &ReconcilerRegistry) -> Result<Evaluation> {
    cfg.validate(registry)?;
    let (panel, fraction) = load_dataset(cfg)?;
    let splits = split_dataset(&panel, fraction, cfg.training.validation_fraction)?;
    let loaded = load_reconciler(cfg, registry, &splits.test)?;
    let (reconciler, checkpoint) = match &loaded {
        Some((r, c)) => (Some(r.as_ref()), c.as_ref()),
        None => (None, None),
    };
    let ev = evaluate(&cfg.method, reconciler, &splits.test, &cfg.prices, cfg.seed, &cfg.evaluation)?;
    create_dir(&cfg.output_dir)?;
    write_evaluation(&cfg.output_dir, &ev, cfg)?;
    write_json(
        &cfg.output_dir.join(RUN_MANIFEST),
        &manifest_for(cfg, "run", &splits, fraction, checkpoint),
    )?;
    Ok(ev)
}

/// Writes `offers.csv`, `duals.csv`, `allocations.csv`, `ranks.csv`,
/// `histogram.csv`, `histogram_display.csv`, `metrics.json`, `core_audit.json`
/// and, for cooperative methods, `reconciled_scenarios.csv`.
pub fn write_evaluation(dir: &Path, ev: &Evaluation, cfg: &RunConfig) -> Result<()> {
    let method = &ev.metrics.method;
    let names = ev.scored.hierarchy().names().to_vec();
    let cooperative = method != INDEPENDENT;

    let mut offers = Table::create(
        dir.join("offers.csv"),
        &["issuance", "lead", "series", "offer_mw", "expected_cost", "method"],
    )?;
    let mut duals = Table::create(dir.join("duals.csv"), &["issuance", "lead", "scenario", "dual"])?;
    let mut allocations = Table::create(
        dir.join(ALLOCATIONS),
        &["issuance", "lead", "producer", "a_i", "c_i", "profit_coop", "profit_indep"],
    )?;
    for h in &ev.hours {
        let (t, k) = (h.issuance.clone(), h.lead.to_string());
        if cooperative {
            offers.row([t.clone(), k.clone(), "aggregate".into(), h.offer.to_string(), h.expected_cost.to_string(), method.clone()])?;
        } else {
            for (name, p) in names.iter().zip(&h.producers) {
                offers.row([t.clone(), k.clone(), name.clone(), p.independent_offer.to_string(), p.a.to_string(), method.clone()])?;
            }
        }
        for (xi, nu) in h.duals.iter().enumerate() {
            duals.row([t.clone(), k.clone(), xi.to_string(), nu.to_string()])?;
        }
        for (name, p) in names.iter().zip(&h.producers) {
            allocations.row([
                t.clone(),
                k.clone(),
                name.clone(),
                p.a.to_string(),
                p.c.to_string(),
                opt(p.profit_coop),
                p.profit_indep.to_string(),
            ])?;
        }
    }
    offers.finish()?;
    duals.finish()?;
    allocations.finish()?;

    let mut ranks = Table::create(dir.join("ranks.csv"), &["case", "rank"])?;
    for (case, r) in ev.ranks.iter().enumerate() {
        ranks.row([case.to_string(), r.to_string()])?;
    }
    ranks.finish()?;
    write_histogram(&dir.join("histogram.csv"), &ev.histogram)?;
    let display = display_histogram(&ev.histogram, ev.scored.n_scenarios(), cfg)?;
    write_histogram(&dir.join("histogram_display.csv"), &display)?;

    write_json(&dir.join(METRICS), &ev.metrics)?;

    #[derive(Serialize)]
    struct HourCore<'a> {
        issuance: &'a str,
        lead: usize,
        worst_violation: f64,
        efficiency_gap: f64,
        is_core: bool,
    }
    #[derive(Serialize)]
    struct CoreFile<'a> {
        method: &'a str,
        all_in_core: Option<bool>,
        worst_violation: Option<f64>,
        hours: Vec<HourCore<'a>>,
    }
    let hours = ev
        .hours
        .iter()
        .filter_map(|h| {
            h.audit.as_ref().map(|a| HourCore {
                issuance: &h.issuance,
                lead: h.lead,
                worst_violation: a.worst_violation,
                efficiency_gap: a.efficiency_gap,
                is_core: a.is_core,
            })
        })
        .collect();
    write_json(
        &dir.join("core_audit.json"),
        &CoreFile {
            method,
            all_in_core: ev.metrics.core.as_ref().map(|c| c.all_in_core),
            worst_violation: ev.metrics.core.as_ref().map(|c| c.worst_violation),
            hours,
        },
    )?;
    if cooperative {
        write_long_csv(&dir.join(RECONCILED), &ev.scored, true, true)?;
    }
    Ok(())
}

fn display_histogram(h: &RankHistogram, n_scenarios: usize, cfg: &RunConfig) -> Result<RankHistogram> {
    if cfg.evaluation.display_bins >= h.n_bins() {
        return Ok(h.clone());
    }
    let band = consistency_band_grouped(
        n_scenarios,
        h.total,
        cfg.evaluation.display_bins,
        cfg.evaluation.band_level,
        cfg.evaluation.band_simulations,
        derive_seed(cfg.seeds().band, &[cfg.evaluation.display_bins as u64]),
    )?;
    Ok(h.rebin(cfg.evaluation.display_bins).with_band(band))
}

fn write_histogram(path: &Path, h: &RankHistogram) -> Result<()> {
    let mut t = Table::create(path.to_path_buf(), &["bin", "count", "frequency", "lower", "upper"])?;
    let freq = h.frequencies();
    for (b, c) in h.counts.iter().enumerate() {
        let (lo, hi) = h.band.as_ref().map(|band| band[b]).unwrap_or((f64::NAN, f64::NAN));
        t.row([(b + 1).to_string(), c.to_string(), freq[b].to_string(), lo.to_string(), hi.to_string()])?;
    }
    t.finish()
}

pub fn read_metrics(run_dir: &Path) -> Result<Metrics> {
    read_json(&run_dir.join(METRICS))
}

/// Builds comparison tables from finished runs and writes them to `out`:
/// `aes.csv`, `profits.csv`, `comparison.txt` and `histogram_<label>.csv`.
/// Returns the text table.
pub fn report(run_dirs: &[PathBuf], out: &Path) -> Result<String> {
    if run_dirs.is_empty() {
        return Err(Error::Config("report needs at least one run directory".into()));
    }
    let mut runs = Vec::new();
    for dir in run_dirs {
        if !dir.is_dir() {
            return Err(Error::Config(format!("run directory {} not found", dir.display())));
        }
        runs.push((dir.clone(), read_metrics(dir)?));
    }
    let mut labels: Vec<String> = Vec::new();
    for (_, m) in &runs {
        let base = m.method.clone();
        let mut label = base.clone();
        let mut n = 2;
        while labels.contains(&label) {
            label = format!("{base}#{n}");
            n += 1;
        }
        labels.push(label);
    }
    let producers: Vec<String> = runs[0].1.producers.iter().map(|p| p.name.clone()).collect();
    if runs.iter().any(|(_, m)| m.producers.iter().map(|p| &p.name).ne(producers.iter())) {
        return Err(Error::Config("runs cover different producers".into()));
    }
    create_dir(out)?;

    let mut text = String::from("Forecast quality\n");
    text.push_str(&format!("{:<20} {:>12} {:>10} {:>10} {:>10}\n", "method", "AES (MW)", "SE", "deviation", "in band"));
    let mut aes = Table::create(
        out.join("aes.csv"),
        &["method", "aes", "aes_se", "deviation", "chi_square", "fraction_in_band", "n_cases"],
    )?;
    for (label, (_, m)) in labels.iter().zip(&runs) {
        text.push_str(&format!(
            "{:<20} {:>12.4} {:>10.4} {:>10.4} {:>10.3}\n",
            label, m.aes, m.aes_se, m.deviation, m.fraction_in_band
        ));
        aes.row([
            label.clone(),
            m.aes.to_string(),
            m.aes_se.to_string(),
            m.deviation.to_string(),
            m.chi_square.to_string(),
            m.fraction_in_band.to_string(),
            m.n_cases.to_string(),
        ])?;
    }
    aes.finish()?;

    text.push_str("\nAverage profit per producer ($/hour)\n");
    text.push_str(&format!("{:<20}", "producer"));
    for l in &labels {
        text.push_str(&format!(" {l:>16}"));
    }
    text.push('\n');
    let mut header = vec!["producer".to_string()];
    header.extend(labels.iter().cloned());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut profits = Table::create(out.join("profits.csv"), &header_refs)?;
    for (i, name) in producers.iter().enumerate() {
        let values: Vec<f64> = runs
            .iter()
            .map(|(_, m)| {
                let p = &m.producers[i];
                p.ap_cooperative.unwrap_or(p.ap_independent)
            })
            .collect();
        text.push_str(&format!("{name:<20}"));
        for v in &values {
            text.push_str(&format!(" {v:>16.3}"));
        }
        text.push('\n');
        let mut row = vec![name.clone()];
        row.extend(values.iter().map(f64::to_string));
        profits.row(row)?;
    }
    profits.finish()?;

    for (label, (dir, _)) in labels.iter().zip(&runs) {
        let source = dir.join("histogram_display.csv");
        let target = out.join(format!("histogram_{label}.csv"));
        fs::copy(&source, &target).map_err(|e| Error::io(&source, e))?;
    }
    let path = out.join("comparison.txt");
    fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    Ok(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourCheck {
    pub issuance: String,
    pub lead: usize,
    pub worst_violation: f64,
    pub efficiency_gap: f64,
    pub is_core: bool,
    pub superadditive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub method: String,
    pub hours: usize,
    pub all_in_core: bool,
    pub worst_violation: f64,
    pub all_superadditive: bool,
    pub worst_superadditivity_gap: f64,
    pub per_hour: Vec<HourCheck>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.all_in_core && self.all_superadditive
    }
}

#[derive(Debug, Deserialize)]
struct AllocationRow {
    issuance: String,
    lead: usize,
    producer: String,
    a_i: f64,
}

/// Re-audits a saved cooperative run from its reconciled scenarios and
/// allocations, and writes `audit_report.json` into the run directory.
pub fn audit_run(run_dir: &Path) -> Result<AuditReport> {
    let manifest: RunManifest = read_json(&run_dir.join(RUN_MANIFEST))?;
    if manifest.method == INDEPENDENT {
        return Err(Error::Config("independent runs have no coalition to audit".into()));
    }
    let hierarchy = manifest.hierarchy.hierarchy()?;
    let panel = read_panel_files(hierarchy.clone(), &run_dir.join(RECONCILED), None, manifest.n_scenarios)?;
    let path = run_dir.join(ALLOCATIONS);
    let mut reader = csv::Reader::from_path(&path).map_err(|e| Error::parse(&path, e))?;
    let rows: Vec<AllocationRow> = reader
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::parse(&path, e))?;
    let m = hierarchy.m();
    if rows.len() != panel.n_cases() * m {
        return Err(Error::Shape {
            expected: format!("{} allocation rows", panel.n_cases() * m),
            actual: rows.len().to_string(),
        });
    }
    let s = panel.n_series();
    let audit_seed = manifest.seeds.audit;
    let per_hour = (0..panel.n_cases())
        .map(|case| {
            let (t, k) = panel.case_position(case);
            let hour = &rows[case * m..(case + 1) * m];
            let issuance = &panel.issuance_times()[t];
            let lead = panel.lead_times()[k];
            let consistent = hour.iter().zip(hierarchy.names()).all(|(r, name)| {
                &r.issuance == issuance && r.lead == lead && &r.producer == name
            });
            if !consistent {
                return Err(Error::parse(&path, format!("rows out of order at {issuance}, lead {lead}")));
            }
            let a: Vec<f64> = hour.iter().map(|r| r.a_i).collect();
            let bottom: Vec<Vec<f64>> = panel.case_scenarios(case).chunks(s).map(|r| r[1..].to_vec()).collect();
            let seed = derive_seed(audit_seed, &[t as u64, k as u64]);
            let core = audit_core(&a, &bottom, &manifest.prices, hierarchy.capacities(), 4096, seed)
                .map_err(|e| e.at_hour(issuance, lead))?;
            let superadditive = if m >= 2 {
                audit_superadditivity(&bottom, &manifest.prices, hierarchy.capacities(), 1000, seed)
                    .map_err(|e| e.at_hour(issuance, lead))?
            } else {
                crate::allocation::SuperadditivityAudit {
                    passed: true,
                    pairs_checked: 0,
                    worst_violation: f64::NEG_INFINITY,
                }
            };
            Ok((
                HourCheck {
                    issuance: issuance.clone(),
                    lead,
                    worst_violation: core.worst_violation,
                    efficiency_gap: core.efficiency_gap,
                    is_core: core.is_core,
                    superadditive: superadditive.passed,
                },
                superadditive.worst_violation,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = AuditReport {
        method: manifest.method,
        hours: per_hour.len(),
        all_in_core: per_hour.iter().all(|(h, _)| h.is_core),
        worst_violation: per_hour
            .iter()
            .map(|(h, _)| h.worst_violation)
            .fold(f64::NEG_INFINITY, f64::max),
        all_superadditive: per_hour.iter().all(|(h, _)| h.superadditive),
        worst_superadditivity_gap: per_hour.iter().map(|(_, g)| *g).fold(f64::NEG_INFINITY, f64::max),
        per_hour: per_hour.into_iter().map(|(h, _)| h).collect(),
    };
    write_json(&run_dir.join("audit_report.json"), &report)?;
    Ok(report)
}
