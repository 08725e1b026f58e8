//! End-to-end orchestration behind the command-line tool: configuration,
//! dataset preparation, training, evaluation, reporting and auditing.

mod evaluate;
mod output;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{chronological_split, generate_synthetic, load_panel, DatasetManifest, SyntheticSpec};
use crate::error::{Error, Result};
use crate::learn::Activation;
use crate::market::PriceTriple;
use crate::panel::ScenarioPanel;
use crate::reconcile::{
    train, Checkpoint, Reconciler, ReconcilerInit, ReconcilerRegistry, TrainConfig, TrainingReport,
};
use crate::rng::derive_seed;

pub use evaluate::{evaluate, Evaluation, HourAudit, HourResult, Metrics, ProducerHour, ProducerMetrics};
pub use output::{
    audit_run, generate_dataset, read_metrics, report, run, train_to_dir, write_evaluation,
    AuditReport, RunManifest, RUN_MANIFEST,
};

/// Offering without a coalition: each producer offers its own base-forecast quantile.
pub const INDEPENDENT: &str = "independent";

/// Every method name accepted by [`RunConfig::method`].
pub fn method_names(registry: &ReconcilerRegistry) -> Vec<&'static str> {
    let mut names = vec![INDEPENDENT];
    names.extend(registry.names());
    names
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// `independent` or a registered reconciler name.
    pub method: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir", skip_serializing)]
    pub output_dir: PathBuf,
    /// Worker threads; `None` uses every available core. Results do not depend on it.
    #[serde(default, skip_serializing)]
    pub threads: Option<usize>,
    /// Trained parameters for `projection` and `nonparametric`. Defaults to
    /// `checkpoint.json` in the output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub dataset: DatasetSource,
    #[serde(default = "PriceTriple::reference")]
    pub prices: PriceTriple,
    #[serde(default)]
    pub training: TrainingOptions,
    #[serde(default)]
    pub evaluation: EvaluationOptions,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Exactly one of `manifest` or `synthetic`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    /// Train fraction; overrides the manifest's value. Synthetic data defaults to 0.8.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingOptions {
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// Trailing fraction of the training issuances held out for early stopping.
    pub validation_fraction: f64,
    /// Hidden widths of the nonparametric network; `None` means two layers of `4 (m + 1)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    pub activation: Activation,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            max_epochs: t.max_epochs,
            patience: t.patience,
            learning_rate: t.learning_rate,
            clip_norm: t.clip_norm,
            validation_fraction: 0.2,
            hidden: None,
            activation: Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationOptions {
    pub band_level: f64,
    pub band_simulations: usize,
    /// Bin count for displayed histograms; finer histograms are grouped contiguously.
    pub display_bins: usize,
    /// Sampled coalitions per hour when there are too many producers to enumerate.
    pub audit_samples: usize,
    pub superadditivity_pairs: usize,
}

impl Default for EvaluationOptions {
    fn default() -> Self {
        Self {
            band_level: 0.95,
            band_simulations: 1000,
            display_bins: 17,
            audit_samples: 4096,
            superadditivity_pairs: 1000,
        }
    }
}

/// Independent streams derived from the run seed, one per consumer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPlan {
    pub init: u64,
    pub training: u64,
    pub ranks: u64,
    pub band: u64,
    pub audit: u64,
}

impl SeedPlan {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            init: derive_seed(seed, &[1]),
            training: derive_seed(seed, &[2]),
            ranks: derive_seed(seed, &[3]),
            band: derive_seed(seed, &[4]),
            audit: derive_seed(seed, &[5]),
        }
    }
}

impl RunConfig {
    /// Reads a TOML config; relative paths inside resolve against its directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::parse(path, e))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn seeds(&self) -> SeedPlan {
        SeedPlan::from_seed(self.seed)
    }

    pub fn validate(&self, registry: &ReconcilerRegistry) -> Result<()> {
        if !method_names(registry).contains(&self.method.as_str()) {
            return Err(Error::Unknown {
                kind: "method",
                name: self.method.clone(),
            });
        }
        match (&self.dataset.manifest, &self.dataset.synthetic) {
            (Some(_), None) => {}
            (None, Some(spec)) => spec.validate()?,
            _ => {
                return Err(Error::Config(
                    "dataset needs exactly one of `manifest` or `synthetic`".into(),
                ))
            }
        }
        if let Some(f) = self.dataset.split_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!("split_fraction must lie in (0, 1), got {f}")));
            }
        }
        let t = &self.training;
        if !(t.validation_fraction > 0.0 && t.validation_fraction < 1.0) {
            return Err(Error::Config("validation_fraction must lie in (0, 1)".into()));
        }
        if !(t.learning_rate > 0.0 && t.clip_norm > 0.0) {
            return Err(Error::Config("learning_rate and clip_norm must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        self.prices.validate()
    }

    pub fn init(&self) -> ReconcilerInit {
        ReconcilerInit {
            seed: self.seeds().init,
            hidden: self.training.hidden.clone(),
            activation: self.training.activation,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            max_epochs: self.training.max_epochs,
            patience: self.training.patience,
            learning_rate: self.training.learning_rate,
            clip_norm: self.training.clip_norm,
            seed: self.seeds().training,
        }
    }

    /// Checkpoint location: the configured one, else `checkpoint.json` in the output directory.
    pub fn checkpoint_path(&self) -> PathBuf {
        match &self.checkpoint {
            Some(p) => self.resolve(p),
            None => self.output_dir.join(output::CHECKPOINT),
        }
    }
}

/// Full panel and the train fraction that applies to it.
pub fn load_dataset(cfg: &RunConfig) -> Result<(ScenarioPanel, f64)> {
    match (&cfg.dataset.manifest, &cfg.dataset.synthetic) {
        (Some(path), None) => {
            let manifest = DatasetManifest::from_path(&cfg.resolve(path))?;
            let fraction = cfg.dataset.split_fraction.unwrap_or(manifest.split_fraction);
            Ok((load_panel(&manifest)?, fraction))
        }
        (None, Some(spec)) => {
            let (panel, _) = generate_synthetic(spec)?;
            Ok((panel, cfg.dataset.split_fraction.unwrap_or(0.8)))
        }
        _ => Err(Error::Config(
            "dataset needs exactly one of `manifest` or `synthetic`".into(),
        )),
    }
}

/// Chronological fit / validation / test partition of issuance times.
#[derive(Debug, Clone)]
pub struct Splits {
    pub fit: ScenarioPanel,
    pub validation: ScenarioPanel,
    pub test: ScenarioPanel,
}

/// Test set = issuances after `split_fraction`; validation = the trailing
/// `validation_fraction` of the remaining training issuances.
pub fn split_dataset(panel: &ScenarioPanel, split_fraction: f64, validation_fraction: f64) -> Result<Splits> {
    let (train, test) = chronological_split(panel, split_fraction)?;
    let (fit, validation) = chronological_split(&train, 1.0 - validation_fraction)?;
    Ok(Splits {
        fit,
        validation,
        test,
    })
}

/// Creates the configured reconciler and fits it on `splits`.
pub fn train_reconciler(
    cfg: &RunConfig,
    registry: &ReconcilerRegistry,
    splits: &Splits,
) -> Result<(Box<dyn Reconciler>, TrainingReport)> {
    if cfg.method == INDEPENDENT {
        return Err(Error::Config("method 'independent' has nothing to train".into()));
    }
    let mut r = registry.create(&cfg.method, splits.fit.hierarchy(), &cfg.init())?;
    if r.trainable().is_none() {
        return Err(Error::Config(format!("method '{}' has nothing to train", cfg.method)));
    }
    let report = train(r.as_mut(), &splits.fit, &splits.validation, &cfg.train_config())?;
    Ok((r, report))
}

/// The reconciler a run evaluates: `None` for independent offering, a fresh
/// instance for untrained variants, otherwise the checkpoint.
pub fn load_reconciler(
    cfg: &RunConfig,
    registry: &ReconcilerRegistry,
    panel: &ScenarioPanel,
) -> Result<Option<(Box<dyn Reconciler>, Option<Checkpoint>)>> {
    if cfg.method == INDEPENDENT {
        return Ok(None);
    }
    let fresh = registry.create(&cfg.method, panel.hierarchy(), &cfg.init())?;
    if fresh.trainable().is_none() {
        return Ok(Some((fresh, None)));
    }
    let path = cfg.checkpoint_path();
    if !path.exists() {
        return Err(Error::Config(format!(
            "method '{}' needs a checkpoint; {} not found (run `train` first)",
            cfg.method,
            path.display()
        )));
    }
    let checkpoint = Checkpoint::load(&path)?;
    if checkpoint.variant != cfg.method {
        return Err(Error::Config(format!(
            "checkpoint holds '{}' parameters, method is '{}'",
            checkpoint.variant, cfg.method
        )));
    }
    let r = registry.restore(&checkpoint, panel.hierarchy())?;
    Ok(Some((r, Some(checkpoint))))
}

/// Runs `f` on a pool of `threads` workers, or on the global pool when `None`.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}
