//! Energy-score training loop shared by every trainable variant.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{apply_panel, Reconciler};
use crate::error::{Error, Result};
use crate::learn::OptimizerState;
use crate::panel::ScenarioPanel;
use crate::scoring::{average_energy_score, energy_score, energy_score_subgradient};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// Seeds the per-epoch shuffle of issuance days.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 500,
            patience: 20,
            learning_rate: 1e-3,
            clip_norm: 10.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training energy score over the epoch's batches, MW. `None` at epoch 0.
    pub train_aes: Option<f64>,
    pub val_aes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub variant: String,
    pub seed: u64,
    pub config: TrainConfig,
    /// Epoch 0 is the initialization.
    pub epochs: Vec<EpochRecord>,
    pub selected_epoch: usize,
    pub selected_val_aes: f64,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl TrainingReport {
    pub fn initial_val_aes(&self) -> f64 {
        self.epochs[0].val_aes
    }
}

/// Energy score of one case after reconciliation, and its parameter gradient added to `grad`.
fn case_loss_and_gradient(
    r: &dyn Reconciler,
    rows: &[f64],
    n_series: usize,
    observation: &[f64],
    grad: &mut [f64],
) -> Result<f64> {
    let trainable = r.trainable().expect("checked by caller");
    let reconciled: Vec<f64> = rows.chunks(n_series).flat_map(|b| r.apply(b)).collect();
    let loss = energy_score(&reconciled, observation)?.value;
    let g = energy_score_subgradient(&reconciled, observation)?;
    for (base, gs) in rows.chunks(n_series).zip(g.chunks(n_series)) {
        // Through G: every producer entry also feeds the aggregate.
        let upstream: Vec<f64> = gs[1..].iter().map(|gi| gi + gs[0]).collect();
        trainable.accumulate_gradient(base, &upstream, grad);
    }
    Ok(loss)
}

/// Trains `reconciler` in place by minimizing the average energy score over
/// `train`, one issuance day per batch, with early stopping on the average
/// energy score over `val`. On return the reconciler holds the parameters of
/// the best validation epoch.
pub fn train(
    reconciler: &mut dyn Reconciler,
    train: &ScenarioPanel,
    val: &ScenarioPanel,
    config: &TrainConfig,
) -> Result<TrainingReport> {
    let started = Instant::now();
    let name = reconciler.name();
    let n_params = match reconciler.trainable() {
        Some(t) => t.params().len(),
        None => return Err(Error::Config(format!("reconciler '{name}' has nothing to train"))),
    };
    if !train.has_observations() || !val.has_observations() {
        return Err(Error::Config("training needs observations".into()));
    }

    let validation = |r: &dyn Reconciler| -> Result<f64> {
        average_energy_score(&apply_panel(r, val)?)
    };

    let mut opt = OptimizerState::new(n_params, config.learning_rate, config.clip_norm);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_series = train.n_series();
    let n_leads = train.n_leads();

    let initial = validation(reconciler)?;
    let mut epochs = vec![EpochRecord {
        epoch: 0,
        train_aes: None,
        val_aes: initial,
    }];
    let mut best = (0usize, initial, reconciler.trainable().unwrap().params().to_vec());
    let mut order: Vec<usize> = (0..train.n_issuances()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch, &day) in order.iter().enumerate() {
            let r: &dyn Reconciler = reconciler;
            let per_case: Vec<Result<(f64, Vec<f64>)>> = (0..n_leads)
                .into_par_iter()
                .map(|k| {
                    let case = train.case_index(day, k);
                    let mut g = vec![0.0; n_params];
                    let obs = train.case_observation(case).expect("checked");
                    let loss = case_loss_and_gradient(
                        r,
                        train.case_scenarios(case),
                        n_series,
                        obs,
                        &mut g,
                    )?;
                    Ok((loss, g))
                })
                .collect();
            // Fixed-order reduction keeps results independent of the worker count.
            let mut loss = 0.0;
            let mut grad = vec![0.0; n_params];
            for item in per_case {
                let (l, g) = item?;
                loss += l;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            loss /= n_leads as f64;
            grad.iter_mut().for_each(|g| *g /= n_leads as f64);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, batch, loss });
            }
            epoch_loss += loss;
            let params = reconciler.trainable_mut().unwrap().params_mut();
            opt.step(params, &grad);
        }
        let val_aes = validation(reconciler)?;
        if !val_aes.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: order.len(),
                loss: val_aes,
            });
        }
        epochs.push(EpochRecord {
            epoch,
            train_aes: Some(epoch_loss / order.len() as f64),
            val_aes,
        });
        log::debug!("{name} epoch {epoch}: val AES {val_aes:.4}");
        if val_aes < best.1 {
            best = (epoch, val_aes, reconciler.trainable().unwrap().params().to_vec());
        } else if epoch - best.0 >= config.patience {
            break;
        }
    }

    reconciler
        .trainable_mut()
        .unwrap()
        .params_mut()
        .copy_from_slice(&best.2);
    Ok(TrainingReport {
        variant: name.to_string(),
        seed: config.seed,
        config: config.clone(),
        epochs,
        selected_epoch: best.0,
        selected_val_aes: best.1,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{chronological_split, generate_synthetic, SyntheticSpec};
    use crate::reconcile::{BottomUp, Projection};

    #[test]
    fn bottom_up_refuses_training() {
        let (p, _) = generate_synthetic(&SyntheticSpec::new(2, 4, 4, 1)).unwrap();
        let mut r = BottomUp::new(p.hierarchy().clone());
        assert!(train(&mut r, &p, &p, &TrainConfig::default()).is_err());
    }

    #[test]
    fn selection_never_worse_than_initialization() {
        let mut spec = SyntheticSpec::new(3, 6, 20, 4);
        spec.n_leads = 6;
        spec.bias_fraction = 0.1;
        let (p, _) = generate_synthetic(&spec).unwrap();
        let (tr, va) = chronological_split(&p, 0.7).unwrap();
        let mut r = Projection::bottom_up(p.hierarchy().clone());
        let cfg = TrainConfig {
            max_epochs: 15,
            patience: 5,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let report = train(&mut r, &tr, &va, &cfg).unwrap();
        assert!(report.selected_val_aes <= report.initial_val_aes());
        let after = average_energy_score(&apply_panel(&r, &va).unwrap()).unwrap();
        assert_eq!(after, report.selected_val_aes);
        let argmin = report
            .epochs
            .iter()
            .min_by(|a, b| a.val_aes.total_cmp(&b.val_aes))
            .unwrap();
        assert_eq!(argmin.epoch, report.selected_epoch);
    }
}
