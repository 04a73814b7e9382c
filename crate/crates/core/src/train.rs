//! Per-fold training, best-weights retention and the cross-validation
//! driver.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::data::dataset::{hex_lower, Dataset};
use crate::data::folds::{make_folds, Fold, FoldPlan};
use crate::error::{Error, Result};
use crate::eval::{prediction_errors, FoldErrors, PixelSpacing};
use crate::graph::Graph;
use crate::nn::{Model, ModelConfig};
use crate::optim::{self, AdamConfig, AdamState};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub model: ModelConfig,
    pub adam: AdamConfig,
    /// Gaussian target width in pixels at network resolution.
    pub sigma: f64,
    /// Tolerance of the proxy accuracy metric, in target units.
    pub accuracy_tau: f64,
    pub seed: u64,
    /// Where best checkpoints go; nothing is written when `None`.
    #[serde(skip)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Record real per-epoch timings. Off by default so that history files
    /// are reproducible byte for byte.
    pub record_wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            batch_size: 2,
            model: ModelConfig::default(),
            adam: AdamConfig::default(),
            sigma: 5.0,
            accuracy_tau: 0.5,
            seed: 0,
            checkpoint_dir: None,
            record_wall_clock: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if self.epochs < 1 {
            v.push("epochs must be >= 1".to_string());
        }
        if self.batch_size < 1 {
            v.push("batch_size must be >= 1".to_string());
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            v.push(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.accuracy_tau.is_nan() || self.accuracy_tau <= 0.0 {
            v.push("accuracy_tau must be positive".to_string());
        }
        if !(self.adam.alpha >= 0.0 && (0.0..1.0).contains(&self.adam.beta1) && (0.0..1.0).contains(&self.adam.beta2)) {
            v.push("adam: need alpha >= 0 and betas in [0, 1)".to_string());
        }
        if let Err(Error::InvalidConfig(m)) = self.model.validate() {
            v.push(format!("model: {m}"));
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v.join("; ")))
        }
    }
}

/// SHA-256 (hex) of the config's canonical JSON.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let json = serde_json::to_vec(config)?;
    Ok(hex_lower(&Sha256::digest(&json)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy_proxy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `epoch,train_loss,val_loss,val_accuracy_proxy,seconds`, LF endings,
    /// shortest round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_accuracy_proxy,seconds\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch, r.train_loss, r.val_loss, r.val_accuracy_proxy, r.seconds
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let records = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
        Ok(Self { records })
    }
}

/// The checkpoint with the lowest validation loss in `history`; ties go to
/// the earliest epoch. `checkpoints` pairs 1-based epochs with weights.
pub fn select_best_weights<'a, W>(history: &TrainHistory, checkpoints: &'a [(usize, W)]) -> Result<&'a W> {
    let mut best: Option<(f64, usize, &W)> = None;
    for (epoch, w) in checkpoints {
        let Some(rec) = history.records.iter().find(|r| r.epoch == *epoch) else {
            continue;
        };
        let better = match best {
            None => true,
            Some((loss, e, _)) => rec.val_loss < loss || (rec.val_loss == loss && *epoch < e),
        };
        if better {
            best = Some((rec.val_loss, *epoch, w));
        }
    }
    best.map(|(_, _, w)| w).ok_or(Error::NoCheckpoint)
}

#[derive(Debug, Clone)]
pub struct FoldOutcome<T> {
    pub best: Model<T>,
    pub best_epoch: usize,
    pub history: TrainHistory,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    epoch: usize,
    val_loss: f64,
    config_hash: &'a str,
}

pub const CHECKPOINT_FILE: &str = "best.lmdw";
pub const SIDECAR_FILE: &str = "best.json";
pub const HISTORY_FILE: &str = "history.csv";

/// Trains a fresh model, seeded with `config.seed`, on `fold.train` and
/// validates on `fold.test` after every epoch. Batches follow index order.
pub fn train_fold<T: Real>(dataset: &Dataset, fold: &Fold, config: &TrainConfig) -> Result<FoldOutcome<T>> {
    train_fold_observed(dataset, fold, config, |_| {})
}

/// [`train_fold`] that reports every sample index as it enters a gradient
/// computation.
pub fn train_fold_observed<T: Real>(
    dataset: &Dataset,
    fold: &Fold,
    config: &TrainConfig,
    mut observe: impl FnMut(usize),
) -> Result<FoldOutcome<T>> {
    config.validate()?;
    let model_cfg = ModelConfig {
        seed: config.seed,
        ..config.model.clone()
    };
    if model_cfg.input_hw != dataset.hw {
        return Err(Error::InvalidConfig(format!(
            "model input {:?} does not match dataset {:?}",
            model_cfg.input_hw, dataset.hw
        )));
    }
    if model_cfg.out_channels != dataset.landmarks.len() {
        return Err(Error::InvalidConfig(format!(
            "model has {} output channels, dataset has {} landmarks",
            model_cfg.out_channels,
            dataset.landmarks.len()
        )));
    }
    if let Some(i) = fold.train.iter().chain(&fold.test).find(|&&i| i >= dataset.len()) {
        return Err(Error::OutOfBounds(format!("sample {i} of {}", dataset.len())));
    }
    if fold.train.is_empty() || fold.test.is_empty() {
        return Err(Error::InvalidConfig("fold needs train and test samples".into()));
    }

    let (h, w) = dataset.hw;
    let c = dataset.landmarks.len();
    let inputs: Vec<Tensor<T>> = dataset
        .images
        .iter()
        .map(|im| im.cast::<T>().reshape([1, 1, h, w]))
        .collect::<Result<_>>()?;
    let targets: Vec<Tensor<T>> = dataset
        .targets(config.sigma)?
        .into_iter()
        .map(|t| t.cast::<T>().reshape([1, c, h, w]))
        .collect::<Result<_>>()?;

    let hash = config_hash(config)?;
    let ckpt_dir = config.checkpoint_dir.as_deref();
    if let Some(dir) = ckpt_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut model: Model<T> = Model::build(model_cfg)?;
    let mut adam = AdamState::new(model.params(), config.adam);
    let mut history = TrainHistory::default();
    let mut checkpoints: Vec<(usize, Model<T>)> = Vec::new();
    let mut best_val = f64::INFINITY;
    let tau = T::of(config.accuracy_tau);

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        for (b, batch) in fold.train.chunks(config.batch_size).enumerate() {
            batch.iter().for_each(|&i| observe(i));
            let x = Tensor::cat_batch(&batch.iter().map(|&i| &inputs[i]).collect::<Vec<_>>())?;
            let y = Tensor::cat_batch(&batch.iter().map(|&i| &targets[i]).collect::<Vec<_>>())?;
            let mut g = Graph::new();
            let xv = g.constant(x);
            let yv = g.constant(y);
            let fwd = model.forward(&mut g, xv)?;
            let loss_v = optim::mse_loss(&mut g, fwd.output, yv)?;
            let loss = g.value(loss_v).data()[0].as_f64();
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: b + 1, loss });
            }
            let grads = g.backward(loss_v)?;
            model.absorb_grads(&grads, &fwd.params)?;
            optim::adam_step(model.params_mut(), &mut adam).map_err(|e| match e {
                Error::NonFiniteGradient(_) => Error::Divergence { epoch, batch: b + 1, loss },
                e => e,
            })?;
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / fold.train.len() as f64;

        let mut val_sum = 0.0;
        let mut hits = 0.0;
        for batch in fold.test.chunks(config.batch_size) {
            let x = Tensor::cat_batch(&batch.iter().map(|&i| &inputs[i]).collect::<Vec<_>>())?;
            let y = Tensor::cat_batch(&batch.iter().map(|&i| &targets[i]).collect::<Vec<_>>())?;
            let pred = model.predict(&x)?;
            val_sum += optim::mse(&pred, &y)?.as_f64() * batch.len() as f64;
            hits += optim::pixel_accuracy(&pred, &y, tau)? * batch.len() as f64;
        }
        let n_test = fold.test.len() as f64;
        let val_loss = val_sum / n_test;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch, batch: 0, loss: val_loss });
        }
        history.records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy_proxy: hits / n_test,
            seconds: if config.record_wall_clock {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        });

        if val_loss < best_val {
            best_val = val_loss;
            if let Some(dir) = ckpt_dir {
                checkpoint::save(&model, &dir.join(CHECKPOINT_FILE))?;
                let sidecar = Sidecar {
                    epoch,
                    val_loss,
                    config_hash: &hash,
                };
                let mut json = serde_json::to_vec_pretty(&sidecar)?;
                json.push(b'\n');
                checkpoint::write_atomic(&dir.join(SIDECAR_FILE), &json)?;
            }
            checkpoints.clear();
            checkpoints.push((epoch, model.clone()));
        }
    }

    if let Some(dir) = ckpt_dir {
        let p = dir.join(HISTORY_FILE);
        fs::write(&p, history.to_csv()).map_err(|e| Error::io(&p, e))?;
    }
    let best = select_best_weights(&history, &checkpoints)?.clone();
    let best_epoch = checkpoints[0].0;
    Ok(FoldOutcome {
        best,
        best_epoch,
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvOptions {
    pub k: usize,
    /// Folds trained concurrently; results do not depend on it.
    pub jobs: usize,
    pub spacing: PixelSpacing,
}

#[derive(Debug, Clone)]
pub struct FoldResult<T> {
    /// 0-based; the fold's seed is `config.seed + fold`.
    pub fold: usize,
    pub seed: u64,
    pub best: Model<T>,
    pub best_epoch: usize,
    pub history: TrainHistory,
    /// Radial errors of the best weights on the fold's test images.
    pub errors: FoldErrors,
}

impl<T> FoldResult<T> {
    pub fn best_val_loss(&self) -> f64 {
        self.history.records[self.best_epoch - 1].val_loss
    }
}

#[derive(Debug, Clone)]
pub struct CrossValidation<T> {
    pub plan: FoldPlan,
    pub folds: Vec<FoldResult<T>>,
}

impl<T> CrossValidation<T> {
    /// Mean over folds of the best validation loss.
    pub fn mean_best_val_loss(&self) -> f64 {
        self.folds.iter().map(FoldResult::best_val_loss).sum::<f64>() / self.folds.len() as f64
    }

    pub fn fold_errors(&self) -> Vec<FoldErrors> {
        self.folds.iter().map(|f| f.errors.clone()).collect()
    }
}

/// Per-fold artifact directory under a run's checkpoint root.
pub fn fold_dir(root: &Path, fold: usize) -> PathBuf {
    root.join(format!("fold{}", fold + 1))
}

/// Runs [`train_fold`] over the unshuffled `k`-fold plan of `dataset`, then
/// evaluates each fold's best weights on its test images.
pub fn run_cross_validation<T: Real>(
    dataset: &Dataset,
    config: &TrainConfig,
    cv: &CvOptions,
) -> Result<CrossValidation<T>> {
    config.validate()?;
    cv.spacing.validate()?;
    let plan = make_folds(dataset.len(), cv.k)?;
    let run_one = |i: usize| -> Result<FoldResult<T>> {
        let fold_cfg = TrainConfig {
            seed: config.seed.wrapping_add(i as u64),
            checkpoint_dir: config.checkpoint_dir.as_deref().map(|d| fold_dir(d, i)),
            ..config.clone()
        };
        let fold = &plan.folds[i];
        let out = train_fold::<T>(dataset, fold, &fold_cfg)?;
        let errors = evaluate_fold(&out.best, dataset, &fold.test, &cv.spacing)?;
        Ok(FoldResult {
            fold: i,
            seed: fold_cfg.seed,
            best: out.best,
            best_epoch: out.best_epoch,
            history: out.history,
            errors,
        })
    };
    let wrap = |i: usize, r: Result<FoldResult<T>>| {
        r.map_err(|e| Error::Fold {
            fold: i + 1,
            source: Box::new(e),
        })
    };

    let jobs = cv.jobs.clamp(1, cv.k);
    let mut results: Vec<Option<Result<FoldResult<T>>>> = (0..cv.k).map(|_| None).collect();
    if jobs == 1 {
        for (i, slot) in results.iter_mut().enumerate() {
            *slot = Some(wrap(i, run_one(i)));
        }
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..jobs)
                .map(|j| {
                    let run_one = &run_one;
                    s.spawn(move || {
                        (j..cv.k)
                            .step_by(jobs)
                            .map(|i| (i, run_one(i)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("fold worker panicked") {
                    results[i] = Some(wrap(i, r));
                }
            }
        });
    }
    let folds = results
        .into_iter()
        .map(|r| r.expect("every fold ran"))
        .collect::<Result<Vec<_>>>()?;
    Ok(CrossValidation { plan, folds })
}

/// Per-landmark radial errors of `model` on the samples `indices`.
pub fn evaluate_fold<T: Real>(
    model: &Model<T>,
    dataset: &Dataset,
    indices: &[usize],
    spacing: &PixelSpacing,
) -> Result<FoldErrors> {
    let (h, w) = dataset.hw;
    let mut preds = Vec::with_capacity(indices.len());
    for &i in indices {
        let x = dataset.images[i].cast::<T>().reshape([1, 1, h, w])?;
        preds.push(model.predict(&x)?);
    }
    let anns: Vec<_> = indices.iter().map(|&i| &dataset.annotations[i]).collect();
    prediction_errors(&preds, &anns, &dataset.landmarks, dataset.hw, spacing)
}
