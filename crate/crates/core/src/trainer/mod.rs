//! NLL and NCE training with mini-batch SGD, global-norm clipping and a
//! validation-driven halving schedule.

mod loss;
mod noise;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use loss::{evaluate_nll, nce_loss, nce_posterior, nce_tree, nll_loss, NllSummary};
pub use noise::{NoiseDistribution, NOISE_EXPONENT};

use crate::corpus::{EncodedTree, Vocab};
use crate::error::{Error, Result};
use crate::nncore::{clip_gradients, global_norm, sgd_step};
use crate::treelm::{nll_tree, Checkpoint, Dtype, ModelParams, TraceStats, TreeLmConfig, LN_Z_INIT};
use loss::{batch_gradient, Item};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Nll,
    Nce,
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Objective::Nll => "nll",
            Objective::Nce => "nce",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nll" => Ok(Objective::Nll),
            "nce" => Ok(Objective::Nce),
            _ => Err(Error::Config(format!("unknown objective `{s}` (expected nll or nce)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    pub batch_size: usize,
    pub lr: f64,
    pub clip: f64,
    /// Noise samples per token under NCE.
    pub noise_samples: usize,
    pub ln_z_init: f64,
    /// Relative validation-NLL improvement below which the lr halves.
    pub halving_threshold: f64,
    /// Training stops once `lr < min_lr_factor · lr₀`.
    pub min_lr_factor: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Fixed number of gradient-reduction lanes per batch. Results depend
    /// on this value but not on the number of worker threads.
    pub lanes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: Objective::Nll,
            batch_size: 64,
            lr: 1.0,
            clip: 5.0,
            noise_samples: 20,
            ln_z_init: LN_Z_INIT,
            halving_threshold: 1e-3,
            min_lr_factor: 1.0 / 1024.0,
            max_epochs: 50,
            seed: 1,
            lanes: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.noise_samples == 0 {
            return bad("noise samples per token must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive and finite");
        }
        if !(self.clip > 0.0) {
            return bad("clip threshold must be positive");
        }
        if !self.ln_z_init.is_finite() {
            return bad("ln Z init must be finite");
        }
        if !(self.halving_threshold >= 0.0) {
            return bad("halving threshold must be non-negative");
        }
        if !(self.min_lr_factor > 0.0 && self.min_lr_factor <= 1.0) {
            return bad("min lr factor must lie in (0, 1]");
        }
        if self.max_epochs == 0 {
            return bad("max epochs must be at least 1");
        }
        if self.lanes == 0 {
            return bad("lanes must be at least 1");
        }
        Ok(())
    }
}

/// Halves the rate whenever the relative improvement of validation NLL
/// over the best value so far falls below the threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    lr0: f64,
    lr: f64,
    threshold: f64,
    floor: f64,
    best: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleStep {
    pub improvement: f64,
    pub halved: bool,
    /// The rate has fallen below the floor.
    pub converged: bool,
}

impl LrSchedule {
    /// `baseline` is the validation NLL before the first epoch.
    pub fn new(lr0: f64, threshold: f64, min_lr_factor: f64, baseline: f64) -> Self {
        LrSchedule {
            lr0,
            lr: lr0,
            threshold,
            floor: lr0 * min_lr_factor,
            best: baseline,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn initial_lr(&self) -> f64 {
        self.lr0
    }

    pub fn observe(&mut self, valid_nll: f64) -> ScheduleStep {
        let improvement = (self.best - valid_nll) / self.best.abs().max(f64::MIN_POSITIVE);
        let halved = !(improvement >= self.threshold);
        if halved {
            self.lr *= 0.5;
        }
        if valid_nll < self.best {
            self.best = valid_nll;
        }
        ScheduleStep {
            improvement,
            halved,
            converged: self.lr < self.floor,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Rate used for this epoch's updates.
    pub lr: f64,
    /// Training objective per token, averaged over the epoch.
    pub train_objective: f64,
    /// Exact validation NLL per token after the epoch.
    pub valid_nll: f64,
    pub updates: usize,
    pub grad_norm_mean: f64,
    pub grad_norm_max: f64,
    /// Largest global norm after clipping.
    pub clipped_norm_max: f64,
    /// Updates whose gradient was rescaled.
    pub clipped_updates: usize,
    /// Full-vocabulary softmax evaluations during training steps.
    pub softmax_evals: usize,
    pub halved: bool,
    pub wall_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub objective: Option<Objective>,
    pub initial_valid_nll: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_nll: f64,
    pub converged: bool,
}

const REPORT_HEADER: &str = "epoch\tlr\ttrain_objective\tvalid_nll\tupdates\tgrad_norm_mean\tgrad_norm_max\tclipped_norm_max\tclipped_updates\tsoftmax_evals\thalved";

impl TrainReport {
    /// Per-epoch rows without wall time, so identical runs give identical
    /// bytes. Floats use the shortest round-trip representation.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{}\t{:?}\t{:?}\t{:?}\t{}\t{:?}\t{:?}\t{:?}\t{}\t{}\t{}",
                e.epoch,
                e.lr,
                e.train_objective,
                e.valid_nll,
                e.updates,
                e.grad_norm_mean,
                e.grad_norm_max,
                e.clipped_norm_max,
                e.clipped_updates,
                e.softmax_evals,
                u8::from(e.halved)
            );
        }
        s
    }

    pub fn timing_tsv(&self) -> String {
        let mut s = String::from("epoch\twall_secs\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{}\t{:.3}", e.epoch, e.wall_secs);
        }
        s
    }

    pub fn lr_sequence(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.lr).collect()
    }
}

/// Where and how a training run persists its artifacts.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub path: PathBuf,
    pub vocab: Option<Vocab>,
    /// Written verbatim as `config.json`; defaults to the train and model
    /// configurations.
    pub resolved_config: Option<serde_json::Value>,
    pub dtype: Dtype,
}

impl RunDir {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        RunDir {
            path: path.into(),
            vocab: None,
            resolved_config: None,
            dtype: Dtype::F64,
        }
    }

    pub fn best(&self) -> PathBuf {
        self.path.join("ckpt-best")
    }

    pub fn last(&self) -> PathBuf {
        self.path.join("ckpt-last")
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        let p = self.path.join(name);
        std::fs::write(&p, contents).map_err(|e| Error::io(format!("writing {}", p.display()), e))
    }

    fn checkpoint(&self, ckpt: Checkpoint, path: &Path) -> Result<()> {
        let ckpt = match &self.vocab {
            Some(v) => ckpt.with_vocab("vocab.txt", v),
            None => ckpt,
        };
        ckpt.save(path, self.dtype)
    }
}

pub struct TrainData<'a> {
    pub train: &'a [EncodedTree],
    pub valid: &'a [EncodedTree],
    /// Overrides the noise distribution derived from `train` counts.
    pub noise: Option<NoiseDistribution>,
}

pub struct TrainOutcome {
    /// Parameters with the lowest validation NLL seen, the initial ones
    /// included.
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub report: TrainReport,
}

fn checkpoint(cfg: &TreeLmConfig, params: &ModelParams, train: &TrainConfig, epoch: usize, valid_nll: f64, lr: f64) -> Checkpoint {
    let mut c = Checkpoint::new(cfg.clone(), params.clone());
    c.meta.insert("epoch".into(), epoch.into());
    c.meta.insert("valid_nll".into(), valid_nll.into());
    c.meta.insert("lr".into(), lr.into());
    c.meta.insert("objective".into(), train.objective.to_string().into());
    c.meta.insert("seed".into(), train.seed.into());
    c
}

/// Trains a tree language model.
///
/// All randomness (initialisation when `initial` is `None`, shuffling,
/// dropout masks and noise draws) comes from one generator seeded with
/// `config.seed`. Per-tree gradients are computed in parallel against the
/// batch's starting parameters and reduced in a fixed order.
pub fn train(
    config: &TrainConfig,
    model: &TreeLmConfig,
    initial: Option<ModelParams>,
    data: TrainData<'_>,
    run: Option<&RunDir>,
) -> Result<TrainOutcome> {
    config.validate()?;
    model.validate()?;
    if data.train.is_empty() || data.valid.is_empty() {
        return Err(Error::Data("training and validation corpora must be non-empty".into()));
    }
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = match initial {
        Some(p) => {
            p.check_shapes(model)?;
            p
        }
        None => ModelParams::init(model, &mut master)?,
    };
    params.log_z.data_mut()[0] = config.ln_z_init;
    let noise = match (config.objective, data.noise) {
        (Objective::Nll, _) => None,
        (Objective::Nce, Some(n)) => Some(n),
        (Objective::Nce, None) => Some(NoiseDistribution::from_trees(data.train, model.vocab_size)?),
    };
    if let Some(n) = &noise {
        if n.len() != model.vocab_size {
            return Err(Error::Config("noise distribution does not match the vocabulary".into()));
        }
    }

    if let Some(run) = run {
        std::fs::create_dir_all(&run.path).map_err(|e| Error::io(format!("creating {}", run.path.display()), e))?;
        let resolved = match &run.resolved_config {
            Some(v) => v.clone(),
            None => serde_json::json!({ "train": config, "model": model }),
        };
        run.write("config.json", &(serde_json::to_string_pretty(&resolved).expect("config serialises") + "\n"))?;
        if let Some(v) = &run.vocab {
            run.write("vocab.txt", &v.to_text())?;
        }
    }

    let baseline = evaluate_nll(&params, model, data.valid)?.per_token();
    if !baseline.is_finite() {
        return Err(Error::Numeric("validation NLL of the initial parameters is not finite".into()));
    }
    if let Some(run) = run {
        run.checkpoint(checkpoint(model, &params, config, 0, baseline, config.lr), &run.last())?;
        run.checkpoint(checkpoint(model, &params, config, 0, baseline, config.lr), &run.best())?;
    }
    let mut schedule = LrSchedule::new(config.lr, config.halving_threshold, config.min_lr_factor, baseline);
    let mut report = TrainReport {
        objective: Some(config.objective),
        initial_valid_nll: baseline,
        best_valid_nll: baseline,
        ..TrainReport::default()
    };
    let mut best = params.clone();
    let train_tokens: usize = data.train.iter().map(|t| t.len()).sum();
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        let lr = schedule.lr();
        order.shuffle(&mut master);
        let mut objective = 0.0;
        let mut norms = Vec::new();
        let mut clipped_norm_max = 0.0f64;
        let mut clipped_updates = 0;
        let mut stats = TraceStats::default();
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let items: Vec<Item<'_>> = chunk
                .iter()
                .map(|&i| Item {
                    tree: &data.train[i],
                    seed: master.next_u64(),
                })
                .collect();
            let scale = 1.0 / items.len() as f64;
            let frozen = &params;
            let result = batch_gradient(frozen, &items, config.lanes, |item, g| {
                let mut rng = ChaCha8Rng::seed_from_u64(item.seed);
                match &noise {
                    None => {
                        let nll = nll_tree(frozen, model, item.tree, scale, Some(&mut rng as &mut dyn RngCore), g)?;
                        let mut s = TraceStats::default();
                        s.softmax_evals = item.tree.len();
                        Ok((nll, s))
                    }
                    Some(n) => nce_tree(frozen, model, item.tree, n, config.noise_samples, scale, &mut rng, true, g),
                }
            });
            let diag = |what: &str| format!("{what} at epoch {epoch}, batch {}, lr {lr}; last good parameters are in ckpt-last", b + 1);
            let result = match result {
                Err(Error::Numeric(m)) => return Err(Error::Numeric(diag(&m))),
                r => r?,
            };
            if !result.loss.is_finite() {
                return Err(Error::Numeric(diag("non-finite training objective")));
            }
            let mut grads = result.grads;
            let norm = clip_gradients(&mut grads, config.clip);
            if !norm.is_finite() {
                return Err(Error::Numeric(diag("non-finite gradient norm")));
            }
            if norm > config.clip {
                clipped_updates += 1;
            }
            clipped_norm_max = clipped_norm_max.max(global_norm(&grads));
            sgd_step(&mut params, &grads, lr).map_err(|e| Error::Numeric(diag(&e.to_string())))?;
            objective += result.loss;
            norms.push(norm);
            add_softmax(&mut stats, &result.stats);
        }
        let after = |what: &str| format!("{what} in validation after epoch {epoch}, lr {lr}; last good parameters are in ckpt-last");
        let valid = match evaluate_nll(&params, model, data.valid) {
            Err(Error::Numeric(m)) => return Err(Error::Numeric(after(&m))),
            r => r?.per_token(),
        };
        if !valid.is_finite() {
            return Err(Error::Numeric(after("non-finite NLL")));
        }
        let step = schedule.observe(valid);
        let improved = valid < report.best_valid_nll;
        if improved {
            best = params.clone();
            report.best_valid_nll = valid;
            report.best_epoch = epoch;
        }
        report.epochs.push(EpochRecord {
            epoch,
            lr,
            train_objective: objective / train_tokens as f64,
            valid_nll: valid,
            updates: norms.len(),
            grad_norm_mean: norms.iter().sum::<f64>() / norms.len() as f64,
            grad_norm_max: norms.iter().copied().fold(0.0, f64::max),
            clipped_norm_max,
            clipped_updates,
            softmax_evals: stats.softmax_evals,
            halved: step.halved,
            wall_secs: started.elapsed().as_secs_f64(),
        });
        log::info!("epoch {epoch}: lr {lr} train {:.4} valid {valid:.4}", objective / train_tokens as f64);
        if let Some(run) = run {
            run.checkpoint(checkpoint(model, &params, config, epoch, valid, lr), &run.last())?;
            if improved {
                run.checkpoint(checkpoint(model, &params, config, epoch, valid, lr), &run.best())?;
            }
            run.write("report.tsv", &report.to_tsv())?;
            run.write("timing.tsv", &report.timing_tsv())?;
        }
        if step.converged {
            report.converged = true;
            break;
        }
    }

    let final_epoch = report.epochs.last().map_or(0, |e| e.epoch);
    let final_nll = report.epochs.last().map_or(baseline, |e| e.valid_nll);
    Ok(TrainOutcome {
        best: checkpoint(model, &best, config, report.best_epoch, report.best_valid_nll, schedule.lr()),
        last: checkpoint(model, &params, config, final_epoch, final_nll, schedule.lr()),
        report,
    })
}

fn add_softmax(acc: &mut TraceStats, s: &TraceStats) {
    acc.softmax_evals += s.softmax_evals;
}
