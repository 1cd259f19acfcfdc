use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::batch::{make_batches, negative_sampler, Batch, Example};
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, Checkpoint, Model, SeqView};
use crate::numerics::{clip_grad_norm, OptimizerKind, OptimizerState, ParamSet, Tape};
use crate::objectives::{self, GradNorms, LossReport, LossWeights};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    /// Save `last.ckpt` every this many epochs; 0 saves only at the end.
    pub checkpoint_every: usize,
    /// Also log the gradient norm of each weighted component (three extra
    /// backward passes per step).
    pub component_grad_norms: bool,
    /// Stop after this many validation rounds without a new best Hits@1;
    /// 0 disables early stopping.
    pub patience: usize,
    /// Validate every this many epochs (when a validation hook is given);
    /// 0 disables validation.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            batch_size: 128,
            epochs: 100,
            seed: 0,
            weights: LossWeights::default(),
            optimizer: OptimizerKind::Adam,
            clip_norm: 0.0,
            checkpoint_every: 0,
            component_grad_norms: false,
            patience: 0,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Contract(format!("train config: {m}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.weights.beta > 0.0 && self.batch_size < 2 {
            return bad("batch_size must be at least 2 when beta > 0".into());
        }
        if self.weights.alpha < 0.0 || self.weights.beta < 0.0 {
            return bad("alpha and beta must be non-negative".into());
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub l_g: f64,
    pub l_p: f64,
    pub l_e: f64,
    pub total: f64,
    pub local_skipped: bool,
    pub grad_norms: GradNorms,
}

/// Model, optimizer and progress counters.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub optimizer: OptimizerState,
    pub cfg: TrainConfig,
    pub vocab_hash: String,
    /// Optimizer steps taken.
    pub step: u64,
    /// Completed epochs.
    pub epoch: u64,
}

fn grad_norm_of(tape: &Tape, var: crate::numerics::Var, params: &ParamSet) -> Result<f64> {
    let mut scratch = params.clone();
    scratch.zero_grad();
    tape.backward(var, &mut scratch)?;
    Ok(scratch.grad_norm())
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig, vocab_hash: impl Into<String>) -> Result<Self> {
        cfg.validate()?;
        let optimizer = OptimizerState::new(cfg.optimizer, &model.params, cfg.lr);
        Ok(Trainer {
            model,
            optimizer,
            cfg,
            vocab_hash: vocab_hash.into(),
            step: 0,
            epoch: 0,
        })
    }

    /// Continues from a checkpoint; the optimizer state is restored when the
    /// checkpoint carries one.
    pub fn resume(ck: Checkpoint, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut optimizer = ck
            .optimizer
            .unwrap_or_else(|| OptimizerState::new(cfg.optimizer, &ck.model.params, cfg.lr));
        optimizer.learning_rate = cfg.lr;
        Ok(Trainer {
            model: ck.model,
            optimizer,
            cfg,
            vocab_hash: ck.header.vocab_hash,
            step: ck.header.step,
            epoch: ck.header.epoch,
        })
    }

    /// Forward, loss, backward and update on one batch. On a non-finite loss
    /// or gradient the weights are left untouched.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepRecord> {
        let w = &self.cfg.weights;
        let seqs = batch.seqs();
        let perm = negative_sampler(batch.len(), self.cfg.seed, self.step).unwrap_or_default();
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape);
        let views: Vec<SeqView> = batch
            .examples
            .iter()
            .zip(&batch.masks)
            .map(|(e, m)| SeqView { ids: &e.seq.ids, mask: m })
            .collect();
        let fwd = self.model.forward(&mut tape, &bound, &views)?;
        let vars = objectives::build_losses(&mut tape, &self.model, &bound, &fwd, &seqs, w, &perm)?;
        let mut report: LossReport = objectives::report(&tape, &vars, w)?;
        if report.local_skipped {
            warn!("step {}: batch of one, local loss skipped", self.step);
        }
        let mut norms = GradNorms::default();
        if self.cfg.component_grad_norms {
            norms.l_g = Some(grad_norm_of(&tape, vars.l_g, &self.model.params)?);
            norms.l_p = Some(w.alpha * grad_norm_of(&tape, vars.l_p, &self.model.params)?);
            norms.l_e = match vars.l_e {
                Some(v) => Some(w.beta * grad_norm_of(&tape, v, &self.model.params)?),
                None => Some(0.0),
            };
        }
        self.model.params.zero_grad();
        tape.backward(vars.total, &mut self.model.params)?;
        norms.total = if self.cfg.clip_norm > 0.0 {
            clip_grad_norm(&mut self.model.params, self.cfg.clip_norm)
        } else {
            self.model.params.grad_norm()
        };
        if !norms.total.is_finite() {
            self.model.params.zero_grad();
            return Err(Error::NonFinite(format!("gradient norm {} at step {}", norms.total, self.step)));
        }
        self.optimizer.step(&mut self.model.params)?;
        report.grad_norms = Some(norms.clone());
        let rec = StepRecord {
            step: self.step,
            epoch: self.epoch,
            batch_size: batch.len(),
            lr: self.optimizer.learning_rate,
            l_g: report.l_g,
            l_p: report.l_p,
            l_e: report.l_e,
            total: report.total,
            local_skipped: report.local_skipped,
            grad_norms: norms,
        };
        self.step += 1;
        Ok(rec)
    }

    /// Runs one epoch over `examples`, passing each step record to `sink`.
    pub fn run_epoch(&mut self, examples: &[Example], sink: &mut dyn FnMut(&StepRecord) -> Result<()>) -> Result<()> {
        let batches = make_batches(
            examples,
            self.cfg.batch_size,
            self.cfg.seed,
            self.epoch,
            self.model.mask_mode(),
        )?;
        for b in &batches {
            let rec = self.train_step(b)?;
            sink(&rec)?;
        }
        self.epoch += 1;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(
            path,
            &self.model,
            Some(&self.optimizer),
            &self.vocab_hash,
            self.step,
            self.epoch,
            serde_json::json!({ "train": self.cfg }),
        )
    }
}

/// Result of [`train`].
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: Option<PathBuf>,
    pub best_valid_hits1: Option<f64>,
    pub epochs_completed: u64,
    pub steps: u64,
    pub stopped_early: bool,
    /// Mean total loss of each epoch run in this call.
    pub epoch_losses: Vec<f64>,
}

/// Validation callback: returns Hits@1 for the current weights.
pub type ValidHook<'a> = &'a mut dyn FnMut(&Model) -> Result<f64>;

/// Trains until `cfg.epochs` epochs are complete (counting epochs already
/// done by a resumed trainer). Writes `train_log.jsonl`, periodic
/// `last.ckpt`, the final `model.ckpt` and, with validation, `best.ckpt`.
/// A non-finite loss aborts after saving the current (last good) weights to
/// `last_good.ckpt`.
pub fn train(trainer: &mut Trainer, examples: &[Example], out_dir: &Path, mut valid: Option<ValidHook<'_>>) -> Result<TrainOutcome> {
    fs::create_dir_all(out_dir)?;
    let log_path = out_dir.join("train_log.jsonl");
    let file = if trainer.step == 0 {
        File::create(&log_path)?
    } else {
        OpenOptions::new().append(true).create(true).open(&log_path)?
    };
    let mut log = BufWriter::new(file);
    let mut out = TrainOutcome::default();
    let mut since_best = 0usize;
    while (trainer.epoch as usize) < trainer.cfg.epochs {
        let mut sum = 0.0;
        let mut n = 0usize;
        let res = trainer.run_epoch(examples, &mut |rec| {
            sum += rec.total;
            n += 1;
            serde_json::to_writer(&mut log, rec)?;
            log.write_all(b"\n")?;
            Ok(())
        });
        if let Err(e) = res {
            log.flush()?;
            if matches!(e, Error::NonFinite(_)) {
                let p = out_dir.join("last_good.ckpt");
                trainer.save(&p)?;
                warn!("aborting on non-finite value; last good weights in {}", p.display());
            }
            return Err(e);
        }
        let mean = sum / n.max(1) as f64;
        out.epoch_losses.push(mean);
        info!("epoch {} mean loss {mean:.6}", trainer.epoch);
        let e = trainer.epoch as usize;
        if trainer.cfg.checkpoint_every > 0 && e.is_multiple_of(trainer.cfg.checkpoint_every) {
            trainer.save(&out_dir.join("last.ckpt"))?;
        }
        if let Some(hook) = valid.as_mut() {
            if trainer.cfg.eval_every > 0 && e.is_multiple_of(trainer.cfg.eval_every) {
                let h1 = hook(&trainer.model)?;
                info!("epoch {e} valid hits@1 {h1:.4}");
                if out.best_valid_hits1.is_none_or(|b| h1 > b) {
                    out.best_valid_hits1 = Some(h1);
                    let p = out_dir.join("best.ckpt");
                    trainer.save(&p)?;
                    out.best_checkpoint = Some(p);
                    since_best = 0;
                } else {
                    since_best += 1;
                    if trainer.cfg.patience > 0 && since_best >= trainer.cfg.patience {
                        out.stopped_early = true;
                        break;
                    }
                }
            }
        }
    }
    log.flush()?;
    let p = out_dir.join("model.ckpt");
    trainer.save(&p)?;
    out.final_checkpoint = p;
    out.epochs_completed = trainer.epoch;
    out.steps = trainer.step;
    Ok(out)
}
