use std::rc::Rc;

use super::data::{mix_and_shuffle, BatchItem, Pool, TrainData};
use super::monitor::{heldout_stats, CollapseDetector, MetricsRecord};
use super::objective::{Objective, SampleCtx};
use super::optim::{clip_global_norm, AdamW};
use super::{Sample, TrainConfig};
use crate::autodiff::{Tape, Tensor};
use crate::corpus::DaLabelVector;
use crate::eval::da_f1;
use crate::model::{Checkpoint, DialogModel, DropoutCtx, TrainState, Vocab};
use crate::{Error, Result};

/// Averages over one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub epoch: u64,
    pub loss: f64,
    pub rs: f64,
    pub rg: f64,
    pub da: Option<f64>,
    pub kl: Option<f64>,
    pub mean_gate: Option<f64>,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    /// `(predicted, gold)` act sets for labeled samples in the batch.
    pub predictions: Vec<(DaLabelVector, DaLabelVector)>,
}

#[derive(Default)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }

    fn get(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

#[derive(Default)]
struct Interval {
    rs: Mean,
    rg: Mean,
    da: Mean,
    kl: Mean,
    gate: Mean,
    predicted: Vec<DaLabelVector>,
    gold: Vec<DaLabelVector>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions<'a> {
    /// Labeled samples for held-out F1 and KL at each monitor step.
    pub heldout: Option<&'a [Sample]>,
    /// Stop before this step would run.
    pub until_step: Option<u64>,
}

pub enum Event<'a> {
    Record(&'a MetricsRecord),
    Checkpoint,
}

#[derive(Clone, Debug, Default)]
pub struct RunSummary {
    pub records: Vec<MetricsRecord>,
    /// Mean batch loss of every step taken in this call.
    pub losses: Vec<f64>,
    pub collapsed: bool,
    /// False when `until_step` stopped the run early.
    pub finished: bool,
}

/// Mini-batch trainer. All randomness is keyed by `(seed, epoch, step)`,
/// so a run resumed from a checkpoint replays the same batches, negatives
/// and dropout masks. Interval averages for the metrics log are not
/// checkpointed; resume on a monitor boundary for an identical log.
pub struct Trainer<O> {
    model: DialogModel,
    objective: O,
    config: TrainConfig,
    optimizer: AdamW,
    step: u64,
    epoch: u64,
    batch_in_epoch: u64,
    detector: CollapseDetector,
    interval: Interval,
}

impl<O: Objective> Trainer<O> {
    pub fn new(model: DialogModel, objective: O, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = AdamW::new(
            model.params(),
            config.learning_rate,
            config.beta1,
            config.beta2,
            config.adam_eps,
            config.weight_decay,
        )?;
        Ok(Self {
            detector: CollapseDetector::new(config.collapse_patience),
            model,
            objective,
            config,
            optimizer,
            step: 0,
            epoch: 0,
            batch_in_epoch: 0,
            interval: Interval::default(),
        })
    }

    /// Restores model, optimizer and position from a training checkpoint.
    pub fn resume(checkpoint: &Checkpoint, objective: O, config: TrainConfig) -> Result<Self> {
        let state = checkpoint
            .train
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("checkpoint has no training state".into()))?;
        if state.seed != config.seed {
            return Err(Error::Config(format!(
                "checkpoint was trained with seed {}, config has {}",
                state.seed, config.seed
            )));
        }
        let mut trainer = Self::new(checkpoint.restore_model()?, objective, config)?;
        trainer.optimizer.set_state(trainer.model.params(), state.optimizer.clone())?;
        trainer.step = state.step;
        trainer.epoch = state.epoch;
        trainer.batch_in_epoch = state.batch_in_epoch;
        Ok(trainer)
    }

    pub fn checkpoint(&self, vocab: Option<&Vocab>) -> Checkpoint {
        Checkpoint::capture(
            &self.model,
            vocab,
            Some(TrainState {
                seed: self.config.seed,
                step: self.step,
                epoch: self.epoch,
                batch_in_epoch: self.batch_in_epoch,
                optimizer: self.optimizer.state().clone(),
            }),
        )
    }

    pub fn model(&self) -> &DialogModel {
        &self.model
    }

    pub fn into_model(self) -> DialogModel {
        self.model
    }

    pub fn objective(&self) -> &O {
        &self.objective
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// One optimizer step on `batch`. Each sample gets its own tape over a
    /// shared parameter snapshot; gradients of `loss / B` are summed. A
    /// non-finite loss aborts the step before any parameter changes.
    pub fn train_batch(&mut self, data: &TrainData, batch: &[BatchItem]) -> Result<StepReport> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let snapshot: Vec<Rc<Tensor>> = self.model.params().entries().iter().map(|e| Rc::new(e.tensor.clone())).collect();
        let mut grads = snapshot
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let inv_b = 1.0 / batch.len() as f64;
        let (mut total, mut rs, mut rg) = (Mean::default(), Mean::default(), Mean::default());
        let (mut da, mut kl, mut gate) = (Mean::default(), Mean::default(), Mean::default());
        let mut predictions = Vec::new();
        let mut bad = Vec::new();
        let mut detail = String::new();
        for (pos, item) in batch.iter().enumerate() {
            let sample = data.get(*item);
            let position = self.batch_in_epoch * self.config.batch_size as u64 + pos as u64;
            let negative = data.negative_for(sample, self.config.seed, self.epoch, position);
            let tape = Tape::new();
            let vars = snapshot.iter().map(|t| tape.param_shared(Rc::clone(t))).collect();
            let bound = self.model.with_vars(vars)?;
            let ctx = SampleCtx {
                sample,
                negative,
                labeled: item.pool == Pool::Labeled,
                dropout: DropoutCtx {
                    rate: self.model.config().dropout,
                    seed: self.config.seed,
                    step: self.step,
                    stream: pos as u64,
                    pass: 1,
                },
            };
            let loss = self.objective.sample_loss(&bound, &ctx)?;
            let b = &loss.bundle;
            if !b.total.is_finite() {
                if detail.is_empty() {
                    detail = format!("rs={} rg={} da={:?} kl={:?}", b.rs, b.rg, b.da, b.kl);
                }
                bad.push(sample.id.clone());
                continue;
            }
            total.add(b.total);
            rs.add(b.rs);
            rg.add(b.rg);
            if let Some(v) = b.da {
                da.add(v);
            }
            if let Some(v) = b.kl {
                kl.add(v);
            }
            if let Some(g) = b.gate.filter(|_| item.pool == Pool::Unlabeled) {
                gate.add(g.g);
            }
            if let (Some(p), Some(y)) = (loss.predicted, sample.das) {
                predictions.push((p, y));
            }
            tape.backward(loss.total.scale(inv_b)?)?;
            for (acc, var) in grads.iter_mut().zip(bound.vars()) {
                if let Some(g) = var.grad() {
                    acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, v)| *a += v);
                }
            }
        }
        if !bad.is_empty() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                samples: bad,
                detail,
            });
        }
        if !grads.iter().all(Tensor::all_finite) {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                samples: batch.iter().map(|i| data.get(*i).id.clone()).collect(),
                detail: "non-finite gradient".into(),
            });
        }
        let grad_norm = match self.config.max_grad_norm {
            Some(max) => clip_global_norm(&mut grads, max),
            None => super::optim::global_norm(&grads),
        };
        self.optimizer.step(self.model.params_mut(), &grads)?;
        self.step += 1;
        Ok(StepReport {
            step: self.step,
            epoch: self.epoch,
            loss: total.get().unwrap_or(0.0),
            rs: rs.get().unwrap_or(0.0),
            rg: rg.get().unwrap_or(0.0),
            da: da.get(),
            kl: kl.get(),
            mean_gate: gate.get(),
            grad_norm,
            predictions,
        })
    }

    fn absorb(&mut self, report: &StepReport, batch_len: usize) {
        let iv = &mut self.interval;
        for _ in 0..batch_len {
            iv.rs.add(report.rs);
            iv.rg.add(report.rg);
        }
        if let Some(v) = report.da {
            iv.da.add(v);
        }
        if let Some(v) = report.kl {
            iv.kl.add(v);
        }
        if let Some(v) = report.mean_gate {
            iv.gate.add(v);
        }
        for (p, y) in &report.predictions {
            iv.predicted.push(*p);
            iv.gold.push(*y);
        }
    }

    /// Closes the current metrics interval.
    pub fn monitor(&mut self, heldout: Option<&[Sample]>) -> Result<MetricsRecord> {
        let iv = std::mem::take(&mut self.interval);
        let stats = match heldout {
            Some(h) if h.iter().any(|s| s.das.is_some()) => {
                Some(heldout_stats(&self.model, &self.objective, h, self.config.seed, self.step)?)
            }
            _ => None,
        };
        let collapse = stats.as_ref().is_some_and(|s| self.detector.observe(s));
        let train_da_f1 = if iv.gold.is_empty() {
            None
        } else {
            Some(da_f1(&iv.predicted, &iv.gold)?)
        };
        let record = MetricsRecord {
            step: self.step,
            epoch: self.epoch,
            l_rs: iv.rs.get().unwrap_or(f64::NAN),
            l_rg: iv.rg.get().unwrap_or(f64::NAN),
            l_da: iv.da.get(),
            l_kl: iv.kl.get(),
            mean_gate: iv.gate.get(),
            train_da_f1,
            heldout_da_f1: stats.map(|s| s.da_f1),
            heldout_kl: stats.map(|s| s.kl),
            collapse,
        };
        log::info!(
            "step {} epoch {} rs {:.4} rg {:.4} da {:?} kl {:?} heldout f1 {:?} kl {:?}",
            record.step,
            record.epoch,
            record.l_rs,
            record.l_rg,
            record.l_da,
            record.l_kl,
            record.heldout_da_f1,
            record.heldout_kl
        );
        if collapse {
            log::warn!("step {}: held-out KL near zero with act F1 near chance; likely collapse", self.step);
        }
        Ok(record)
    }

    /// Trains until `config.epochs` are done or `until_step` is reached,
    /// reporting metrics records and checkpoint points through `on_event`.
    pub fn run<F>(&mut self, data: &TrainData, options: RunOptions<'_>, mut on_event: F) -> Result<RunSummary>
    where
        F: FnMut(&Self, Event<'_>) -> Result<()>,
    {
        if data.is_empty() {
            return Err(Error::Empty("training corpus"));
        }
        let mut summary = RunSummary::default();
        let cfg = self.config.clone();
        let mut pending = false;
        while self.epoch < cfg.epochs as u64 {
            let batches = mix_and_shuffle(
                data.labeled.len(),
                data.unlabeled.len(),
                cfg.seed,
                self.epoch,
                cfg.batch_size,
                cfg.balanced_batches,
            )?;
            while (self.batch_in_epoch as usize) < batches.len() {
                if options.until_step.is_some_and(|u| self.step >= u) {
                    return Ok(summary);
                }
                let batch = &batches[self.batch_in_epoch as usize];
                let report = self.train_batch(data, batch)?;
                self.batch_in_epoch += 1;
                self.absorb(&report, batch.len());
                summary.losses.push(report.loss);
                pending = true;
                if self.step % cfg.monitor_every == 0 {
                    self.emit_record(options.heldout, &mut summary, &mut on_event)?;
                    pending = false;
                }
                if cfg.checkpoint_every > 0 && self.step % cfg.checkpoint_every == 0 {
                    on_event(self, Event::Checkpoint)?;
                }
            }
            self.epoch += 1;
            self.batch_in_epoch = 0;
        }
        if pending {
            self.emit_record(options.heldout, &mut summary, &mut on_event)?;
        }
        summary.finished = true;
        Ok(summary)
    }

    fn emit_record<F>(&mut self, heldout: Option<&[Sample]>, summary: &mut RunSummary, on_event: &mut F) -> Result<()>
    where
        F: FnMut(&Self, Event<'_>) -> Result<()>,
    {
        let record = self.monitor(heldout)?;
        on_event(self, Event::Record(&record))?;
        summary.collapsed |= record.collapse;
        let collapse = record.collapse;
        summary.records.push(record);
        if collapse && self.config.abort_on_collapse {
            return Err(Error::Collapsed(format!("flagged at step {}", self.step)));
        }
        Ok(())
    }
}
