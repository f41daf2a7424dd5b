use std::fs::{File, OpenOptions};
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::stream;
use super::objective::{context_input, Objective};
use super::Sample;
use crate::autodiff::{mix_words, Tape};
use crate::corpus::DaLabelVector;
use crate::eval::{chance_f1, da_f1, predict_labels};
use crate::model::{AttentionKind, DialogModel, DropoutCtx, Mode};
use crate::objectives::{gate_score, kl_value};
use crate::Result;

/// Held-out act F1 and the dropout-consistency KL between two train-mode
/// passes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeldoutStats {
    pub da_f1: f64,
    pub kl: f64,
    pub chance_f1: f64,
}

pub fn heldout_stats<O: Objective + ?Sized>(
    model: &DialogModel,
    objective: &O,
    samples: &[Sample],
    seed: u64,
    step: u64,
) -> Result<HeldoutStats> {
    let labeled: Vec<&Sample> = samples.iter().filter(|s| s.das.is_some()).collect();
    if labeled.is_empty() {
        return Err(crate::Error::Empty("held-out set"));
    }
    let gold: Vec<DaLabelVector> = labeled.iter().map(|s| s.das.expect("filtered")).collect();
    let mut predicted = Vec::with_capacity(labeled.len());
    let mut kl_sum = 0.0;
    let rate = model.config().dropout;
    for (i, sample) in labeled.iter().enumerate() {
        predicted.push(predict_labels(&objective.predict_acts(model, sample)?));
        let tape = Tape::new();
        let bound = model.bind_frozen(&tape)?;
        let input = context_input(model, sample)?;
        let ctx = DropoutCtx {
            rate,
            seed,
            step,
            stream: mix_words(&[stream::HELDOUT, i as u64]),
            pass: 1,
        };
        let q = |pass| -> Result<Vec<f64>> {
            let enc = bound.encode(&input, AttentionKind::Hybrid, Mode::Train(ctx.with_pass(pass)))?;
            Ok(bound.da_logits(enc.h_cls)?.softmax()?.to_vec())
        };
        kl_sum += kl_value(&q(1)?, &q(2)?);
    }
    Ok(HeldoutStats {
        da_f1: da_f1(&predicted, &gold)?,
        kl: kl_sum / labeled.len() as f64,
        chance_f1: chance_f1(&gold)?,
    })
}

/// Mean eval-mode gate over `samples`, computed from the context-only act
/// distribution.
pub fn mean_gate(model: &DialogModel, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(crate::Error::Empty("gate sample set"));
    }
    let mut sum = 0.0;
    for sample in samples {
        let tape = Tape::new();
        let bound = model.bind_frozen(&tape)?;
        let input = context_input(model, sample)?;
        let enc = bound.encode(&input, AttentionKind::Hybrid, Mode::Eval)?;
        sum += gate_score(&bound.da_logits(enc.h_cls)?.softmax()?.to_vec()).g;
    }
    Ok(sum / samples.len() as f64)
}

/// Flags consistency-only collapse: held-out KL near zero while act F1
/// stays near chance, for `patience` consecutive checks.
#[derive(Clone, Debug)]
pub struct CollapseDetector {
    pub kl_threshold: f64,
    pub chance_factor: f64,
    pub patience: usize,
    run: usize,
}

impl CollapseDetector {
    pub fn new(patience: usize) -> Self {
        Self {
            kl_threshold: 1e-4,
            chance_factor: 1.5,
            patience: patience.max(1),
            run: 0,
        }
    }

    pub fn looks_collapsed(&self, stats: &HeldoutStats) -> bool {
        stats.kl < self.kl_threshold && stats.da_f1 < self.chance_factor * stats.chance_f1
    }

    /// Records one check and reports whether collapse is flagged.
    pub fn observe(&mut self, stats: &HeldoutStats) -> bool {
        if self.looks_collapsed(stats) {
            self.run += 1;
        } else {
            self.run = 0;
        }
        self.run >= self.patience
    }
}

/// One row of the training metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub epoch: u64,
    pub l_rs: f64,
    pub l_rg: f64,
    pub l_da: Option<f64>,
    pub l_kl: Option<f64>,
    pub mean_gate: Option<f64>,
    pub train_da_f1: Option<f64>,
    pub heldout_da_f1: Option<f64>,
    pub heldout_kl: Option<f64>,
    pub collapse: bool,
}

/// Append-only CSV of [`MetricsRecord`]s.
pub struct MetricsLog {
    writer: csv::Writer<BufWriter<File>>,
}

impl MetricsLog {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            writer: csv::Writer::from_writer(BufWriter::new(File::create(path)?)),
        })
    }

    /// Opens for appending; writes the header only when the file is new.
    pub fn append(path: &Path) -> Result<Self> {
        let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            writer: csv::WriterBuilder::new()
                .has_headers(fresh)
                .from_writer(BufWriter::new(file)),
        })
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        self.writer.serialize(record)?;
        self.writer.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Vec<MetricsRecord>> {
        let mut reader = csv::Reader::from_path(path)?;
        Ok(reader.deserialize().collect::<std::result::Result<_, _>>()?)
    }
}
