//! Self-training baseline: a teacher trained on labeled data annotates the
//! unlabeled pool, and a student learns from both.

use serde::{Deserialize, Serialize};

use crate::autodiff::mix_words;
use crate::corpus::DaLabelVector;
use crate::eval::threshold_labels;
use crate::model::{DialogModel, ModelConfig};
use crate::objectives::Ablation;
use crate::train::{Objective, PretrainObjective, RunOptions, RunSummary, Sample, TrainConfig, TrainData, Trainer};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub dialog_id: String,
    pub turn: usize,
    pub das: DaLabelVector,
    /// Highest per-label probability.
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    /// Fingerprint of the teacher parameters.
    pub teacher: String,
    pub labels: Vec<PseudoLabel>,
}

/// Stable hex digest of every parameter value.
pub fn param_fingerprint(model: &DialogModel) -> String {
    let words: Vec<u64> = model
        .params()
        .entries()
        .iter()
        .flat_map(|e| e.tensor.data().iter().map(|v| v.to_bits()))
        .collect();
    format!("{:016x}", mix_words(&words))
}

/// Labels with probability at least `threshold`, falling back to the most
/// probable label when none clears it.
pub fn predict_pseudo_labels<O: Objective>(
    model: &DialogModel,
    objective: &O,
    samples: &[Sample],
    threshold: f64,
) -> Result<PseudoLabelSet> {
    let labels = samples
        .iter()
        .map(|s| {
            let p = objective.predict_acts(model, s)?;
            Ok(PseudoLabel {
                dialog_id: s.dialog_id().to_string(),
                turn: s.turn(),
                das: threshold_labels(&p, threshold),
                confidence: p.iter().copied().fold(0.0, f64::max),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PseudoLabelSet {
        teacher: param_fingerprint(model),
        labels,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PseudoLabelConfig {
    pub threshold: f64,
    pub teacher: TrainConfig,
    pub student: TrainConfig,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            teacher: TrainConfig::default(),
            student: TrainConfig::default(),
        }
    }
}

pub struct PseudoLabelOutcome {
    pub teacher: DialogModel,
    pub teacher_run: RunSummary,
    pub labels: PseudoLabelSet,
    pub student: DialogModel,
    pub student_run: RunSummary,
}

/// Teacher on labeled data with `DA + RS + RG`, pseudo labels on the
/// unlabeled pool, then a student on the union with the labeled loss.
pub fn pseudo_label_pipeline(
    model_config: &ModelConfig,
    model_seed: u64,
    data: &TrainData,
    heldout: Option<&[Sample]>,
    config: &PseudoLabelConfig,
) -> Result<PseudoLabelOutcome> {
    if data.labeled.is_empty() {
        return Err(Error::Empty("labeled corpus"));
    }
    let teacher_data = TrainData {
        labeled: data.labeled.clone(),
        unlabeled: Vec::new(),
    };
    let teacher_objective = PretrainObjective {
        ablation: Ablation {
            no_kl: true,
            ..Default::default()
        },
    };
    let mut teacher = Trainer::new(
        DialogModel::new(model_config.clone(), model_seed)?,
        teacher_objective,
        config.teacher.clone(),
    )?;
    let options = RunOptions {
        heldout,
        until_step: None,
    };
    let teacher_run = teacher.run(&teacher_data, options, |_, _| Ok(()))?;
    if teacher_run.collapsed {
        return Err(Error::Collapsed(
            "teacher predictions collapsed to a constant; pseudo labels would carry no signal".into(),
        ));
    }
    let teacher = teacher.into_model();
    let labels = predict_pseudo_labels(&teacher, &teacher_objective, &data.unlabeled, config.threshold)?;

    let mut labeled = data.labeled.clone();
    labeled.extend(data.unlabeled.iter().zip(&labels.labels).map(|(s, l)| Sample {
        das: Some(l.das),
        ..s.clone()
    }));
    let student_data = TrainData {
        labeled,
        unlabeled: Vec::new(),
    };
    let mut student = Trainer::new(
        DialogModel::new(model_config.clone(), model_seed)?,
        PretrainObjective::default(),
        config.student.clone(),
    )?;
    let student_run = student.run(&student_data, options, |_, _| Ok(()))?;
    Ok(PseudoLabelOutcome {
        teacher,
        teacher_run,
        labels,
        student: student.into_model(),
        student_run,
    })
}
