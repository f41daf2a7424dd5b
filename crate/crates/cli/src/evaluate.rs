//! Prediction files and the `eval` report.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{anyhow, bail, Result};
use serde::{Deserialize, Serialize};

use semidial::corpus::{DaLabelVector, UnifiedDa};
use semidial::eval::{bleu, da_f1_with, parse_finetune_target, EvalReport, F1Average};
use semidial::model::{generate, DialogModel, GenerationConfig, Vocab};
use semidial::train::{Objective, Sample};

use crate::corpus::read_jsonl;

/// One line of a predictions or references file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnPrediction {
    pub dialog_id: String,
    pub turn: usize,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub das: Option<Vec<String>>,
}

fn act_names(v: &DaLabelVector) -> Vec<String> {
    v.labels().map(|d| d.name().to_string()).collect()
}

fn parse_acts(names: &[String]) -> Result<DaLabelVector> {
    let mut v = DaLabelVector::empty();
    for n in names {
        v.insert(n.parse::<UnifiedDa>()?);
    }
    Ok(v)
}

/// Response text of a decoded target, with any semantic spans removed.
fn response_text(tokens: &[String]) -> String {
    match parse_finetune_target(tokens) {
        Ok(s) => s.response.join(" "),
        Err(_) => tokens.join(" "),
    }
}

/// Greedy or beam responses plus act predictions for every sample.
pub fn predict<O: Objective + ?Sized>(
    model: &DialogModel,
    objective: &O,
    vocab: &Vocab,
    samples: &[Sample],
    generation: &GenerationConfig,
) -> Result<(Vec<TurnPrediction>, Vec<TurnPrediction>)> {
    let mut predictions = Vec::with_capacity(samples.len());
    let mut references = Vec::with_capacity(samples.len());
    for s in samples {
        let ids = generate(model, &s.context, generation)?;
        let tokens: Vec<String> = ids.iter().map(|&t| vocab.token(t).to_string()).collect();
        let acts = semidial::eval::predict_labels(&objective.predict_acts(model, s)?);
        predictions.push(TurnPrediction {
            dialog_id: s.dialog_id().to_string(),
            turn: s.turn(),
            response: response_text(&tokens),
            das: Some(act_names(&acts)),
        });
        let gold: Vec<String> = s.response.iter().map(|&t| vocab.token(t).to_string()).collect();
        references.push(TurnPrediction {
            dialog_id: s.dialog_id().to_string(),
            turn: s.turn(),
            response: response_text(&gold),
            das: s.das.as_ref().map(act_names),
        });
    }
    Ok((predictions, references))
}

/// Aligns predictions to references by `(dialog_id, turn)`.
pub fn evaluate(
    predictions: &[TurnPrediction],
    references: &[TurnPrediction],
    metric1: Option<f64>,
    metric2: Option<f64>,
    average: F1Average,
) -> Result<EvalReport> {
    if references.is_empty() {
        bail!("reference file is empty");
    }
    let by_key: HashMap<(&str, usize), &TurnPrediction> =
        predictions.iter().map(|p| ((p.dialog_id.as_str(), p.turn), p)).collect();
    if by_key.len() != predictions.len() {
        bail!("predictions contain duplicate (dialog_id, turn) keys");
    }
    let mut candidates = Vec::with_capacity(references.len());
    let mut refs = Vec::with_capacity(references.len());
    let mut pred_acts = Vec::new();
    let mut gold_acts = Vec::new();
    for r in references {
        let p = by_key
            .get(&(r.dialog_id.as_str(), r.turn))
            .ok_or_else(|| anyhow!("no prediction for {} turn {}", r.dialog_id, r.turn))?;
        candidates.push(p.response.as_str());
        refs.push(r.response.as_str());
        if let (Some(pa), Some(ga)) = (&p.das, &r.das) {
            pred_acts.push(parse_acts(pa)?);
            gold_acts.push(parse_acts(ga)?);
        }
    }
    if predictions.len() != references.len() {
        bail!("{} predictions for {} references", predictions.len(), references.len());
    }
    let da = if gold_acts.is_empty() {
        None
    } else {
        Some(da_f1_with(&pred_acts, &gold_acts, average)?)
    };
    Ok(EvalReport::new(bleu(&candidates, &refs)?, da, metric1, metric2))
}

pub fn evaluate_files(
    predictions: &Path,
    references: &Path,
    metric1: Option<f64>,
    metric2: Option<f64>,
    average: F1Average,
) -> Result<EvalReport> {
    let p: Vec<TurnPrediction> = read_jsonl(predictions)?;
    let r: Vec<TurnPrediction> = read_jsonl(references)?;
    evaluate(&p, &r, metric1, metric2, average)
}
