use serde::{Deserialize, Serialize};

use crate::corpus::{DaLabelVector, NUM_DAS};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F1Average {
    #[default]
    Micro,
    Macro,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl Counts {
    fn f1(self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

fn per_label(predicted: &[DaLabelVector], gold: &[DaLabelVector]) -> [Counts; NUM_DAS] {
    let mut counts = [Counts::default(); NUM_DAS];
    for (p, g) in predicted.iter().zip(gold) {
        for (i, c) in counts.iter_mut().enumerate() {
            match (p.bits()[i], g.bits()[i]) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    counts
}

/// Multi-label F1 over the 20 acts. When neither side has any positive
/// label the score is 1.
pub fn da_f1_with(predicted: &[DaLabelVector], gold: &[DaLabelVector], average: F1Average) -> Result<f64> {
    if predicted.is_empty() {
        return Err(Error::Empty("prediction list"));
    }
    if predicted.len() != gold.len() {
        return Err(Error::Input(format!("{} predictions for {} gold sets", predicted.len(), gold.len())));
    }
    let counts = per_label(predicted, gold);
    Ok(match average {
        F1Average::Micro => {
            let sum = counts.iter().fold(Counts::default(), |a, c| Counts {
                tp: a.tp + c.tp,
                fp: a.fp + c.fp,
                fn_: a.fn_ + c.fn_,
            });
            sum.f1()
        }
        F1Average::Macro => {
            let active: Vec<&Counts> = counts.iter().filter(|c| c.tp + c.fp + c.fn_ > 0).collect();
            if active.is_empty() {
                1.0
            } else {
                active.iter().map(|c| c.f1()).sum::<f64>() / active.len() as f64
            }
        }
    })
}

pub fn da_f1(predicted: &[DaLabelVector], gold: &[DaLabelVector]) -> Result<f64> {
    da_f1_with(predicted, gold, F1Average::Micro)
}

/// Best micro F1 of any input-independent predictor: the `k` most frequent
/// gold labels, for the best `k`.
pub fn chance_f1(gold: &[DaLabelVector]) -> Result<f64> {
    let mut freq: Vec<(usize, usize)> = (0..NUM_DAS)
        .map(|i| (i, gold.iter().filter(|g| g.bits()[i]).count()))
        .collect();
    freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut best: f64 = 0.0;
    let mut bits = [false; NUM_DAS];
    for &(i, _) in &freq {
        bits[i] = true;
        let constant = vec![DaLabelVector::from_bits(bits); gold.len()];
        best = best.max(da_f1(&constant, gold)?);
    }
    Ok(best)
}

/// Labels with `p >= threshold`; the arg-max label when none clears it.
pub fn threshold_labels(p: &[f64], threshold: f64) -> DaLabelVector {
    let mut bits = [false; NUM_DAS];
    for (b, &v) in bits.iter_mut().zip(p) {
        *b = v >= threshold;
    }
    if !bits.iter().any(|&b| b) {
        if let Some(i) = (0..p.len().min(NUM_DAS)).max_by(|&a, &b| p[a].total_cmp(&p[b]).then(b.cmp(&a))) {
            bits[i] = true;
        }
    }
    DaLabelVector::from_bits(bits)
}

/// Labels with `p > 0.5`, possibly none.
pub fn predict_labels(p: &[f64]) -> DaLabelVector {
    let mut bits = [false; NUM_DAS];
    for (b, &v) in bits.iter_mut().zip(p) {
        *b = v > 0.5;
    }
    DaLabelVector::from_bits(bits)
}

/// `(m1 + m2) * 0.5 + bleu`.
pub fn combined_score(m1: f64, m2: f64, bleu: f64) -> f64 {
    (m1 + m2) * 0.5 + bleu
}
