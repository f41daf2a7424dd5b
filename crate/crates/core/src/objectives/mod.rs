//! Training objectives and their semi-supervised composition.
//!
//! Every loss takes tape variables and returns a scalar variable so the
//! trainer can backpropagate through any combination of them.

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::{Error, Result};

/// Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` before any log.
pub const PROB_EPS: f64 = 1e-12;

fn clamped_ln<'t>(p: Var<'t>) -> Result<Var<'t>> {
    Ok(p.clamp(PROB_EPS, 1.0 - PROB_EPS)?.ln()?)
}

fn one_minus<'t>(p: Var<'t>) -> Result<Var<'t>> {
    Ok(p.neg()?.add_scalar(1.0)?)
}

fn as_scalar<'t>(x: Var<'t>) -> Result<Var<'t>> {
    Ok(x.sum()?)
}

/// Response selection: `-ln σ(pos) - ln(1 - σ(neg))`.
pub fn loss_rs<'t>(logit_pos: Var<'t>, logit_neg: Var<'t>) -> Result<Var<'t>> {
    let pos = clamped_ln(as_scalar(logit_pos)?.sigmoid()?)?;
    let neg = clamped_ln(one_minus(as_scalar(logit_neg)?.sigmoid()?)?)?;
    Ok(pos.add(neg)?.neg()?)
}

/// Summed negative log-likelihood of `targets`, one per row of `token_logits`.
pub fn loss_rg<'t>(token_logits: Var<'t>, targets: &[usize]) -> Result<Var<'t>> {
    if targets.is_empty() {
        return Ok(token_logits.tape().scalar(0.0));
    }
    Ok(token_logits.log_softmax()?.pick(targets)?.sum()?.neg()?)
}

/// Multi-label binary cross-entropy summed over labels.
pub fn loss_da<'t>(p: Var<'t>, targets: &[f64]) -> Result<Var<'t>> {
    let n = p.value().numel();
    if n != targets.len() {
        return Err(Error::Input(format!("{n} act probabilities but {} targets", targets.len())));
    }
    let tape = p.tape();
    let y = tape.constant(crate::autodiff::Tensor::new(p.shape(), targets.to_vec())?);
    let not_y = tape.constant(crate::autodiff::Tensor::new(
        p.shape(),
        targets.iter().map(|t| 1.0 - t).collect(),
    )?);
    let pos = y.mul(clamped_ln(p)?)?;
    let neg = not_y.mul(clamped_ln(one_minus(p)?)?)?;
    Ok(pos.add(neg)?.sum()?.neg()?)
}

/// Bernoulli (`p`) and categorical (`q`) readings of one set of act logits.
#[derive(Clone, Copy, Debug)]
pub struct ActDistributions<'t> {
    pub p: Var<'t>,
    pub q: Var<'t>,
    pub pass: u8,
}

pub fn act_distributions(da_logits: Var<'_>, pass: u8) -> Result<ActDistributions<'_>> {
    Ok(ActDistributions {
        p: da_logits.sigmoid()?,
        q: da_logits.softmax()?,
        pass,
    })
}

/// Symmetric KL: `½ Σ (q1 - q2)(ln q1 - ln q2)`.
pub fn loss_kl<'t>(q1: Var<'t>, q2: Var<'t>) -> Result<Var<'t>> {
    let diff = q1.sub(q2)?;
    let log_ratio = q1.clamp(PROB_EPS, f64::INFINITY)?.ln()?.sub(q2.clamp(PROB_EPS, f64::INFINITY)?.ln()?)?;
    Ok(diff.mul(log_ratio)?.sum()?.scale(0.5)?)
}

/// Plain-value version of [`loss_kl`].
pub fn kl_value(q1: &[f64], q2: &[f64]) -> f64 {
    0.5 * q1
        .iter()
        .zip(q2)
        .map(|(&a, &b)| (a - b) * (a.max(PROB_EPS).ln() - b.max(PROB_EPS).ln()))
        .sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateScore {
    pub g: f64,
    pub entropy: f64,
    pub e_max: f64,
}

/// Shannon entropy in nats, with the same clamp as the losses.
pub fn entropy(q: &[f64]) -> f64 {
    -q.iter().map(|&v| if v <= 0.0 { 0.0 } else { v * v.max(PROB_EPS).ln() }).sum::<f64>()
}

/// `clip((E_max - (E + ln E)) / E_max, 0, 1)`, with `g = 1` at `E = 0`.
pub fn gate_from_entropy(e: f64, n: usize) -> f64 {
    let e_max = (n as f64).ln();
    if e <= 0.0 {
        return 1.0;
    }
    ((e_max - (e + e.ln())) / e_max).clamp(0.0, 1.0)
}

/// Gate from the first pass's categorical distribution. The value is a
/// plain number, so it carries no gradient.
pub fn gate_score(q1: &[f64]) -> GateScore {
    let e = entropy(q1);
    GateScore {
        g: gate_from_entropy(e, q1.len()),
        entropy: e,
        e_max: (q1.len() as f64).ln(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompositionMode {
    Labeled,
    Unlabeled,
    Finetune,
}

impl CompositionMode {
    pub fn name(self) -> &'static str {
        match self {
            CompositionMode::Labeled => "labeled",
            CompositionMode::Unlabeled => "unlabeled",
            CompositionMode::Finetune => "finetune",
        }
    }
}

/// Ablation switches: drop the consistency term everywhere, drop the
/// supervised act term, or fix the gate at 1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub no_kl: bool,
    pub no_da: bool,
    pub no_gate: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct LossParts<'t> {
    pub rs: Var<'t>,
    pub rg: Var<'t>,
    pub da: Option<Var<'t>>,
    pub kl: Option<Var<'t>>,
}

/// Scalar record of one composition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub rs: f64,
    pub rg: f64,
    pub da: Option<f64>,
    pub kl: Option<f64>,
    pub gate: Option<GateScore>,
    pub mode: CompositionMode,
    pub total: f64,
}

/// Combines per-sample losses:
///
/// * labeled: `RS + RG + DA + KL`
/// * unlabeled: `RS + RG + g KL`
/// * finetune: `RS + RG + alpha DA`
pub fn compose_loss<'t>(
    parts: LossParts<'t>,
    mode: CompositionMode,
    alpha: f64,
    gate: Option<GateScore>,
    ablation: Ablation,
) -> Result<(Var<'t>, LossBundle)> {
    let missing = |what| Error::MissingLossPart {
        mode: mode.name(),
        missing: what,
    };
    let mut terms = vec![parts.rs, parts.rg];
    let mut used_gate = None;
    match mode {
        CompositionMode::Labeled => {
            if !ablation.no_da {
                terms.push(parts.da.ok_or_else(|| missing("act labels"))?);
            }
            if !ablation.no_kl {
                terms.push(parts.kl.ok_or_else(|| missing("the consistency term"))?);
            }
        }
        CompositionMode::Unlabeled => {
            if !ablation.no_kl {
                let kl = parts.kl.ok_or_else(|| missing("the consistency term"))?;
                let g = if ablation.no_gate {
                    1.0
                } else {
                    gate.ok_or_else(|| missing("a gate score"))?.g
                };
                used_gate = gate.map(|s| GateScore { g, ..s });
                terms.push(kl.scale(g)?);
            }
        }
        CompositionMode::Finetune => {
            if alpha != 0.0 {
                terms.push(parts.da.ok_or_else(|| missing("act labels"))?.scale(alpha)?);
            }
        }
    }
    let total = Var::sum_all(&terms)?;
    let bundle = LossBundle {
        rs: parts.rs.item(),
        rg: parts.rg.item(),
        da: parts.da.map(|v| v.item()),
        kl: parts.kl.map(|v| v.item()),
        gate: used_gate.or(gate),
        mode,
        total: total.item(),
    };
    Ok((total, bundle))
}
