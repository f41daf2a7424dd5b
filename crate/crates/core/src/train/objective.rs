use crate::autodiff::{sigmoid, Tape, Var};
use crate::eval::predict_labels;
use crate::model::{build_input, AttentionKind, BoundModel, DialogInput, DialogModel, DropoutCtx, Mode};
use crate::objectives::{
    act_distributions, compose_loss, gate_score, loss_da, loss_kl, loss_rg, loss_rs, Ablation, CompositionMode,
    LossBundle, LossParts,
};
use crate::corpus::DaLabelVector;
use crate::Result;

use super::Sample;

/// Everything an objective needs for one training sample.
pub struct SampleCtx<'a> {
    pub sample: &'a Sample,
    pub negative: &'a [u32],
    /// Whether the sample comes from the labeled pool.
    pub labeled: bool,
    pub dropout: DropoutCtx,
}

pub struct SampleLoss<'t> {
    pub total: Var<'t>,
    pub bundle: LossBundle,
    /// Act predictions from the first pass, when the objective computed them.
    pub predicted: Option<DaLabelVector>,
}

/// A per-sample training loss plus the matching act predictor.
pub trait Objective {
    fn sample_loss<'t>(&self, model: &BoundModel<'_, 't>, ctx: &SampleCtx<'_>) -> Result<SampleLoss<'t>>;

    /// Per-label act probabilities for evaluation, from the context alone.
    fn predict_acts(&self, model: &DialogModel, sample: &Sample) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let bound = model.bind_frozen(&tape)?;
        let input = context_input(model, sample)?;
        let enc = bound.encode(&input, AttentionKind::Hybrid, Mode::Eval)?;
        Ok(bound.da_logits(enc.h_cls)?.to_vec().into_iter().map(sigmoid).collect())
    }
}

/// `[CLS] context [BOS][EOS]`.
pub fn context_input(model: &DialogModel, sample: &Sample) -> Result<DialogInput> {
    Ok(build_input(&sample.context, &[], model.config())?.context_only())
}

/// Response-selection loss on the true and a sampled response, each
/// encoded bidirectionally.
pub fn selection_loss<'t>(model: &BoundModel<'_, 't>, ctx: &SampleCtx<'_>, pos_input: &DialogInput) -> Result<Var<'t>> {
    let cfg = model.model().config();
    let pos = model.encode(pos_input, AttentionKind::Bidirectional, Mode::Train(ctx.dropout.with_pass(3)))?;
    let neg_input = build_input(&ctx.sample.context, ctx.negative, cfg)?;
    let neg = model.encode(&neg_input, AttentionKind::Bidirectional, Mode::Train(ctx.dropout.with_pass(4)))?;
    loss_rs(model.rs_logit(pos.h_cls)?, model.rs_logit(neg.h_cls)?)
}

/// Semi-supervised pre-training loss. Labeled samples use
/// `RS + RG + DA + KL`, unlabeled ones `RS + RG + g KL`.
#[derive(Clone, Copy, Debug, Default)]
pub struct PretrainObjective {
    pub ablation: Ablation,
}

impl Objective for PretrainObjective {
    fn sample_loss<'t>(&self, model: &BoundModel<'_, 't>, ctx: &SampleCtx<'_>) -> Result<SampleLoss<'t>> {
        let cfg = model.model().config();
        let input = build_input(&ctx.sample.context, &ctx.sample.response, cfg)?;
        let enc = model.encode(&input, AttentionKind::Hybrid, Mode::Train(ctx.dropout.with_pass(1)))?;
        let rg = loss_rg(model.generation_logits(&enc, &input)?, input.generation_targets())?;

        let gold = if ctx.labeled { ctx.sample.das } else { None };
        let want_da = gold.is_some() && !self.ablation.no_da;
        let want_kl = !self.ablation.no_kl;
        let mut parts = LossParts {
            rs: selection_loss(model, ctx, &input)?,
            rg,
            da: None,
            kl: None,
        };
        let mut gate = None;
        let mut predicted = None;
        if want_da || want_kl || gold.is_some() {
            let first = act_distributions(model.da_logits(enc.h_cls)?, 1)?;
            if let Some(y) = gold {
                predicted = Some(predict_labels(&first.p.to_vec()));
                if want_da {
                    parts.da = Some(loss_da(first.p, &y.as_targets())?);
                }
            }
            if want_kl {
                let ctx_only = input.context_only();
                let enc2 = model.encode(&ctx_only, AttentionKind::Hybrid, Mode::Train(ctx.dropout.with_pass(2)))?;
                let second = act_distributions(model.da_logits(enc2.h_cls)?, 2)?;
                parts.kl = Some(loss_kl(first.q, second.q)?);
                if !ctx.labeled {
                    gate = Some(gate_score(&first.q.to_vec()));
                }
            }
        }
        let mode = if ctx.labeled {
            CompositionMode::Labeled
        } else {
            CompositionMode::Unlabeled
        };
        let (total, bundle) = compose_loss(parts, mode, 1.0, gate, self.ablation)?;
        Ok(SampleLoss {
            total,
            bundle,
            predicted,
        })
    }
}

/// Fine-tuning loss `RS + RG + alpha DA` on responses that carry their act
/// span.
#[derive(Clone, Copy, Debug)]
pub struct FinetuneObjective {
    pub alpha: f64,
}

impl Objective for FinetuneObjective {
    fn sample_loss<'t>(&self, model: &BoundModel<'_, 't>, ctx: &SampleCtx<'_>) -> Result<SampleLoss<'t>> {
        let cfg = model.model().config();
        let input = build_input(&ctx.sample.context, &ctx.sample.response, cfg)?;
        let enc = model.encode(&input, AttentionKind::Hybrid, Mode::Train(ctx.dropout.with_pass(1)))?;
        let rg = loss_rg(model.generation_logits(&enc, &input)?, input.generation_targets())?;
        let mut parts = LossParts {
            rs: selection_loss(model, ctx, &input)?,
            rg,
            da: None,
            kl: None,
        };
        let mut predicted = None;
        if self.alpha != 0.0 {
            if let Some(y) = ctx.sample.das {
                let p = model.da_logits(enc.h_cls)?.sigmoid()?;
                predicted = Some(predict_labels(&p.to_vec()));
                parts.da = Some(loss_da(p, &y.as_targets())?);
            }
        }
        let (total, bundle) = compose_loss(parts, CompositionMode::Finetune, self.alpha, None, Ablation::default())?;
        Ok(SampleLoss {
            total,
            bundle,
            predicted,
        })
    }
}
