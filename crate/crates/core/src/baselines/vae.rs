//! Latent-variable baseline: a diagonal Gaussian `z` the size of the act
//! vector, inferred from the response (and acts, when labeled) during
//! training and from the context alone at test time.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{mix_words, sigmoid, Tape, Tensor, Var};
use crate::corpus::NUM_DAS;
use crate::model::{build_input, truncated_normal, AttentionKind, BoundModel, DialogModel, HeadIds, Mode, ParamId};
use crate::objectives::{loss_da, loss_rg, loss_rs, CompositionMode, LossBundle};
use crate::train::{context_input, stream, Objective, Sample, SampleCtx, SampleLoss};
use crate::{Error, Result};

pub const LATENT_DIM: usize = NUM_DAS;
/// Log-variances are clamped to `[-LOGVAR_BOUND, LOGVAR_BOUND]`.
pub const LOGVAR_BOUND: f64 = 10.0;

/// Mean and log-variance of a diagonal Gaussian, each `[1, LATENT_DIM]`.
#[derive(Clone, Copy, Debug)]
pub struct LatentGaussian<'t> {
    pub mean: Var<'t>,
    pub logvar: Var<'t>,
}

impl<'t> LatentGaussian<'t> {
    /// Splits a `[1, 2 * LATENT_DIM]` head output.
    pub fn from_head(out: Var<'t>) -> Result<Self> {
        Ok(Self {
            mean: out.slice(1, 0, LATENT_DIM)?,
            logvar: out.slice(1, LATENT_DIM, 2 * LATENT_DIM)?.clamp(-LOGVAR_BOUND, LOGVAR_BOUND)?,
        })
    }

    /// `z = mean + exp(logvar / 2) * eps`.
    pub fn reparameterize(&self, eps: &[f64]) -> Result<Var<'t>> {
        let tape = self.mean.tape();
        let eps = tape.constant(Tensor::new(self.mean.shape(), eps.to_vec())?);
        Ok(self.mean.add(self.logvar.scale(0.5)?.exp()?.mul(eps)?)?)
    }
}

/// `KL(q || p)` between diagonal Gaussians, summed over dimensions.
pub fn gaussian_kl<'t>(q: &LatentGaussian<'t>, p: &LatentGaussian<'t>) -> Result<Var<'t>> {
    let diff = q.mean.sub(p.mean)?;
    let inv_var_p = p.logvar.neg()?.exp()?;
    let ratio = q.logvar.exp()?.add(diff.mul(diff)?)?.mul(inv_var_p)?;
    Ok(p.logvar.sub(q.logvar)?.add(ratio)?.add_scalar(-1.0)?.sum()?.scale(0.5)?)
}

/// Plain-value [`gaussian_kl`].
pub fn gaussian_kl_value(mean_q: &[f64], logvar_q: &[f64], mean_p: &[f64], logvar_p: &[f64]) -> f64 {
    (0..mean_q.len())
        .map(|i| {
            let d = mean_q[i] - mean_p[i];
            0.5 * (logvar_p[i] - logvar_q[i] + (logvar_q[i].exp() + d * d) / logvar_p[i].exp() - 1.0)
        })
        .sum()
}

/// Seeded standard-normal draws.
pub fn standard_normal(seed: u64, step: u64, stream_id: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_words(&[seed, step, stream_id, stream::VAE_NOISE]));
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Extra parameters on top of the shared trunk.
#[derive(Clone, Copy, Debug)]
pub struct VaeHeads {
    /// `p(z | c)` from the context `[CLS]` state.
    pub prior: HeadIds,
    /// `q(z | c, r[, a])` from the bidirectional `[CLS]` state and the act vector.
    pub posterior: HeadIds,
    /// Projects `[z; a]` into the hidden size; added to response rows before
    /// the LM layer.
    pub condition: ParamId,
    /// `p(a | z, c)` from `[h_cls; z]`.
    pub act: HeadIds,
}

const NAMES: [&str; 4] = ["vae.prior", "vae.posterior", "vae.condition", "vae.act"];

impl VaeHeads {
    pub fn attach(model: &mut DialogModel, seed: u64) -> Result<Self> {
        if model.params().find("vae.condition").is_some() {
            return Self::locate(model);
        }
        let (d, std) = (model.config().hidden_dim, model.config().init_std);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_words(&[seed, 0x7ae]));
        let p = model.params_mut();
        let prior = HeadIds::register(p, &mut rng, NAMES[0], d, d, 2 * LATENT_DIM, std)?;
        let posterior = HeadIds::register(p, &mut rng, NAMES[1], d + NUM_DAS, d, 2 * LATENT_DIM, std)?;
        let condition = p.add(NAMES[2], truncated_normal(&mut rng, &[LATENT_DIM + NUM_DAS, d], std)?)?;
        let act = HeadIds::register(p, &mut rng, NAMES[3], d + LATENT_DIM, d, NUM_DAS, std)?;
        Ok(Self {
            prior,
            posterior,
            condition,
            act,
        })
    }

    /// Finds previously attached heads, e.g. after a checkpoint restore.
    pub fn locate(model: &DialogModel) -> Result<Self> {
        let p = model.params();
        let find = |name: String| p.find(&name).ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")));
        let head = |prefix: &str| -> Result<HeadIds> {
            Ok(HeadIds {
                w1: find(format!("{prefix}.w1"))?,
                b1: find(format!("{prefix}.b1"))?,
                w2: find(format!("{prefix}.w2"))?,
                b2: find(format!("{prefix}.b2"))?,
            })
        };
        Ok(Self {
            prior: head(NAMES[0])?,
            posterior: head(NAMES[1])?,
            condition: find(NAMES[2].into())?,
            act: head(NAMES[3])?,
        })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let h = |x: &HeadIds| [x.w1, x.b1, x.w2, x.b2];
        let mut out = Vec::new();
        out.extend(h(&self.prior));
        out.extend(h(&self.posterior));
        out.push(self.condition);
        out.extend(h(&self.act));
        out
    }
}

/// Per-term values of one VAE loss evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VaeTerms {
    pub kl: f64,
    pub reconstruction: f64,
    pub act: Option<f64>,
    pub rs: f64,
    pub da: Option<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct VaeObjective {
    pub heads: VaeHeads,
}

impl VaeObjective {
    /// Unlabeled: `KL(q||p) + recon + RS`. Labeled adds the act term
    /// `-ln p(a | z, c)` and `L_DA`. `eps` is the reparameterization noise.
    pub fn terms<'t>(
        &self,
        model: &BoundModel<'_, 't>,
        ctx: &SampleCtx<'_>,
        eps: &[f64],
    ) -> Result<(Var<'t>, VaeTerms)> {
        let cfg = model.model().config();
        let tape = model.vars()[0].tape();
        let input = build_input(&ctx.sample.context, &ctx.sample.response, cfg)?;
        let enc = model.encode(&input, AttentionKind::Hybrid, Mode::Train(ctx.dropout.with_pass(1)))?;
        let full = model.encode(&input, AttentionKind::Bidirectional, Mode::Train(ctx.dropout.with_pass(3)))?;
        let neg_input = build_input(&ctx.sample.context, ctx.negative, cfg)?;
        let neg = model.encode(&neg_input, AttentionKind::Bidirectional, Mode::Train(ctx.dropout.with_pass(4)))?;
        let rs = loss_rs(model.rs_logit(full.h_cls)?, model.rs_logit(neg.h_cls)?)?;

        let gold = if ctx.labeled { ctx.sample.das } else { None };
        let a = tape.constant(Tensor::new(
            vec![1, NUM_DAS],
            gold.map(|y| y.as_targets()).unwrap_or_else(|| vec![0.0; NUM_DAS]),
        )?);
        let prior = LatentGaussian::from_head(model.head(&self.heads.prior, enc.h_cls)?)?;
        let posterior = LatentGaussian::from_head(model.head(&self.heads.posterior, Var::concat(&[full.h_cls, a], 1)?)?)?;
        let kl = gaussian_kl(&posterior, &prior)?;
        let z = posterior.reparameterize(eps)?;

        let cond = Var::concat(&[z, a], 1)?
            .matmul(model.var(self.heads.condition))?
            .reshape(&[cfg.hidden_dim])?;
        let rows = enc.hidden.slice(0, input.context_len, input.total_len() - 1)?.add_row(cond)?;
        let logits = model.lm_logits(rows, 0, input.total_len() - 1 - input.context_len)?;
        let recon = loss_rg(logits, input.generation_targets())?;

        let mut terms = vec![kl, recon, rs];
        let mut act_term = None;
        let mut da = None;
        if let Some(y) = gold {
            let targets = y.as_targets();
            let pa = model.head(&self.heads.act, Var::concat(&[enc.h_cls, z], 1)?)?.sigmoid()?;
            let t = loss_da(pa, &targets)?;
            let d = loss_da(model.da_logits(enc.h_cls)?.sigmoid()?, &targets)?;
            terms.push(t);
            terms.push(d);
            act_term = Some(t.item());
            da = Some(d.item());
        }
        let total = Var::sum_all(&terms)?;
        Ok((
            total,
            VaeTerms {
                kl: kl.item(),
                reconstruction: recon.item(),
                act: act_term,
                rs: rs.item(),
                da,
            },
        ))
    }
}

impl Objective for VaeObjective {
    fn sample_loss<'t>(&self, model: &BoundModel<'_, 't>, ctx: &SampleCtx<'_>) -> Result<SampleLoss<'t>> {
        let d = ctx.dropout;
        let eps = standard_normal(d.seed, d.step, d.stream, LATENT_DIM);
        let (total, terms) = self.terms(model, ctx, &eps)?;
        let mode = if ctx.labeled {
            CompositionMode::Labeled
        } else {
            CompositionMode::Unlabeled
        };
        Ok(SampleLoss {
            bundle: LossBundle {
                rs: terms.rs,
                rg: terms.reconstruction,
                da: terms.da.zip(terms.act).map(|(a, b)| a + b),
                kl: Some(terms.kl),
                gate: None,
                mode,
                total: total.item(),
            },
            total,
            predicted: None,
        })
    }

    /// Test-time path: the act head at the prior mean.
    fn predict_acts(&self, model: &DialogModel, sample: &Sample) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let bound = model.bind_frozen(&tape)?;
        let input = context_input(model, sample)?;
        let enc = bound.encode(&input, AttentionKind::Hybrid, Mode::Eval)?;
        let prior = LatentGaussian::from_head(bound.head(&self.heads.prior, enc.h_cls)?)?;
        let logits = bound.head(&self.heads.act, Var::concat(&[enc.h_cls, prior.mean], 1)?)?;
        Ok(logits.to_vec().into_iter().map(sigmoid).collect())
    }
}
