//! Weight-shared encoder/decoder transformer with response-selection and
//! dialog-act heads.
//!
//! One stack of post-LN blocks serves as both the bidirectional context
//! encoder and the causal response decoder; the attention mask alone decides
//! which role a position plays. The LM output layer is tied to the token
//! embedding.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::input::{AttentionKind, AttentionMask, DialogInput};
use super::params::{truncated_normal, NamedParam, ParamId, ParamStore};
use super::ModelConfig;
use crate::autodiff::{DropoutKey, DropoutMask, Tape, Tensor, Var};
use crate::Result;

/// Dropout keying for one stochastic forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutCtx {
    pub rate: f64,
    pub seed: u64,
    pub step: u64,
    pub stream: u64,
    pub pass: u64,
}

impl DropoutCtx {
    pub fn with_pass(self, pass: u64) -> Self {
        Self { pass, ..self }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    Eval,
    Train(DropoutCtx),
}

mod site {
    pub const EMBEDDING: u64 = 0;
    pub const ATTN_PROBS: u64 = 1;
    pub const ATTN_OUT: u64 = 2;
    pub const FF_OUT: u64 = 3;

    pub fn id(layer: usize, kind: u64, head: usize) -> u64 {
        ((layer as u64 + 1) << 16) | (kind << 8) | head as u64
    }
}

#[derive(Clone, Debug)]
struct LayerIds {
    qkv_w: ParamId,
    qkv_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    ff1_w: ParamId,
    ff1_b: ParamId,
    ff2_w: ParamId,
    ff2_b: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

/// Two-layer MLP head: `tanh(h W1 + b1) W2 + b2`.
#[derive(Clone, Copy, Debug)]
pub struct HeadIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl HeadIds {
    pub fn register(
        params: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        std: f64,
    ) -> Result<Self> {
        Ok(Self {
            w1: params.add(format!("{prefix}.w1"), truncated_normal(rng, &[input, hidden], std)?)?,
            b1: params.add(format!("{prefix}.b1"), Tensor::zeros(&[hidden])?)?,
            w2: params.add(format!("{prefix}.w2"), truncated_normal(rng, &[hidden, output], std)?)?,
            b2: params.add(format!("{prefix}.b2"), Tensor::zeros(&[output])?)?,
        })
    }
}

#[derive(Clone, Debug)]
struct ModelIds {
    tok: ParamId,
    role: ParamId,
    turn: ParamId,
    pos: ParamId,
    emb_ln_g: ParamId,
    emb_ln_b: ParamId,
    layers: Vec<LayerIds>,
    lm_bias: ParamId,
    rs_head: HeadIds,
    da_head: HeadIds,
}

#[derive(Clone, Debug)]
pub struct DialogModel {
    config: ModelConfig,
    params: ParamStore,
    ids: ModelIds,
}

/// Final hidden states of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Encoded<'t> {
    /// `[total_len, hidden]`.
    pub hidden: Var<'t>,
    /// `[1, hidden]`, the `[CLS]` row.
    pub h_cls: Var<'t>,
    /// `[total_len, hidden]` normalized embeddings fed to the first block.
    pub embedded: Var<'t>,
}

#[derive(Clone, Copy, Debug)]
pub struct ModelOutputs<'t> {
    pub h_cls: Var<'t>,
    /// `[response_len + 1, vocab]`; row `t` predicts the token after position
    /// `context_len + t`.
    pub token_logits: Var<'t>,
    /// `[1, 1]` response-selection logit.
    pub rs_logit: Var<'t>,
    /// `[1, num_das]` raw act logits.
    pub da_logits: Var<'t>,
}

impl DialogModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let (d, std) = (config.hidden_dim, config.init_std);
        let p = &mut params;
        let tok = p.add("emb.token", truncated_normal(&mut rng, &[config.vocab_size, d], std)?)?;
        let role = p.add("emb.role", truncated_normal(&mut rng, &[config.num_roles, d], std)?)?;
        let turn = p.add("emb.turn", truncated_normal(&mut rng, &[config.max_turns, d], std)?)?;
        let pos = p.add("emb.position", truncated_normal(&mut rng, &[config.max_positions, d], std)?)?;
        let emb_ln_g = p.add("emb.ln.gamma", Tensor::full(&[d], 1.0)?)?;
        let emb_ln_b = p.add("emb.ln.beta", Tensor::zeros(&[d])?)?;
        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let n = |s: &str| format!("layer{l}.{s}");
            layers.push(LayerIds {
                qkv_w: p.add(n("attn.qkv.w"), truncated_normal(&mut rng, &[d, 3 * d], std)?)?,
                qkv_b: p.add(n("attn.qkv.b"), Tensor::zeros(&[3 * d])?)?,
                out_w: p.add(n("attn.out.w"), truncated_normal(&mut rng, &[d, d], std)?)?,
                out_b: p.add(n("attn.out.b"), Tensor::zeros(&[d])?)?,
                ln1_g: p.add(n("ln1.gamma"), Tensor::full(&[d], 1.0)?)?,
                ln1_b: p.add(n("ln1.beta"), Tensor::zeros(&[d])?)?,
                ff1_w: p.add(n("ff1.w"), truncated_normal(&mut rng, &[d, config.ff_dim], std)?)?,
                ff1_b: p.add(n("ff1.b"), Tensor::zeros(&[config.ff_dim])?)?,
                ff2_w: p.add(n("ff2.w"), truncated_normal(&mut rng, &[config.ff_dim, d], std)?)?,
                ff2_b: p.add(n("ff2.b"), Tensor::zeros(&[d])?)?,
                ln2_g: p.add(n("ln2.gamma"), Tensor::full(&[d], 1.0)?)?,
                ln2_b: p.add(n("ln2.beta"), Tensor::zeros(&[d])?)?,
            });
        }
        let lm_bias = p.add("lm.bias", Tensor::zeros(&[config.vocab_size])?)?;
        let rs_head = HeadIds::register(p, &mut rng, "head.rs", d, d, 1, std)?;
        let da_head = HeadIds::register(p, &mut rng, "head.da", d, d, config.num_das, std)?;
        Ok(Self {
            config,
            params,
            ids: ModelIds {
                tok,
                role,
                turn,
                pos,
                emb_ln_g,
                emb_ln_b,
                layers,
                lm_bias,
                rs_head,
                da_head,
            },
        })
    }

    /// Rebuilds a model from stored tensors. Entries past the base set
    /// (extra heads attached later) are appended in order.
    pub fn from_params(config: ModelConfig, entries: &[NamedParam]) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        let n = model.params.len();
        if entries.len() < n {
            return Err(crate::Error::Checkpoint(format!(
                "expected at least {n} parameters, found {}",
                entries.len()
            )));
        }
        model.params.load_from(&entries[..n])?;
        for e in &entries[n..] {
            model.params.add(e.name.clone(), e.tensor.clone())?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Parameters of the act head, used to check gradient isolation.
    pub fn da_head_ids(&self) -> [ParamId; 4] {
        let h = self.ids.da_head;
        [h.w1, h.b1, h.w2, h.b2]
    }

    /// Binds parameters as differentiable leaves on `tape`.
    pub fn bind<'m, 't>(&'m self, tape: &'t Tape) -> Result<BoundModel<'m, 't>> {
        BoundModel::new(self, self.params.bind(tape))
    }

    /// Wraps caller-provided leaves, one per parameter in store order.
    pub fn with_vars<'m, 't>(&'m self, vars: Vec<Var<'t>>) -> Result<BoundModel<'m, 't>> {
        if vars.len() != self.params.len() {
            return Err(crate::Error::Input(format!(
                "expected {} parameter variables, got {}",
                self.params.len(),
                vars.len()
            )));
        }
        BoundModel::new(self, vars)
    }

    /// Binds parameters as constants, for evaluation.
    pub fn bind_frozen<'m, 't>(&'m self, tape: &'t Tape) -> Result<BoundModel<'m, 't>> {
        BoundModel::new(self, self.params.bind_frozen(tape))
    }
}

pub struct BoundModel<'m, 't> {
    model: &'m DialogModel,
    vars: Vec<Var<'t>>,
    tok_emb_t: Var<'t>,
}

impl<'m, 't> BoundModel<'m, 't> {
    fn new(model: &'m DialogModel, vars: Vec<Var<'t>>) -> Result<Self> {
        let tok_emb_t = vars[model.ids.tok.0].transpose()?;
        Ok(Self {
            model,
            vars,
            tok_emb_t,
        })
    }

    pub fn model(&self) -> &'m DialogModel {
        self.model
    }

    pub fn var(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    /// Bound parameter leaves, in store order.
    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    fn dropout(&self, x: Var<'t>, mode: Mode, site: u64) -> Result<Var<'t>> {
        match mode {
            Mode::Train(ctx) if ctx.rate > 0.0 => {
                let key = DropoutKey {
                    seed: ctx.seed,
                    step: ctx.step,
                    stream: ctx.stream,
                    site,
                    pass: ctx.pass,
                };
                let mask = DropoutMask::from_key(key, &x.shape(), 1.0 - ctx.rate)?;
                Ok(x.dropout(Rc::new(mask))?)
            }
            _ => Ok(x),
        }
    }

    /// Runs the shared transformer stack.
    pub fn encode(&self, input: &DialogInput, attention: AttentionKind, mode: Mode) -> Result<Encoded<'t>> {
        let cfg = &self.model.config;
        let ids = &self.model.ids;
        let tape = self.tok_emb_t.tape();
        let len = input.total_len();
        let d = cfg.hidden_dim;
        let dh = cfg.head_dim();

        let emb = Var::sum_all(&[
            self.var(ids.tok).embedding(&input.token_ids)?,
            self.var(ids.role).embedding(&input.role_ids)?,
            self.var(ids.turn).embedding(&input.turn_ids)?,
            self.var(ids.pos).embedding(&input.position_ids)?,
        ])?;
        let mut x = emb.layer_norm(self.var(ids.emb_ln_g), self.var(ids.emb_ln_b), cfg.layer_norm_eps)?;
        let embedded = x;
        x = self.dropout(x, mode, site::EMBEDDING)?;

        let mask = tape.constant(AttentionMask::for_input(input, attention).additive());
        let scale = 1.0 / (dh as f64).sqrt();
        for (l, layer) in ids.layers.iter().enumerate() {
            let qkv = x.matmul(self.var(layer.qkv_w))?.add_row(self.var(layer.qkv_b))?;
            let mut heads = Vec::with_capacity(cfg.num_heads);
            for h in 0..cfg.num_heads {
                let q = qkv.slice(1, h * dh, (h + 1) * dh)?;
                let k = qkv.slice(1, d + h * dh, d + (h + 1) * dh)?;
                let v = qkv.slice(1, 2 * d + h * dh, 2 * d + (h + 1) * dh)?;
                let scores = q.matmul(k.transpose()?)?.scale(scale)?.add(mask)?;
                let probs = scores.softmax()?;
                let probs = self.dropout(probs, mode, site::id(l, site::ATTN_PROBS, h))?;
                heads.push(probs.matmul(v)?);
            }
            let attn = Var::concat(&heads, 1)?
                .matmul(self.var(layer.out_w))?
                .add_row(self.var(layer.out_b))?;
            let attn = self.dropout(attn, mode, site::id(l, site::ATTN_OUT, 0))?;
            x = x
                .add(attn)?
                .layer_norm(self.var(layer.ln1_g), self.var(layer.ln1_b), cfg.layer_norm_eps)?;
            let ff = x
                .matmul(self.var(layer.ff1_w))?
                .add_row(self.var(layer.ff1_b))?
                .gelu()?
                .matmul(self.var(layer.ff2_w))?
                .add_row(self.var(layer.ff2_b))?;
            let ff = self.dropout(ff, mode, site::id(l, site::FF_OUT, 0))?;
            x = x
                .add(ff)?
                .layer_norm(self.var(layer.ln2_g), self.var(layer.ln2_b), cfg.layer_norm_eps)?;
        }
        debug_assert_eq!(x.shape(), vec![len, d]);
        let h_cls = x.slice(0, 0, 1)?;
        Ok(Encoded { hidden: x, h_cls, embedded })
    }

    /// Vocabulary logits for hidden rows `[start, end)`.
    pub fn lm_logits(&self, hidden: Var<'t>, start: usize, end: usize) -> Result<Var<'t>> {
        Ok(hidden
            .slice(0, start, end)?
            .matmul(self.tok_emb_t)?
            .add_row(self.var(self.model.ids.lm_bias))?)
    }

    /// Logits for every response-segment position that has a target.
    pub fn generation_logits(&self, enc: &Encoded<'t>, input: &DialogInput) -> Result<Var<'t>> {
        self.lm_logits(enc.hidden, input.context_len, input.total_len() - 1)
    }

    pub fn head(&self, head: &HeadIds, x: Var<'t>) -> Result<Var<'t>> {
        Ok(x
            .matmul(self.var(head.w1))?
            .add_row(self.var(head.b1))?
            .tanh()?
            .matmul(self.var(head.w2))?
            .add_row(self.var(head.b2))?)
    }

    /// Response-selection head on `h_cls`.
    pub fn rs_logit(&self, h_cls: Var<'t>) -> Result<Var<'t>> {
        self.head(&self.model.ids.rs_head, h_cls)
    }

    /// Dialog-act head on `h_cls`; raw logits of shape `[1, num_das]`.
    pub fn da_logits(&self, h_cls: Var<'t>) -> Result<Var<'t>> {
        self.head(&self.model.ids.da_head, h_cls)
    }

    /// Full forward pass under the hybrid mask.
    pub fn forward(&self, input: &DialogInput, mode: Mode) -> Result<ModelOutputs<'t>> {
        let enc = self.encode(input, AttentionKind::Hybrid, mode)?;
        Ok(ModelOutputs {
            h_cls: enc.h_cls,
            token_logits: self.generation_logits(&enc, input)?,
            rs_logit: self.rs_logit(enc.h_cls)?,
            da_logits: self.da_logits(enc.h_cls)?,
        })
    }
}
