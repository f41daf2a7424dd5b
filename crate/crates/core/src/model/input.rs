//! Input sequences and the hybrid attention mask.
//!
//! A sequence is `[CLS] u_1 .. u_n [BOS] r [EOS]`. Every token carries four
//! ids (token, role, turn, position); positions restart inside each
//! utterance and inside the response segment.

use serde::{Deserialize, Serialize};

use super::vocab::{BOS_ID, CLS_ID, EOS_ID};
use super::ModelConfig;
use crate::autodiff::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    System,
}

impl Role {
    pub fn id(self) -> usize {
        match self {
            Role::User => 0,
            Role::System => 1,
        }
    }
}

/// One tokenized context utterance. `turn` is its absolute index in the dialog.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextTurn {
    pub role: Role,
    pub turn: usize,
    pub tokens: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DialogInput {
    pub token_ids: Vec<usize>,
    pub role_ids: Vec<usize>,
    pub turn_ids: Vec<usize>,
    pub position_ids: Vec<usize>,
    /// `[CLS]` plus all context tokens.
    pub context_len: usize,
    /// Whether the response segment is closed by `[EOS]`.
    pub terminated: bool,
    /// Set when old turns (or token tails) were dropped to fit `max_positions`.
    pub truncated: bool,
}

impl DialogInput {
    pub fn total_len(&self) -> usize {
        self.token_ids.len()
    }

    /// Response tokens between `[BOS]` and `[EOS]`.
    pub fn response_len(&self) -> usize {
        self.total_len() - self.context_len - 1 - usize::from(self.terminated)
    }

    /// Next-token targets for positions `context_len .. total_len - 1`:
    /// the response tokens followed by `[EOS]`.
    pub fn generation_targets(&self) -> &[usize] {
        &self.token_ids[self.context_len + 1..]
    }

    /// Same context, response replaced by `[BOS][EOS]`.
    pub fn context_only(&self) -> DialogInput {
        let mut out = self.clone();
        let c = self.context_len;
        out.token_ids.truncate(c);
        out.role_ids.truncate(c);
        out.turn_ids.truncate(c);
        out.position_ids.truncate(c);
        let role = self.role_ids[c];
        let turn = self.turn_ids[c];
        for (tok, pos) in [(BOS_ID as usize, 0), (EOS_ID as usize, 1)] {
            out.token_ids.push(tok);
            out.role_ids.push(role);
            out.turn_ids.push(turn);
            out.position_ids.push(pos);
        }
        out.terminated = true;
        out
    }

    pub fn mask(&self) -> AttentionMask {
        build_mask(self)
    }
}

fn validate_tokens(tokens: &[u32], config: &ModelConfig) -> Result<()> {
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= config.vocab_size) {
        return Err(Error::Input(format!(
            "token id {bad} outside vocabulary of size {}",
            config.vocab_size
        )));
    }
    Ok(())
}

/// Builds `[CLS] context [BOS] response [EOS]`, dropping the oldest turns
/// first when the sequence exceeds `max_positions`.
pub fn build_input(context: &[ContextTurn], response: &[u32], config: &ModelConfig) -> Result<DialogInput> {
    assemble(context, response, true, config)
}

/// Like [`build_input`] but without the closing `[EOS]`, for decoding.
pub fn build_generation_prefix(context: &[ContextTurn], prefix: &[u32], config: &ModelConfig) -> Result<DialogInput> {
    assemble(context, prefix, false, config)
}

fn assemble(context: &[ContextTurn], response: &[u32], terminated: bool, config: &ModelConfig) -> Result<DialogInput> {
    if context.is_empty() {
        return Err(Error::Input("dialog context is empty".into()));
    }
    for turn in context {
        validate_tokens(&turn.tokens, config)?;
    }
    validate_tokens(response, config)?;

    let max = config.max_positions;
    let closing = 1 + usize::from(terminated);
    let mut response: Vec<u32> = response.to_vec();
    let mut truncated = false;
    // keep room for [CLS], one context token and the response delimiters
    let response_room = max.saturating_sub(2 + closing);
    if response.len() > response_room {
        response.truncate(response_room);
        truncated = true;
    }

    let mut first = 0;
    let budget = |turns: &[ContextTurn]| -> usize {
        1 + turns.iter().map(|t| t.tokens.len()).sum::<usize>() + closing + response.len()
    };
    while budget(&context[first..]) > max && first + 1 < context.len() {
        first += 1;
        truncated = true;
    }
    let mut kept: Vec<ContextTurn> = context[first..].to_vec();
    let over = budget(&kept).saturating_sub(max);
    if over > 0 {
        let last = &mut kept[0].tokens;
        let cut = over.min(last.len());
        last.drain(..cut);
        truncated = true;
    }
    if truncated {
        log::warn!("dialog input truncated to {max} positions");
    }

    let cap = |turn: usize| turn.min(config.max_turns - 1);
    let mut input = DialogInput {
        token_ids: vec![CLS_ID as usize],
        role_ids: vec![kept[0].role.id()],
        turn_ids: vec![cap(kept[0].turn)],
        position_ids: vec![0],
        context_len: 0,
        terminated,
        truncated,
    };
    for turn in &kept {
        for (pos, &tok) in turn.tokens.iter().enumerate() {
            input.token_ids.push(tok as usize);
            input.role_ids.push(turn.role.id());
            input.turn_ids.push(cap(turn.turn));
            input.position_ids.push(pos);
        }
    }
    input.context_len = input.token_ids.len();

    let last = kept.last().expect("non-empty context");
    let response_role = match last.role {
        Role::User => Role::System,
        Role::System => Role::User,
    };
    let response_turn = cap(last.turn + 1);
    let mut segment = vec![BOS_ID];
    segment.extend_from_slice(&response);
    if terminated {
        segment.push(EOS_ID);
    }
    for (pos, tok) in segment.into_iter().enumerate() {
        input.token_ids.push(tok as usize);
        input.role_ids.push(response_role.id());
        input.turn_ids.push(response_turn);
        input.position_ids.push(pos);
    }
    Ok(input)
}

/// Row `i` may attend column `j` iff `allowed[i * size + j]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    size: usize,
    allowed: Vec<bool>,
}

/// Which attention pattern a forward pass uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionKind {
    /// Bidirectional over the context, causal over the response.
    Hybrid,
    /// Every position sees every position; used to score (context, response) pairs.
    Bidirectional,
}

/// Hybrid mask: context rows see exactly the context; response rows see the
/// context and the response prefix up to themselves.
pub fn build_mask(input: &DialogInput) -> AttentionMask {
    AttentionMask::hybrid(input.context_len, input.total_len())
}

impl AttentionMask {
    pub fn hybrid(context_len: usize, total_len: usize) -> Self {
        let mut allowed = vec![false; total_len * total_len];
        for i in 0..total_len {
            let visible = if i < context_len { context_len } else { i + 1 };
            for j in 0..visible {
                allowed[i * total_len + j] = true;
            }
        }
        Self {
            size: total_len,
            allowed,
        }
    }

    pub fn bidirectional(total_len: usize) -> Self {
        Self {
            size: total_len,
            allowed: vec![true; total_len * total_len],
        }
    }

    pub fn for_input(input: &DialogInput, kind: AttentionKind) -> Self {
        match kind {
            AttentionKind::Hybrid => build_mask(input),
            AttentionKind::Bidirectional => Self::bidirectional(input.total_len()),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.size + j]
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        self.allowed
            .chunks(self.size)
            .map(|r| r.iter().map(|&b| u8::from(b)).collect())
            .collect()
    }

    /// `0` where allowed, a large negative number elsewhere, for adding to
    /// attention scores before the softmax.
    pub fn additive(&self) -> Tensor {
        let data = self.allowed.iter().map(|&a| if a { 0.0 } else { -1e9 }).collect();
        Tensor::new(vec![self.size, self.size], data).expect("square mask")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> ModelConfig {
        ModelConfig {
            vocab_size: 50,
            max_positions: 32,
            ..Default::default()
        }
    }

    fn turn(role: Role, turn: usize, tokens: &[u32]) -> ContextTurn {
        ContextTurn { role, turn, tokens: tokens.to_vec() }
    }

    #[test]
    fn one_turn_layout() {
        let input = build_input(&[turn(Role::User, 0, &[10, 11, 12])], &[20, 21], &config()).unwrap();
        assert_eq!(input.total_len(), 8);
        assert_eq!(input.context_len, 4);
        assert_eq!(input.token_ids, vec![1, 10, 11, 12, 2, 20, 21, 3]);
        assert_eq!(input.position_ids, vec![0, 0, 1, 2, 0, 1, 2, 3]);
        assert_eq!(input.response_len(), 2);
        assert_eq!(input.generation_targets(), &[20, 21, 3]);
        assert!(!input.truncated);
    }

    #[test]
    fn roles_and_turns_are_segment_constant() {
        let ctx = [turn(Role::User, 0, &[10, 11]), turn(Role::System, 1, &[12, 13, 14])];
        let input = build_input(&ctx, &[15], &config()).unwrap();
        assert_eq!(input.role_ids[1..3], [0, 0]);
        assert_eq!(input.role_ids[3..6], [1, 1, 1]);
        assert_eq!(input.turn_ids[1..3], [0, 0]);
        assert_eq!(input.turn_ids[3..6], [1, 1, 1]);
        // response by the user at turn 2
        assert_eq!(input.role_ids[6..], [0, 0, 0]);
        assert_eq!(input.turn_ids[6..], [2, 2, 2]);
    }

    #[test]
    fn oldest_turn_dropped_first() {
        let cfg = ModelConfig { max_positions: 12, ..config() };
        let ctx = [
            turn(Role::User, 0, &[10, 11, 12]),
            turn(Role::System, 1, &[13, 14, 15]),
            turn(Role::User, 2, &[16, 17]),
        ];
        // full length: 1 + 8 + 2 + 2 = 13 > 12, dropping turn 0 gives 10
        let input = build_input(&ctx, &[20, 21], &cfg).unwrap();
        assert!(input.truncated);
        assert_eq!(input.token_ids, vec![1, 13, 14, 15, 16, 17, 2, 20, 21, 3]);
        assert_eq!(input.turn_ids[1], 1);
    }

    #[test]
    fn empty_response_is_bos_eos() {
        let input = build_input(&[turn(Role::User, 0, &[10])], &[], &config()).unwrap();
        assert_eq!(input.token_ids, vec![1, 10, 2, 3]);
        assert_eq!(input.response_len(), 0);
    }

    #[test]
    fn rejects_empty_context_and_bad_tokens() {
        assert!(build_input(&[], &[1], &config()).is_err());
        assert!(build_input(&[turn(Role::User, 0, &[99])], &[], &config()).is_err());
    }

    #[test]
    fn turn_ids_are_capped() {
        let cfg = ModelConfig { max_turns: 2, ..config() };
        let input = build_input(&[turn(Role::User, 5, &[10])], &[11], &cfg).unwrap();
        assert!(input.turn_ids.iter().all(|&t| t == 1));
    }

    #[test]
    fn hybrid_mask_layout() {
        let m = AttentionMask::hybrid(2, 4);
        assert_eq!(
            m.rows(),
            vec![vec![1, 1, 0, 0], vec![1, 1, 0, 0], vec![1, 1, 1, 0], vec![1, 1, 1, 1]]
        );
        let square = AttentionMask::hybrid(3, 3);
        assert!(square.rows().iter().flatten().all(|&b| b == 1));
    }

    #[test]
    fn context_only_keeps_prefix() {
        let input = build_input(&[turn(Role::User, 0, &[10, 11])], &[20, 21, 22], &config()).unwrap();
        let c = input.context_only();
        assert_eq!(c.token_ids, vec![1, 10, 11, 2, 3]);
        assert_eq!(c.context_len, input.context_len);
        assert_eq!(c.role_ids[3], input.role_ids[3]);
    }
}
