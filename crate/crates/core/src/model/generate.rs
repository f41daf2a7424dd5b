use super::input::{build_generation_prefix, ContextTurn};
use super::vocab::EOS_ID;
use super::{AttentionKind, DialogModel, Mode};
use crate::autodiff::Tape;
use crate::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationConfig {
    pub max_len: usize,
    /// 1 means greedy decoding.
    pub beam_width: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            max_len: 32,
            beam_width: 1,
        }
    }
}

#[derive(Clone, Debug)]
struct Beam {
    tokens: Vec<u32>,
    score: f64,
    done: bool,
}

fn next_log_probs(model: &DialogModel, context: &[ContextTurn], prefix: &[u32]) -> Result<Vec<f64>> {
    let input = build_generation_prefix(context, prefix, model.config())?;
    let tape = Tape::new();
    let bound = model.bind_frozen(&tape)?;
    let enc = bound.encode(&input, AttentionKind::Hybrid, Mode::Eval)?;
    let last = input.total_len() - 1;
    let logits = bound.lm_logits(enc.hidden, last, last + 1)?.log_softmax()?;
    Ok(logits.to_vec())
}

/// Decodes a response for `context`; the closing `[EOS]` is not returned.
///
/// Beams are ranked by total log-probability; ties keep the earlier beam.
pub fn generate(model: &DialogModel, context: &[ContextTurn], config: &GenerationConfig) -> Result<Vec<u32>> {
    let width = config.beam_width.max(1);
    let room = model.config().max_positions.saturating_sub(3);
    let max_len = config.max_len.min(room);
    if max_len == 0 {
        return Ok(Vec::new());
    }
    let mut beams = vec![Beam {
        tokens: Vec::new(),
        score: 0.0,
        done: false,
    }];
    for _ in 0..max_len {
        if beams.iter().all(|b| b.done) {
            break;
        }
        let mut candidates: Vec<Beam> = Vec::new();
        for beam in &beams {
            if beam.done {
                candidates.push(beam.clone());
                continue;
            }
            let log_probs = next_log_probs(model, context, &beam.tokens)?;
            let mut order: Vec<usize> = (0..log_probs.len()).collect();
            order.sort_by(|&a, &b| log_probs[b].total_cmp(&log_probs[a]).then(a.cmp(&b)));
            for &tok in order.iter().take(width) {
                let mut next = beam.clone();
                next.score += log_probs[tok];
                if tok as u32 == EOS_ID {
                    next.done = true;
                } else {
                    next.tokens.push(tok as u32);
                    next.done = next.tokens.len() >= max_len;
                }
                candidates.push(next);
            }
        }
        candidates.sort_by(|a, b| b.score.total_cmp(&a.score));
        candidates.truncate(width);
        beams = candidates;
    }
    Ok(beams.into_iter().next().map(|b| b.tokens).unwrap_or_default())
}
