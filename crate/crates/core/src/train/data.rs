use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::mix_words;
use crate::corpus::{DaLabelVector, DialogRecord, UnifiedDa};
use crate::eval::{assemble_finetune_target, StructuredResponse};
use crate::model::{ContextTurn, Role, Vocab};
use crate::{Error, Result};

#[doc(hidden)]
pub mod stream {
    pub const SHUFFLE: u64 = 0x5_0001;
    pub const NEGATIVE: u64 = 0x5_0002;
    pub const BALANCED: u64 = 0x5_0003;
    pub const HELDOUT: u64 = 0x5_0004;
    pub const VAE_NOISE: u64 = 0x5_0005;
}

/// One (context, response) pair cut at a system turn.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `dialog_id#turn`.
    pub id: String,
    pub context: Vec<ContextTurn>,
    pub response: Vec<u32>,
    pub das: Option<DaLabelVector>,
}

impl Sample {
    pub fn dialog_id(&self) -> &str {
        self.id.rsplit_once('#').map(|(d, _)| d).unwrap_or(&self.id)
    }

    pub fn turn(&self) -> usize {
        self.id.rsplit_once('#').and_then(|(_, t)| t.parse().ok()).unwrap_or(0)
    }
}

/// Vocabulary over all utterances plus the act names used in fine-tuning
/// targets.
pub fn build_vocab(records: &[&DialogRecord], max_size: usize) -> Vocab {
    let acts: Vec<&str> = UnifiedDa::ALL.iter().map(|d| d.name()).collect();
    let acts = acts.join(" ");
    let texts = records
        .iter()
        .flat_map(|r| r.turns.iter().map(|t| t.text.as_str()))
        .chain(std::iter::once(acts.as_str()));
    Vocab::build(texts, max_size, 1)
}

fn trim_context(mut context: Vec<ContextTurn>, max_tokens: usize) -> Vec<ContextTurn> {
    let mut total: usize = context.iter().map(|t| t.tokens.len()).sum();
    while total > max_tokens && context.len() > 1 {
        total -= context.remove(0).tokens.len();
    }
    if total > max_tokens {
        let first = &mut context[0].tokens;
        let cut = total - max_tokens;
        first.drain(..cut.min(first.len()));
    }
    context
}

/// Every system turn preceded by at least one turn becomes a sample.
pub fn samples_from_records(records: &[DialogRecord], vocab: &Vocab, max_context: usize, max_response: usize) -> Vec<Sample> {
    let mut out = Vec::new();
    for record in records {
        for (k, turn) in record.turns.iter().enumerate() {
            if k == 0 || turn.role != Role::System {
                continue;
            }
            let context: Vec<ContextTurn> = record.turns[..k]
                .iter()
                .enumerate()
                .map(|(i, t)| ContextTurn {
                    role: t.role,
                    turn: i,
                    tokens: vocab.encode(&t.text),
                })
                .collect();
            let mut response = vocab.encode(&turn.text);
            response.truncate(max_response);
            out.push(Sample {
                id: format!("{}#{k}", record.dialog_id),
                context: trim_context(context, max_context),
                response,
                das: turn.das,
            });
        }
    }
    out
}

/// Rewrites each response as `r* = (d, r)` with the act span `d` taken from
/// the sample's labels; unlabeled samples keep the bare response.
pub fn with_act_spans(samples: &[Sample], vocab: &Vocab, max_response: usize) -> Result<Vec<Sample>> {
    samples
        .iter()
        .map(|s| {
            let response: Vec<String> = s.response.iter().map(|&t| vocab.token(t).to_string()).collect();
            let acts: Vec<String> = s
                .das
                .map(|d| d.labels().map(|l| l.name().to_string()).collect())
                .unwrap_or_default();
            let target = assemble_finetune_target(&StructuredResponse {
                acts,
                response,
                ..Default::default()
            })?;
            let mut ids: Vec<u32> = target.iter().map(|t| vocab.id(t)).collect();
            ids.truncate(max_response);
            Ok(Sample {
                response: ids,
                ..s.clone()
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pool {
    Labeled,
    Unlabeled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchItem {
    pub pool: Pool,
    pub index: usize,
}

/// Permutes the union of both pools with a seed- and epoch-keyed shuffle
/// and cuts it into batches. In balanced mode half of each batch comes
/// from the (cycled) labeled pool.
pub fn mix_and_shuffle(
    n_labeled: usize,
    n_unlabeled: usize,
    seed: u64,
    epoch: u64,
    batch_size: usize,
    balanced: bool,
) -> Result<Vec<Vec<BatchItem>>> {
    if n_labeled + n_unlabeled == 0 {
        return Err(Error::Empty("training corpus"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_words(&[seed, epoch, stream::SHUFFLE]));
    let item = |pool, index| BatchItem { pool, index };
    if balanced && n_labeled > 0 && n_unlabeled > 0 && batch_size >= 2 {
        let half = batch_size / 2;
        let mut unlabeled: Vec<BatchItem> = (0..n_unlabeled).map(|i| item(Pool::Unlabeled, i)).collect();
        unlabeled.shuffle(&mut rng);
        let mut lrng = ChaCha8Rng::seed_from_u64(mix_words(&[seed, epoch, stream::BALANCED]));
        let mut labeled: Vec<usize> = Vec::new();
        let mut batches = Vec::new();
        for chunk in unlabeled.chunks(batch_size - half) {
            let mut batch = Vec::with_capacity(batch_size);
            for _ in 0..half {
                if labeled.is_empty() {
                    labeled = (0..n_labeled).collect();
                    labeled.shuffle(&mut lrng);
                }
                batch.push(item(Pool::Labeled, labeled.pop().expect("refilled")));
            }
            batch.extend_from_slice(chunk);
            batch.shuffle(&mut rng);
            batches.push(batch);
        }
        return Ok(batches);
    }
    let mut all: Vec<BatchItem> = (0..n_labeled)
        .map(|i| item(Pool::Labeled, i))
        .chain((0..n_unlabeled).map(|i| item(Pool::Unlabeled, i)))
        .collect();
    all.shuffle(&mut rng);
    Ok(all.chunks(batch_size).map(<[BatchItem]>::to_vec).collect())
}

/// Labeled and unlabeled training samples.
#[derive(Clone, Debug, Default)]
pub struct TrainData {
    pub labeled: Vec<Sample>,
    pub unlabeled: Vec<Sample>,
}

impl TrainData {
    pub fn get(&self, item: BatchItem) -> &Sample {
        match item.pool {
            Pool::Labeled => &self.labeled[item.index],
            Pool::Unlabeled => &self.unlabeled[item.index],
        }
    }

    pub fn len(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn nth(&self, i: usize) -> &Sample {
        if i < self.labeled.len() {
            &self.labeled[i]
        } else {
            &self.unlabeled[i - self.labeled.len()]
        }
    }

    /// Uniform draw over the whole mixed corpus, rejecting the true
    /// response; keyed by `(seed, epoch, position)` so it changes per epoch.
    pub fn negative_for(&self, sample: &Sample, seed: u64, epoch: u64, position: u64) -> &[u32] {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_words(&[seed, epoch, position, stream::NEGATIVE]));
        let n = self.len();
        let mut pick = &self.nth(rng.random_range(0..n)).response;
        for _ in 0..32 {
            if *pick != sample.response {
                break;
            }
            pick = &self.nth(rng.random_range(0..n)).response;
        }
        pick
    }
}
