//! Corpus directories: `labeled.jsonl`, `unlabeled.jsonl` and the optional
//! `heldout.jsonl` and `audit.jsonl`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use semidial::corpus::{load_corpus, AuditLabel, DialogRecord};
use semidial::model::Vocab;
use semidial::train::{build_vocab, samples_from_records, Sample, TrainConfig, TrainData};

pub const LABELED: &str = "labeled.jsonl";
pub const UNLABELED: &str = "unlabeled.jsonl";
pub const HELDOUT: &str = "heldout.jsonl";
pub const AUDIT: &str = "audit.jsonl";

pub struct CorpusDir {
    pub labeled: Vec<DialogRecord>,
    pub unlabeled: Vec<DialogRecord>,
    pub heldout: Vec<DialogRecord>,
    pub audit: Vec<AuditLabel>,
    /// Files that were read, for the manifest.
    pub files: Vec<PathBuf>,
}

fn load(path: &Path, expect_labels: bool) -> Result<Vec<DialogRecord>> {
    let (records, report) = load_corpus(path, expect_labels).with_context(|| format!("loading {}", path.display()))?;
    if !report.is_clean() {
        bail!("{} failed validation: {}", path.display(), serde_json::to_string(&report)?);
    }
    Ok(records)
}

impl CorpusDir {
    pub fn load(root: &Path) -> Result<Self> {
        let mut files = Vec::new();
        let mut take = |name: &str, required: bool| -> Result<Option<PathBuf>> {
            let p = root.join(name);
            if p.exists() {
                files.push(p.clone());
                Ok(Some(p))
            } else if required {
                bail!("corpus directory {} has no {name}", root.display())
            } else {
                Ok(None)
            }
        };
        let labeled = load(&take(LABELED, true)?.expect("required"), true)?;
        let unlabeled = match take(UNLABELED, false)? {
            Some(p) => load(&p, false)?,
            None => Vec::new(),
        };
        let heldout = match take(HELDOUT, false)? {
            Some(p) => load(&p, true)?,
            None => Vec::new(),
        };
        let audit = match take(AUDIT, false)? {
            Some(p) => read_jsonl(&p)?,
            None => Vec::new(),
        };
        Ok(Self {
            labeled,
            unlabeled,
            heldout,
            audit,
            files,
        })
    }

    /// Keeps act labels on the first `fraction × total` dialogs and moves the
    /// rest of the labeled split, labels stripped, to the unlabeled pool.
    pub fn restrict_labels(&mut self, fraction: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&fraction) {
            bail!("labeled fraction {fraction} outside [0, 1]");
        }
        let total = self.labeled.len() + self.unlabeled.len();
        let keep = (total as f64 * fraction).round() as usize;
        if keep > self.labeled.len() {
            bail!(
                "labeled fraction {fraction} needs {keep} labeled dialogs but the corpus has {}",
                self.labeled.len()
            );
        }
        let moved: Vec<DialogRecord> = self.labeled.drain(keep..).map(|r| r.unlabeled()).collect();
        self.unlabeled.splice(0..0, moved);
        Ok(())
    }
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

/// Samples for both training pools plus the held-out split.
pub struct Prepared {
    pub vocab: Vocab,
    pub data: TrainData,
    pub heldout: Vec<Sample>,
}

pub fn prepare(corpus: &CorpusDir, vocab: Option<Vocab>, max_vocab: usize, train: &TrainConfig) -> Prepared {
    let vocab = vocab.unwrap_or_else(|| {
        let all: Vec<&DialogRecord> = corpus.labeled.iter().chain(&corpus.unlabeled).collect();
        build_vocab(&all, max_vocab)
    });
    let cut = |r: &[DialogRecord]| samples_from_records(r, &vocab, train.max_context_len, train.max_response_len);
    let data = TrainData {
        labeled: cut(&corpus.labeled),
        unlabeled: cut(&corpus.unlabeled),
    };
    let heldout = cut(&corpus.heldout);
    Prepared { vocab, data, heldout }
}
