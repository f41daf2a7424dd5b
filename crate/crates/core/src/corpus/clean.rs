//! Utterance-level filters applied to raw dialog corpora.
//!
//! Rules run in a fixed order. Stray symbols (emoji, control and private-use
//! characters) are first replaced with spaces; the drop rules are then
//! evaluated on the normalized text so that a second pass sees exactly what
//! the first pass kept.

use std::io::BufRead;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{DialogRecord, Turn};

static URL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)(https?://|ftp://|www\.)\S+|\b[a-z0-9-]+\.(com|org|net|io|edu|gov|co\.uk|ly)\b").unwrap()
});

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleaningConfig {
    /// Minimum share of ASCII letters among all letters.
    pub min_ascii_letter_ratio: f64,
    /// Number of identical consecutive words that triggers the repetition rule.
    pub max_repeat: usize,
    pub offensive_words: Vec<String>,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self {
            min_ascii_letter_ratio: 0.8,
            max_repeat: 3,
            offensive_words: ["idiot", "stupid", "moron", "damn", "crap", "dumbass"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleaningRule {
    Url,
    Repetition,
    NonEnglish,
    Markup,
    Offensive,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub input: usize,
    pub url: usize,
    pub repetition: usize,
    pub non_english: usize,
    pub markup: usize,
    pub offensive: usize,
    /// Records kept after stray symbols were replaced.
    pub non_unicode_replaced: usize,
    pub malformed: usize,
    pub kept: usize,
    pub dropped: usize,
}

impl CleaningReport {
    fn count(&mut self, rule: CleaningRule) {
        match rule {
            CleaningRule::Url => self.url += 1,
            CleaningRule::Repetition => self.repetition += 1,
            CleaningRule::NonEnglish => self.non_english += 1,
            CleaningRule::Markup => self.markup += 1,
            CleaningRule::Offensive => self.offensive += 1,
        }
    }

    pub fn merge(&mut self, other: &CleaningReport) {
        self.input += other.input;
        self.url += other.url;
        self.repetition += other.repetition;
        self.non_english += other.non_english;
        self.markup += other.markup;
        self.offensive += other.offensive;
        self.non_unicode_replaced += other.non_unicode_replaced;
        self.malformed += other.malformed;
        self.kept += other.kept;
        self.dropped += other.dropped;
    }
}

fn is_stray(c: char) -> bool {
    let cp = c as u32;
    (c.is_control() && !c.is_whitespace())
        || c == '\u{FFFD}'
        || (0xE000..=0xF8FF).contains(&cp)
        || (0x1F000..=0x1FAFF).contains(&cp)
        || (0x2600..=0x27BF).contains(&cp)
        || (0xFE00..=0xFE0F).contains(&cp)
        || cp == 0x200D
}

/// Rule 6: replace emoji and non-printable symbols with a space.
pub fn replace_stray_symbols(text: &str) -> (String, bool) {
    let mut changed = false;
    let out = text
        .chars()
        .map(|c| {
            if is_stray(c) {
                changed = true;
                ' '
            } else {
                c
            }
        })
        .collect();
    (out, changed)
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
}

fn has_repetition(text: &str, n: usize) -> bool {
    let ws: Vec<String> = words(text).collect();
    ws.windows(n.max(2)).any(|w| w.iter().all(|x| *x == w[0]))
}

fn ascii_letter_ratio(text: &str) -> f64 {
    let letters = text.chars().filter(|c| c.is_alphabetic()).count();
    if letters == 0 {
        return 1.0;
    }
    text.chars().filter(|c| c.is_ascii_alphabetic()).count() as f64 / letters as f64
}

/// First drop rule that fires on `text`, in rule order.
pub fn check_text(text: &str, config: &CleaningConfig) -> Option<CleaningRule> {
    if URL.is_match(text) {
        return Some(CleaningRule::Url);
    }
    if has_repetition(text, config.max_repeat) {
        return Some(CleaningRule::Repetition);
    }
    if ascii_letter_ratio(text) < config.min_ascii_letter_ratio {
        return Some(CleaningRule::NonEnglish);
    }
    if text.contains('[') || text.contains(']') {
        return Some(CleaningRule::Markup);
    }
    if words(text).any(|w| config.offensive_words.iter().any(|o| o.eq_ignore_ascii_case(&w))) {
        return Some(CleaningRule::Offensive);
    }
    None
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cleaned {
    Kept { record: DialogRecord, replaced: bool },
    Dropped(CleaningRule),
}

/// A dialog is dropped when any of its utterances trips a drop rule.
pub fn clean_record(record: &DialogRecord, config: &CleaningConfig) -> Cleaned {
    let mut replaced = false;
    let mut turns = Vec::with_capacity(record.turns.len());
    for turn in &record.turns {
        let (text, changed) = replace_stray_symbols(&turn.text);
        replaced |= changed;
        if let Some(rule) = check_text(&text, config) {
            return Cleaned::Dropped(rule);
        }
        turns.push(Turn { text, ..turn.clone() });
    }
    Cleaned::Kept {
        record: DialogRecord {
            dialog_id: record.dialog_id.clone(),
            turns,
        },
        replaced,
    }
}

pub fn clean_records<'a, I>(records: I, config: &CleaningConfig) -> (Vec<DialogRecord>, CleaningReport)
where
    I: IntoIterator<Item = &'a DialogRecord>,
{
    let mut report = CleaningReport::default();
    let mut kept = Vec::new();
    for record in records {
        report.input += 1;
        match clean_record(record, config) {
            Cleaned::Kept { record, replaced } => {
                report.kept += 1;
                report.non_unicode_replaced += usize::from(replaced);
                kept.push(record);
            }
            Cleaned::Dropped(rule) => {
                report.dropped += 1;
                report.count(rule);
            }
        }
    }
    (kept, report)
}

/// Streams JSONL; unparseable lines count as malformed drops.
pub fn clean_corpus<R: BufRead>(reader: R, config: &CleaningConfig) -> std::io::Result<(Vec<DialogRecord>, CleaningReport)> {
    let mut report = CleaningReport::default();
    let mut kept = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<DialogRecord>(&line) {
            Ok(record) => {
                let (mut k, r) = clean_records(std::iter::once(&record), config);
                report.merge(&r);
                kept.append(&mut k);
            }
            Err(_) => {
                report.input += 1;
                report.malformed += 1;
                report.dropped += 1;
            }
        }
    }
    Ok((kept, report))
}
