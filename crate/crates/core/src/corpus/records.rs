use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DaLabelVector, UnifiedDa};
use crate::model::Role;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub das: Option<DaLabelVector>,
}

impl Turn {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            text: text.into(),
            das: None,
        }
    }

    pub fn labeled(role: Role, text: impl Into<String>, das: DaLabelVector) -> Self {
        Self {
            role,
            text: text.into(),
            das: Some(das),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogRecord {
    pub dialog_id: String,
    pub turns: Vec<Turn>,
}

impl DialogRecord {
    pub fn is_labeled(&self) -> bool {
        self.turns.iter().any(|t| t.das.is_some())
    }

    /// Copy with every act annotation removed.
    pub fn unlabeled(&self) -> Self {
        Self {
            dialog_id: self.dialog_id.clone(),
            turns: self.turns.iter().map(|t| Turn::new(t.role, t.text.clone())).collect(),
        }
    }
}

/// One structural problem found while loading.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LineIssue {
    pub line: usize,
    pub dialog_id: Option<String>,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub lines: usize,
    pub records: usize,
    pub issues: Vec<LineIssue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }
}

#[derive(Deserialize)]
struct RawTurn {
    role: Role,
    text: String,
    #[serde(default)]
    das: Option<Vec<String>>,
}

#[derive(Deserialize)]
struct RawRecord {
    dialog_id: String,
    turns: Vec<RawTurn>,
}

fn convert(raw: RawRecord, expect_labels: bool) -> std::result::Result<DialogRecord, String> {
    if raw.turns.is_empty() {
        return Err("dialog has no turns".into());
    }
    let mut turns = Vec::with_capacity(raw.turns.len());
    for (i, t) in raw.turns.into_iter().enumerate() {
        let das = match t.das {
            Some(names) => {
                let mut v = DaLabelVector::empty();
                for name in names {
                    let da: UnifiedDa = name.parse().map_err(|e| format!("turn {i}: {e}"))?;
                    v.insert(da);
                }
                Some(v)
            }
            None => None,
        };
        if expect_labels && t.role == Role::System && das.is_none_or(|d| d.is_empty()) {
            return Err(format!("turn {i}: system turn without dialog acts"));
        }
        turns.push(Turn {
            role: t.role,
            text: t.text,
            das,
        });
    }
    Ok(DialogRecord {
        dialog_id: raw.dialog_id,
        turns,
    })
}

/// Reads one dialog per line. Bad lines are reported and skipped; a
/// repeated dialog id aborts the load.
pub fn parse_corpus<R: BufRead>(reader: R, expect_labels: bool) -> Result<(Vec<DialogRecord>, ValidationReport)> {
    let mut report = ValidationReport::default();
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        report.lines += 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                report.issues.push(LineIssue {
                    line: line_no,
                    dialog_id: None,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let id = raw.dialog_id.clone();
        if !seen.insert(id.clone()) {
            return Err(Error::Corpus(format!("line {line_no}: duplicated dialog id {id:?}")));
        }
        match convert(raw, expect_labels) {
            Ok(rec) => records.push(rec),
            Err(message) => report.issues.push(LineIssue {
                line: line_no,
                dialog_id: Some(id),
                message,
            }),
        }
    }
    report.records = records.len();
    Ok((records, report))
}

pub fn load_corpus(path: &Path, expect_labels: bool) -> Result<(Vec<DialogRecord>, ValidationReport)> {
    parse_corpus(BufReader::new(File::open(path)?), expect_labels)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"dialog_id": "a", "turns": [{"role": "user", "text": "hi"}, {"role": "system", "text": "hello", "das": ["hi"]}]}
{"dialog_id": "b", "turns": [{"role": "user", "text": "bye"}, {"role": "system", "text": "bye", "das": ["bye", "thank_you"]}]}
"#;

    #[test]
    fn well_formed_file_loads_cleanly() {
        let (records, report) = parse_corpus(GOOD.as_bytes(), true).unwrap();
        assert_eq!(records.len(), 2);
        assert!(report.is_clean());
        assert_eq!(records[1].turns[1].das.unwrap().count(), 2);
    }

    #[test]
    fn unknown_label_is_a_line_error() {
        let text = GOOD.replace("\"hi\"]", "\"foo\"]");
        let (records, report) = parse_corpus(text.as_bytes(), true).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(report.issues.len(), 1);
        assert_eq!(report.issues[0].line, 1);
        assert!(report.issues[0].message.contains("foo"));
    }

    #[test]
    fn missing_labels_rejected_when_expected() {
        let text = r#"{"dialog_id": "a", "turns": [{"role": "user", "text": "hi"}, {"role": "system", "text": "hello"}]}"#;
        let (records, report) = parse_corpus(text.as_bytes(), true).unwrap();
        assert!(records.is_empty());
        assert_eq!(report.issues.len(), 1);
        let (records, _) = parse_corpus(text.as_bytes(), false).unwrap();
        assert_eq!(records.len(), 1);
    }

    #[test]
    fn duplicate_ids_abort() {
        let text = format!("{GOOD}{}", GOOD.lines().next().unwrap());
        assert!(matches!(parse_corpus(text.as_bytes(), true), Err(Error::Corpus(_))));
    }

    #[test]
    fn jsonl_round_trip() {
        let (records, _) = parse_corpus(GOOD.as_bytes(), true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        write_jsonl(&path, &records).unwrap();
        let (back, report) = load_corpus(&path, true).unwrap();
        assert_eq!(back, records);
        assert!(report.is_clean());
        assert!(!records[0].unlabeled().is_labeled());
    }
}
