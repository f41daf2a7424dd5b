use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DaLabelVector, UnifiedDa};
use crate::{Error, Result};

/// Source-label to unified-act table, as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemaMappingFile {
    pub source: String,
    pub map: BTreeMap<String, Vec<String>>,
}

/// A mapping whose every target is a valid unified act.
#[derive(Clone, Debug, PartialEq)]
pub struct SchemaMapping {
    source: String,
    entries: BTreeMap<String, DaLabelVector>,
}

impl SchemaMapping {
    pub fn validate(file: SchemaMappingFile) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (label, targets) in file.map {
            if targets.is_empty() {
                return Err(Error::Config(format!("source label {label:?} maps to nothing")));
            }
            let mut v = DaLabelVector::empty();
            for t in targets {
                v.insert(t.parse::<UnifiedDa>()?);
            }
            entries.insert(label.to_ascii_lowercase(), v);
        }
        Ok(Self {
            source: file.source,
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: SchemaMappingFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::validate(file)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn to_file(&self) -> SchemaMappingFile {
        SchemaMappingFile {
            source: self.source.clone(),
            map: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.labels().map(|d| d.name().to_string()).collect()))
                .collect(),
        }
    }

    /// The system-action labels emitted by the synthetic generator.
    pub fn synthetic() -> Self {
        let file = SchemaMappingFile {
            source: "synthetic".into(),
            map: super::synth::SYSTEM_ACTIONS
                .iter()
                .map(|(name, das)| (name.to_string(), das.iter().map(|d| d.name().to_string()).collect()))
                .collect(),
        };
        Self::validate(file).expect("bundled mapping is valid")
    }
}

/// Maps a source label; `a+b` composites map to the union of their parts.
pub fn map_label(label: &str, mapping: &SchemaMapping) -> Result<DaLabelVector> {
    let mut out = DaLabelVector::empty();
    for part in label.split('+') {
        let key = part.trim().to_ascii_lowercase();
        let targets = mapping.entries.get(&key).ok_or_else(|| Error::UnmappedLabel {
            label: part.trim().to_string(),
            source_name: mapping.source.clone(),
        })?;
        for d in targets.labels() {
            out.insert(d);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mapping(pairs: &[(&str, &[&str])]) -> Result<SchemaMapping> {
        SchemaMapping::validate(SchemaMappingFile {
            source: "toy".into(),
            map: pairs
                .iter()
                .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
                .collect(),
        })
    }

    #[test]
    fn lookup_composite_and_missing() {
        let m = mapping(&[("greet", &["hi"]), ("inform", &["inform"]), ("request", &["request"])]).unwrap();
        assert_eq!(map_label("greet", &m).unwrap(), DaLabelVector::from_labels([UnifiedDa::Hi]));
        assert_eq!(
            map_label("inform+request", &m).unwrap(),
            DaLabelVector::from_labels([UnifiedDa::Inform, UnifiedDa::Request])
        );
        match map_label("foo", &m) {
            Err(Error::UnmappedLabel { label, source_name }) => {
                assert_eq!(label, "foo");
                assert_eq!(source_name, "toy");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validator_rejects_targets_outside_taxonomy() {
        assert!(mapping(&[("x", &["chitchat"])]).is_err());
        assert!(mapping(&[("x", &[])]).is_err());
    }

    #[test]
    fn bundled_mapping_is_total_over_its_labels() {
        let m = SchemaMapping::synthetic();
        for label in m.labels().collect::<Vec<_>>() {
            assert!(!map_label(label, &m).unwrap().is_empty());
        }
        let covered: DaLabelVector = m
            .labels()
            .flat_map(|l| map_label(l, &m).unwrap().labels().collect::<Vec<_>>())
            .collect();
        assert_eq!(covered.count(), 20);
    }
}
