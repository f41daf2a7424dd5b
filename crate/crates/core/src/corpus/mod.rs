//! Dialog-act taxonomy, corpus records, schema mapping, cleaning and the
//! synthetic dialog generator.

mod clean;
mod mapping;
mod records;
mod synth;
mod taxonomy;

pub use clean::{
    check_text, clean_corpus, clean_record, clean_records, replace_stray_symbols, Cleaned, CleaningConfig,
    CleaningReport, CleaningRule,
};
pub use mapping::{map_label, SchemaMapping, SchemaMappingFile};
pub use records::{load_corpus, parse_corpus, write_jsonl, DialogRecord, LineIssue, Turn, ValidationReport};
pub use synth::{
    generate_synthetic_corpus, intent_names, sample_intent, AuditLabel, SynthConfig, SyntheticCorpus, SYSTEM_ACTIONS,
};
pub use taxonomy::{DaGroup, DaLabelVector, UnifiedDa, UnknownDa, NUM_DAS};
