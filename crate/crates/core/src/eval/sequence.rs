use serde::{Deserialize, Serialize};

use crate::model::vocab::{ACT, BELIEF, DB, RESP, USR};
use crate::{Error, Result};

const MARKERS: [&str; 5] = [USR, BELIEF, DB, ACT, RESP];

/// Belief, database, act and response spans of one system turn.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredResponse {
    pub belief: Vec<String>,
    pub db: Vec<String>,
    pub acts: Vec<String>,
    pub response: Vec<String>,
}

impl StructuredResponse {
    pub fn response_only(response: Vec<String>) -> Self {
        Self {
            response,
            ..Default::default()
        }
    }

    pub fn has_semantics(&self) -> bool {
        !(self.belief.is_empty() && self.db.is_empty() && self.acts.is_empty())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FinetuneSequence {
    /// `[USR]` followed by the user context.
    pub context: Vec<String>,
    /// Generation target `(d, r)`.
    pub target: Vec<String>,
}

impl FinetuneSequence {
    pub fn tokens(&self) -> Vec<String> {
        self.context.iter().chain(&self.target).cloned().collect()
    }
}

fn check_span(name: &str, span: &[String]) -> Result<()> {
    if let Some(m) = span.iter().find(|t| MARKERS.contains(&t.as_str())) {
        return Err(Error::Input(format!("{name} span contains the delimiter {m}")));
    }
    Ok(())
}

/// Target spans in the order belief, db, acts, response, each behind its
/// delimiter. Without any semantic span the target is the bare response.
pub fn assemble_finetune_target(s: &StructuredResponse) -> Result<Vec<String>> {
    for (name, span) in [("belief", &s.belief), ("db", &s.db), ("act", &s.acts), ("response", &s.response)] {
        check_span(name, span)?;
    }
    if !s.has_semantics() {
        return Ok(s.response.clone());
    }
    let mut out = Vec::new();
    for (marker, span) in [(BELIEF, &s.belief), (DB, &s.db), (ACT, &s.acts), (RESP, &s.response)] {
        out.push(marker.to_string());
        out.extend(span.iter().cloned());
    }
    Ok(out)
}

/// `requires_belief` marks tasks that track dialog state; an empty belief
/// span is an error there.
pub fn assemble_finetune_sequence(
    user_context: &[String],
    s: &StructuredResponse,
    requires_belief: bool,
) -> Result<FinetuneSequence> {
    if requires_belief && s.belief.is_empty() {
        return Err(Error::Input("task tracks belief states but the belief span is empty".into()));
    }
    check_span("user", user_context)?;
    let mut context = vec![USR.to_string()];
    context.extend(user_context.iter().cloned());
    Ok(FinetuneSequence {
        context,
        target: assemble_finetune_target(s)?,
    })
}

pub fn parse_finetune_target(target: &[String]) -> Result<StructuredResponse> {
    if target.first().map(String::as_str) != Some(BELIEF) {
        check_span("response", target)?;
        return Ok(StructuredResponse::response_only(target.to_vec()));
    }
    let mut spans: [Vec<String>; 4] = Default::default();
    let order = [BELIEF, DB, ACT, RESP];
    let mut current = 0;
    for tok in &target[1..] {
        match order.iter().position(|m| m == tok) {
            Some(next) if next == current + 1 => current = next,
            Some(_) => return Err(Error::Input(format!("delimiter {tok} out of order"))),
            None => spans[current].push(tok.clone()),
        }
    }
    if current != 3 {
        return Err(Error::Input("target is missing span delimiters".into()));
    }
    let [belief, db, acts, response] = spans;
    Ok(StructuredResponse { belief, db, acts, response })
}

pub fn parse_finetune_sequence(tokens: &[String]) -> Result<(Vec<String>, StructuredResponse)> {
    if tokens.first().map(String::as_str) != Some(USR) {
        return Err(Error::Input("sequence must start with [USR]".into()));
    }
    let start = tokens.iter().position(|t| t == BELIEF);
    match start {
        Some(i) => Ok((tokens[1..i].to_vec(), parse_finetune_target(&tokens[i..])?)),
        None => Err(Error::Input("cannot locate the target of a response-only sequence".into())),
    }
}
