use std::collections::BTreeMap;

/// Replaces slot values with placeholders. Matching is on whole
/// whitespace tokens, scanning left to right and taking the longest value
/// that starts at each position.
pub fn delexicalize(text: &str, slots: &BTreeMap<String, String>) -> String {
    let values: Vec<(Vec<&str>, &str)> = slots
        .iter()
        .map(|(v, p)| (v.split_whitespace().collect::<Vec<_>>(), p.as_str()))
        .filter(|(v, _)| !v.is_empty())
        .collect();
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let mut out: Vec<&str> = Vec::with_capacity(tokens.len());
    let mut i = 0;
    while i < tokens.len() {
        let best = values
            .iter()
            .filter(|(v, _)| tokens[i..].starts_with(v))
            .max_by_key(|(v, _)| v.len());
        match best {
            Some((v, placeholder)) => {
                out.push(placeholder);
                i += v.len();
            }
            None => {
                out.push(tokens[i]);
                i += 1;
            }
        }
    }
    out.join(" ")
}
