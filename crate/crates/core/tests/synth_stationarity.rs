use std::collections::{BTreeMap, HashMap};

use semidial::corpus::{generate_synthetic_corpus, intent_names, DaLabelVector, SynthConfig};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn intent_counts(seed: u64) -> (BTreeMap<String, f64>, HashMap<String, DaLabelVector>) {
    let cfg = SynthConfig {
        num_dialogs: 6700,
        labeled_fraction: 0.0,
        ..Default::default()
    };
    let c = generate_synthetic_corpus(seed, &cfg).unwrap();
    let mut counts = BTreeMap::new();
    for a in &c.audit {
        *counts.entry(a.intent.clone()).or_insert(0.0) += 1.0;
    }
    let texts: HashMap<(&str, usize), &str> = c
        .unlabeled
        .iter()
        .flat_map(|r| r.turns.iter().enumerate().map(move |(i, t)| ((r.dialog_id.as_str(), i), t.text.as_str())))
        .collect();
    let mut by_context = HashMap::new();
    for a in &c.audit {
        let user = texts[&(a.dialog_id.as_str(), a.turn - 1)].to_string();
        let prev = by_context.insert(user.clone(), a.das);
        assert!(prev.is_none_or(|p| p == a.das), "context {user:?} maps to two act sets");
    }
    (counts, by_context)
}

#[test]
fn act_distribution_is_stationary_across_seeds() {
    let (a, ctx_a) = intent_counts(1);
    let (b, ctx_b) = intent_counts(2);
    let total_a: f64 = a.values().sum();
    let total_b: f64 = b.values().sum();
    assert!(total_a >= 10_000.0 && total_b >= 10_000.0, "{total_a} {total_b}");

    let k = intent_names().len();
    assert_eq!(a.len(), k);
    assert_eq!(b.len(), k);
    let n = total_a + total_b;
    let mut stat = 0.0;
    for name in intent_names() {
        let col = a[name] + b[name];
        for (count, total) in [(a[name], total_a), (b[name], total_b)] {
            let expected = col * total / n;
            stat += (count - expected).powi(2) / expected;
        }
    }
    let p = 1.0 - ChiSquared::new((k - 1) as f64).unwrap().cdf(stat);
    assert!(p > 1e-3, "homogeneity chi-square {stat:.2}, p = {p:.2e}");

    for (ctx, das) in &ctx_a {
        if let Some(other) = ctx_b.get(ctx) {
            assert_eq!(das, other, "context {ctx:?} changes act set between seeds");
        }
    }
}

#[test]
fn intents_are_uniform_within_a_seed() {
    let (a, _) = intent_counts(3);
    let total: f64 = a.values().sum();
    let expected = total / a.len() as f64;
    let stat: f64 = a.values().map(|c| (c - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((a.len() - 1) as f64).unwrap().cdf(stat);
    assert!(p > 1e-3, "goodness-of-fit chi-square {stat:.2}, p = {p:.2e}");
}
