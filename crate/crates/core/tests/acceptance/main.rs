//! Acceptance criteria, one line per criterion.
//!
//! `cargo test --release --test acceptance -- 5 7` runs a subset.

mod experiments;
mod properties;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

pub type CheckResult = Result<Outcome, Box<dyn std::error::Error>>;

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

const CRITERIA: [(u32, &str, fn() -> CheckResult); 11] = [
    (1, "gradient suite", properties::gradient_suite),
    (2, "gate formula", properties::gate_formula),
    (3, "KL properties", properties::kl_properties),
    (4, "score formulas", properties::score_formulas),
    (5, "collapse reproduction", experiments::collapse_reproduction),
    (6, "gate selectivity", experiments::gate_selectivity),
    (7, "ablation ordering", experiments::ablation_ordering),
    (8, "mask and causality", properties::mask_causality),
    (9, "determinism", properties::determinism),
    (10, "corpus pipeline", properties::corpus_pipeline),
    (11, "baseline oracles", experiments::baseline_oracles),
];

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for (n, name, _) in CRITERIA {
            println!("criterion-{n:02}-{}: test", name.replace(' ', "-"));
        }
        return ExitCode::SUCCESS;
    }
    let selected: Vec<u32> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let (mut run, mut passed) = (0, 0);
    for (n, name, check) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(Ok(o)) => o,
            Ok(Err(e)) => Outcome::new(false, format!("error: {e}")),
            Err(_) => Outcome::new(false, "panicked"),
        };
        run += 1;
        passed += usize::from(outcome.pass);
        println!(
            "criterion {n:>2} {} {name}: {} [{:.1}s]",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {passed}/{run} criteria passed");
    if passed == run {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
