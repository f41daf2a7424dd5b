use std::fs;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semidial::autodiff::{grad_check, Tape, Tensor, TensorError, Var};
use semidial::baselines::{standard_normal, VaeHeads, VaeObjective, LATENT_DIM};
use semidial::corpus::{
    clean_record, clean_records, generate_synthetic_corpus, Cleaned, CleaningConfig, CleaningRule, DaLabelVector,
    DialogRecord, SynthConfig, UnifiedDa,
};
use semidial::eval::combined_score;
use semidial::model::{
    build_input, AttentionKind, Checkpoint, ContextTurn, DialogInput, DialogModel, DropoutCtx, Mode, ModelConfig, Role,
};
use semidial::objectives::{act_distributions, gate_from_entropy, gate_score, loss_da, loss_kl, loss_rg, loss_rs};
use semidial::train::{
    build_vocab, samples_from_records, MetricsLog, Objective, PretrainObjective, RunOptions, Sample, SampleCtx,
    TrainConfig, TrainData, Trainer,
};

use crate::{CheckResult, Outcome};

fn toy_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 16,
        num_layers: 2,
        hidden_dim: 8,
        num_heads: 2,
        ff_dim: 12,
        max_positions: 16,
        max_turns: 4,
        init_std: 0.3,
        dropout: 0.3,
        ..Default::default()
    }
}

fn toy_context() -> Vec<ContextTurn> {
    vec![
        ContextTurn { role: Role::User, turn: 0, tokens: vec![9, 10, 11] },
        ContextTurn { role: Role::System, turn: 1, tokens: vec![12] },
    ]
}

fn toy_sample(das: Option<DaLabelVector>) -> Sample {
    Sample {
        id: "toy#2".into(),
        context: toy_context(),
        response: vec![13, 14],
        das,
    }
}

fn frozen(pass: u64) -> DropoutCtx {
    DropoutCtx { rate: 0.3, seed: 17, step: 4, stream: 1, pass }
}

fn tensor_err(e: semidial::Error) -> TensorError {
    match e {
        semidial::Error::Tensor(t) => t,
        other => TensorError::InvalidArgument(other.to_string()),
    }
}

type LossFn = Box<dyn for<'t> Fn(&DialogModel, &[Var<'t>]) -> semidial::Result<Var<'t>>>;

fn trunk_losses() -> Vec<(&'static str, LossFn)> {
    let cfg = toy_config();
    let pos = build_input(&toy_context(), &[13, 14], &cfg).unwrap();
    let neg = build_input(&toy_context(), &[15, 9, 10], &cfg).unwrap();
    let labels = DaLabelVector::from_labels([UnifiedDa::Inform, UnifiedDa::Request]).as_targets();
    let mut out: Vec<(&'static str, LossFn)> = Vec::new();
    let (p, n) = (pos.clone(), neg.clone());
    out.push((
        "selection",
        Box::new(move |m, v| {
            let b = m.with_vars(v.to_vec())?;
            let ep = b.encode(&p, AttentionKind::Bidirectional, Mode::Train(frozen(3)))?;
            let en = b.encode(&n, AttentionKind::Bidirectional, Mode::Train(frozen(4)))?;
            Ok(loss_rs(b.rs_logit(ep.h_cls)?, b.rs_logit(en.h_cls)?)?)
        }),
    ));
    let p = pos.clone();
    out.push((
        "generation",
        Box::new(move |m, v| {
            let b = m.with_vars(v.to_vec())?;
            let enc = b.encode(&p, AttentionKind::Hybrid, Mode::Train(frozen(1)))?;
            Ok(loss_rg(b.generation_logits(&enc, &p)?, p.generation_targets())?)
        }),
    ));
    let p = pos.clone();
    out.push((
        "act",
        Box::new(move |m, v| {
            let b = m.with_vars(v.to_vec())?;
            let enc = b.encode(&p, AttentionKind::Hybrid, Mode::Train(frozen(1)))?;
            Ok(loss_da(act_distributions(b.da_logits(enc.h_cls)?, 1)?.p, &labels)?)
        }),
    ));
    let p = pos;
    out.push((
        "consistency",
        Box::new(move |m, v| {
            let b = m.with_vars(v.to_vec())?;
            let e1 = b.encode(&p, AttentionKind::Hybrid, Mode::Train(frozen(1)))?;
            let e2 = b.encode(&p.context_only(), AttentionKind::Hybrid, Mode::Train(frozen(2)))?;
            let q1 = act_distributions(b.da_logits(e1.h_cls)?, 1)?.q;
            let q2 = act_distributions(b.da_logits(e2.h_cls)?, 2)?.q;
            Ok(loss_kl(q1, q2)?)
        }),
    ));
    out
}

fn sample_ctx<'a>(sample: &'a Sample, negative: &'a [u32]) -> SampleCtx<'a> {
    SampleCtx {
        sample,
        negative,
        labeled: sample.das.is_some(),
        dropout: frozen(1),
    }
}

pub fn gradient_suite() -> CheckResult {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut failed = Vec::new();
    let mut checked = 0;
    let mut record = |name: String, passed: bool, err: f64| {
        checked += 1;
        worst = worst.max(err);
        if !passed {
            failed.push(format!("{name} ({err:.2e})"));
        }
    };

    let model = DialogModel::new(toy_config(), 21)?;
    let params: Vec<Tensor> = model.params().entries().iter().map(|e| e.tensor.clone()).collect();
    for (name, loss) in trunk_losses() {
        let r = grad_check(|_, v| loss(&model, v).map_err(tensor_err), &params, 1e-4, 1e-4)?;
        record(name.into(), r.passed, r.max_error);
    }

    let negative = [15u32, 9];
    let labels = Some(DaLabelVector::from_labels([UnifiedDa::Inform, UnifiedDa::Offer]));
    for das in [labels, None] {
        let sample = toy_sample(das);
        let objective = PretrainObjective::default();
        let r = grad_check(
            |_, v| {
                let b = model.with_vars(v.to_vec()).map_err(tensor_err)?;
                objective.sample_loss(&b, &sample_ctx(&sample, &negative)).map(|l| l.total).map_err(tensor_err)
            },
            &params,
            1e-4,
            1e-4,
        )?;
        record(format!("composed {}", if das.is_some() { "labeled" } else { "unlabeled" }), r.passed, r.max_error);
    }

    let mut vae_model = DialogModel::new(toy_config(), 31)?;
    let objective = VaeObjective { heads: VaeHeads::attach(&mut vae_model, 31)? };
    let vae_params: Vec<Tensor> = vae_model.params().entries().iter().map(|e| e.tensor.clone()).collect();
    let eps = standard_normal(1, 2, 3, LATENT_DIM);
    for das in [None, labels] {
        let sample = toy_sample(das);
        let r = grad_check(
            |_, v| {
                let b = vae_model.with_vars(v.to_vec()).map_err(tensor_err)?;
                objective.terms(&b, &sample_ctx(&sample, &negative), &eps).map(|t| t.0).map_err(tensor_err)
            },
            &vae_params,
            1e-4,
            1e-4,
        )?;
        record(format!("variational {}", if das.is_some() { "labeled" } else { "unlabeled" }), r.passed, r.max_error);
    }

    let secs = start.elapsed().as_secs_f64();
    let pass = failed.is_empty() && worst <= 1e-4 && secs < 60.0;
    Ok(Outcome::new(
        pass,
        format!(
            "{checked} losses, max relative error {worst:.2e} (<= 1e-4), {secs:.1}s (< 60s){}",
            if failed.is_empty() { String::new() } else { format!(", failing: {}", failed.join(", ")) }
        ),
    ))
}

pub fn gate_formula() -> CheckResult {
    let n = 20;
    let e_max = (n as f64).ln();
    let oracle = |e: f64| ((e_max - (e + e.ln())) / e_max).clamp(0.0, 1.0);
    let uniform = gate_score(&[1.0 / n as f64; 20]).g;
    let at_one = gate_from_entropy(1.0, n);
    let mut one_hot = [0.0; 20];
    one_hot[3] = 1.0;
    let limit = gate_score(&one_hot).g;
    let mut near = [1e-9 / 19.0; 20];
    near[3] = 1.0 - 1e-9;
    let near_limit = gate_score(&near).g;
    let grid: Vec<f64> = (1..=1000).map(|i| e_max * i as f64 / 1000.0).collect();
    let values: Vec<f64> = grid.iter().map(|&e| gate_from_entropy(e, n)).collect();
    let monotone = values.windows(2).all(|w| w[1] <= w[0]);
    let matches_oracle = grid.iter().zip(&values).all(|(&e, &g)| (g - oracle(e)).abs() < 1e-12);
    let pass = uniform == 0.0
        && (at_one - 0.666).abs() <= 1e-3
        && limit == 1.0
        && (near_limit - 1.0).abs() < 1e-6
        && monotone
        && matches_oracle;
    Ok(Outcome::new(
        pass,
        format!(
            "g(uniform)={uniform}, g(E=1)={at_one:.4} (0.666 +- 1e-3), g(one-hot)={limit}, g(near one-hot)={near_limit:.8}, \
             non-increasing on 1000-point grid: {monotone}, matches independent formula: {matches_oracle}"
        ),
    ))
}

fn random_dist(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0f64).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

fn kl_var(a: &[f64], b: &[f64]) -> semidial::Result<f64> {
    let tape = Tape::new();
    let q1 = tape.constant(Tensor::matrix(1, a.len(), a.to_vec())?);
    let q2 = tape.constant(Tensor::matrix(1, b.len(), b.to_vec())?);
    Ok(loss_kl(q1, q2)?.item())
}

pub fn kl_properties() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut asym: f64 = 0.0;
    let mut self_kl: f64 = 0.0;
    let mut min_distinct = f64::INFINITY;
    for _ in 0..500 {
        let a = random_dist(&mut rng, 20);
        let b = random_dist(&mut rng, 20);
        let (ab, ba) = (kl_var(&a, &b)?, kl_var(&b, &a)?);
        asym = asym.max((ab - ba).abs());
        self_kl = self_kl.max(kl_var(&a, &a)?.abs());
        min_distinct = min_distinct.min(ab);
    }

    let corpus = generate_synthetic_corpus(4, &SynthConfig { num_dialogs: 20, labeled_fraction: 0.5, ..Default::default() })?;
    let records: Vec<&DialogRecord> = corpus.labeled.iter().chain(&corpus.unlabeled).collect();
    let vocab = build_vocab(&records, 512);
    let all: Vec<DialogRecord> = records.into_iter().cloned().collect();
    let samples = samples_from_records(&all, &vocab, 64, 24);
    let cfg = ModelConfig {
        vocab_size: vocab.len(),
        num_layers: 2,
        hidden_dim: 16,
        num_heads: 2,
        ff_dim: 32,
        max_positions: 96,
        init_std: 0.2,
        dropout: 0.0,
        ..Default::default()
    };
    let model = DialogModel::new(cfg, 8)?;
    let objective = PretrainObjective::default();
    let mut max_zero_dropout: f64 = 0.0;
    for (i, s) in samples.iter().enumerate() {
        let tape = Tape::new();
        let b = model.bind_frozen(&tape)?;
        let ctx = SampleCtx {
            sample: s,
            negative: &samples[(i + 1) % samples.len()].response,
            labeled: s.das.is_some(),
            dropout: DropoutCtx { rate: 0.0, seed: 3, step: i as u64, stream: 0, pass: 1 },
        };
        let kl = objective.sample_loss(&b, &ctx)?.bundle.kl.ok_or("KL term missing")?;
        max_zero_dropout = max_zero_dropout.max(kl.abs());
    }
    let pass = asym <= 1e-12 && self_kl == 0.0 && min_distinct > 0.0 && max_zero_dropout == 0.0;
    Ok(Outcome::new(
        pass,
        format!(
            "max |KL(a,b)-KL(b,a)| {asym:.1e} (<= 1e-12), max KL(a,a) {self_kl}, min KL over distinct pairs {min_distinct:.2e} (> 0), \
             max per-sample KL at dropout 0 over {} samples: {max_zero_dropout}",
            samples.len()
        ),
    ))
}

pub fn score_formulas() -> CheckResult {
    // (metric1, metric2, BLEU, Comb) rows with published combined scores.
    let rows = [
        (94.40, 85.30, 20.50, 110.35),
        (85.30, 83.60, 23.00, 107.45),
        (84.40, 70.10, 15.01, 92.26),
        (86.59, 74.14, 15.06, 95.43),
        (85.50, 72.90, 16.54, 95.74),
        (84.88, 74.91, 17.89, 97.79),
        (86.90, 76.20, 20.58, 102.13),
        (95.40, 80.70, 17.00, 105.05),
        (93.10, 81.00, 18.44, 105.49),
        (85.00, 70.50, 15.23, 92.98),
        (86.65, 74.18, 15.90, 96.32),
        (95.70, 81.80, 16.50, 105.25),
        (93.50, 81.70, 18.32, 105.92),
        (95.30, 86.20, 20.01, 110.76),
        (84.50, 82.90, 19.30, 103.00),
        (84.50, 81.10, 21.90, 104.70),
        (85.80, 77.00, 22.80, 104.20),
        (84.80, 82.10, 21.50, 104.95),
        (81.90, 83.30, 22.00, 104.60),
    ];
    let worst = rows
        .iter()
        .map(|&(a, b, bleu, comb)| (combined_score(a, b, bleu) - comb).abs())
        .fold(0.0, f64::max);
    let headline = (combined_score(94.40, 85.30, 20.50), combined_score(85.30, 83.60, 23.00));
    let pass = worst <= 0.01 + 1e-9;
    Ok(Outcome::new(
        pass,
        format!(
            "{:.2} and {:.2} for the two headline rows, max deviation {worst:.4} over {} table rows (<= 0.01)",
            headline.0,
            headline.1,
            rows.len()
        ),
    ))
}

fn probe_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 40,
        num_layers: 2,
        hidden_dim: 16,
        num_heads: 4,
        ff_dim: 32,
        max_positions: 32,
        max_turns: 4,
        init_std: 0.3,
        dropout: 0.0,
        ..Default::default()
    }
}

fn probe_input(response: &[u32]) -> semidial::Result<DialogInput> {
    let ctx = vec![
        ContextTurn { role: Role::User, turn: 0, tokens: vec![10, 11, 12] },
        ContextTurn { role: Role::System, turn: 1, tokens: vec![13, 14] },
        ContextTurn { role: Role::User, turn: 2, tokens: vec![15] },
    ];
    Ok(build_input(&ctx, response, &probe_config())?)
}

pub fn mask_causality() -> CheckResult {
    let model = DialogModel::new(probe_config(), 4)?;
    let v = probe_config().vocab_size;
    let response = [20u32, 21, 22, 23, 24, 25];
    let base = probe_input(&response)?;
    let tape = Tape::new();
    let bound = model.bind_frozen(&tape)?;
    let logits = |input: &DialogInput| -> semidial::Result<Vec<f64>> {
        Ok(bound.forward(input, Mode::Eval)?.token_logits.to_vec())
    };
    let reference = logits(&base)?;
    let (mut leaks, mut probes, mut dead) = (0, 0, 0);
    for u in 0..response.len() {
        for alt in 4..v as u32 {
            if alt == response[u] {
                continue;
            }
            let mut changed = response;
            changed[u] = alt;
            let out = logits(&probe_input(&changed)?)?;
            probes += 1;
            // row r predicts response token r from the prefix before it
            if out[..(u + 1) * v] != reference[..(u + 1) * v] {
                leaks += 1;
            }
            if out[(u + 1) * v..(u + 2) * v] == reference[(u + 1) * v..(u + 2) * v] {
                dead += 1;
            }
        }
    }

    let hidden = |input: &DialogInput| -> semidial::Result<Tensor> {
        Ok((*bound.encode(input, AttentionKind::Hybrid, Mode::Eval)?.hidden.value()).clone())
    };
    let h0 = hidden(&base)?;
    let ctx_len = base.context_len;
    let mut blind_pairs = 0;
    let mut pairs = 0;
    for j in 1..ctx_len {
        let mut changed = base.clone();
        changed.token_ids[j] = 30;
        let h = hidden(&changed)?;
        for i in 0..ctx_len {
            if i == j {
                continue;
            }
            pairs += 1;
            if h.row(i) == h0.row(i) {
                blind_pairs += 1;
            }
        }
    }
    let pass = leaks == 0 && dead == 0 && blind_pairs == 0;
    Ok(Outcome::new(
        pass,
        format!(
            "{probes} future-token substitutions over a length-6 response: {leaks} changed an earlier logit, \
             {dead} left the next logit unchanged; {blind_pairs} of {pairs} context position pairs blind to each other"
        ),
    ))
}

fn determinism_fixture() -> semidial::Result<(TrainData, DialogModel, TrainConfig)> {
    let corpus = generate_synthetic_corpus(6, &SynthConfig { num_dialogs: 60, labeled_fraction: 0.3, ..Default::default() })?;
    let records: Vec<&DialogRecord> = corpus.labeled.iter().chain(&corpus.unlabeled).collect();
    let vocab = build_vocab(&records, 512);
    let data = TrainData {
        labeled: samples_from_records(&corpus.labeled, &vocab, 64, 24),
        unlabeled: samples_from_records(&corpus.unlabeled, &vocab, 64, 24),
    };
    let cfg = ModelConfig {
        vocab_size: vocab.len(),
        num_layers: 1,
        hidden_dim: 16,
        num_heads: 2,
        ff_dim: 32,
        max_positions: 80,
        ..Default::default()
    };
    let train = TrainConfig {
        seed: 12,
        epochs: 2,
        batch_size: 8,
        monitor_every: 4,
        ..Default::default()
    };
    Ok((data, DialogModel::new(cfg, 12)?, train))
}

pub fn determinism() -> CheckResult {
    let dir = tempfile::tempdir()?;
    let (data, model, cfg) = determinism_fixture()?;
    let mut csvs = Vec::new();
    for run in 0..2 {
        let path = dir.path().join(format!("metrics-{run}.csv"));
        let mut log = MetricsLog::create(&path)?;
        let mut t = Trainer::new(model.clone(), PretrainObjective::default(), cfg.clone())?;
        t.run(&data, RunOptions::default(), |_, e| match e {
            semidial::train::Event::Record(r) => log.write(r),
            _ => Ok(()),
        })?;
        drop(log);
        csvs.push(fs::read(&path)?);
    }
    let identical = csvs[0] == csvs[1] && !csvs[0].is_empty();

    let k = 7;
    let mut full = Trainer::new(model.clone(), PretrainObjective::default(), cfg.clone())?;
    let straight = full.run(&data, RunOptions { heldout: None, until_step: Some(k + 10) }, |_, _| Ok(()))?;
    let mut first = Trainer::new(model, PretrainObjective::default(), cfg.clone())?;
    first.run(&data, RunOptions { heldout: None, until_step: Some(k) }, |_, _| Ok(()))?;
    let path = dir.path().join("resume.json");
    first.checkpoint(None).save(&path)?;
    let mut resumed = Trainer::resume(&Checkpoint::load(&path)?, PretrainObjective::default(), cfg)?;
    let tail = resumed.run(&data, RunOptions { heldout: None, until_step: Some(k + 10) }, |_, _| Ok(()))?;
    let a = straight.losses[(k + 9) as usize];
    let b = *tail.losses.last().ok_or("resumed run took no steps")?;
    let pass = identical && a.to_bits() == b.to_bits() && tail.losses.len() == 10;
    Ok(Outcome::new(
        pass,
        format!(
            "metrics CSV ({} bytes) identical across two runs: {identical}; loss at step {} uninterrupted {a:.12} vs resumed from step {k} {b:.12}",
            csvs[0].len(),
            k + 10
        ),
    ))
}

pub fn corpus_pipeline() -> CheckResult {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/cleaning.jsonl");
    let records: Vec<DialogRecord> = fs::read_to_string(path)?
        .lines()
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()?;
    let cfg = CleaningConfig::default();
    let rules = [
        ("url", Some(CleaningRule::Url)),
        ("repeat", Some(CleaningRule::Repetition)),
        ("nonenglish", Some(CleaningRule::NonEnglish)),
        ("markup", Some(CleaningRule::Markup)),
        ("offensive", Some(CleaningRule::Offensive)),
        ("symbol", None),
    ];
    let mut wrong = Vec::new();
    for (prefix, rule) in rules {
        let find = |suffix: &str| records.iter().find(|r| r.dialog_id == format!("{prefix}-{suffix}"));
        let (pos, neg) = (find("pos").ok_or("fixture row missing")?, find("neg").ok_or("fixture row missing")?);
        let pos_ok = match (rule, clean_record(pos, &cfg)) {
            (Some(r), Cleaned::Dropped(got)) => r == got,
            (None, Cleaned::Kept { replaced, .. }) => replaced,
            _ => false,
        };
        let neg_ok = matches!(clean_record(neg, &cfg), Cleaned::Kept { replaced: false, .. });
        if !pos_ok || !neg_ok {
            wrong.push(prefix);
        }
    }
    let (once, r1) = clean_records(&records, &cfg);
    let (twice, r2) = clean_records(&once, &cfg);
    let idempotent = once == twice && r2.dropped == 0 && r2.non_unicode_replaced == 0;
    let pass = wrong.is_empty() && idempotent;
    Ok(Outcome::new(
        pass,
        format!(
            "6 rules x (positive, negative) on {} fixture dialogs, mismatches: {wrong:?}; kept {} dropped {} replaced {}; second pass unchanged: {idempotent}",
            records.len(),
            r1.kept,
            r1.dropped,
            r1.non_unicode_replaced
        ),
    ))
}
