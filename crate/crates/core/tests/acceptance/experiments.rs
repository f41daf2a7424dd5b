use std::collections::{HashMap, HashSet};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use semidial::baselines::{gaussian_kl_value, pseudo_label_pipeline, PseudoLabelConfig};
use semidial::corpus::{generate_synthetic_corpus, DaLabelVector, SynthConfig, SyntheticCorpus};
use semidial::eval::da_f1;
use semidial::model::{DialogModel, ModelConfig};
use semidial::objectives::Ablation;
use semidial::train::{
    build_vocab, heldout_stats, mean_gate, samples_from_records, HeldoutStats, PretrainObjective, RunOptions, RunSummary,
    Sample, TrainConfig, TrainData, Trainer,
};

use crate::{CheckResult, Outcome};

struct Setup {
    corpus: SyntheticCorpus,
    data: TrainData,
    heldout: Vec<Sample>,
    vocab_size: usize,
}

fn setup(seed: u64, dialogs: usize, noise_fraction: f64) -> semidial::Result<Setup> {
    let corpus = generate_synthetic_corpus(
        seed,
        &SynthConfig { num_dialogs: dialogs, labeled_fraction: 0.1, noise_fraction, ..Default::default() },
    )?;
    let held = generate_synthetic_corpus(
        seed + 1000,
        &SynthConfig { num_dialogs: 200, labeled_fraction: 1.0, id_prefix: "held".into(), ..Default::default() },
    )?;
    let records: Vec<_> = corpus.labeled.iter().chain(&corpus.unlabeled).collect();
    let vocab = build_vocab(&records, 512);
    let cut = |r: &[_]| samples_from_records(r, &vocab, 64, 24);
    Ok(Setup {
        data: TrainData { labeled: cut(&corpus.labeled), unlabeled: cut(&corpus.unlabeled) },
        heldout: cut(&held.labeled),
        vocab_size: vocab.len(),
        corpus,
    })
}

fn desk_model(vocab_size: usize) -> ModelConfig {
    ModelConfig { vocab_size, init_std: 0.1, dropout: 0.3, ..Default::default() }
}

fn desk_train(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        seed,
        epochs,
        learning_rate: 3e-3,
        max_grad_norm: Some(1.0),
        monitor_every: 50,
        balanced_batches: true,
        ..Default::default()
    }
}

struct Trained {
    model: DialogModel,
    run: RunSummary,
    stats: HeldoutStats,
}

fn train(s: &Setup, ablation: Ablation, seed: u64, epochs: usize) -> semidial::Result<Trained> {
    let objective = PretrainObjective { ablation };
    let model = DialogModel::new(desk_model(s.vocab_size), seed)?;
    let mut t = Trainer::new(model, objective, desk_train(seed, epochs))?;
    let run = t.run(&s.data, RunOptions { heldout: Some(&s.heldout), until_step: None }, |_, _| Ok(()))?;
    let stats = heldout_stats(t.model(), &objective, &s.heldout, seed, t.step())?;
    Ok(Trained { model: t.model().clone(), run, stats })
}

pub fn collapse_reproduction() -> CheckResult {
    let start = Instant::now();
    let s = setup(1, 2000, 0.0)?;
    let full = train(&s, Ablation::default(), 1, 3)?;
    let kl_only = train(&s, Ablation { no_da: true, ..Default::default() }, 1, 3)?;
    let secs = start.elapsed().as_secs_f64();
    let near_chance = kl_only.stats.da_f1 < 1.5 * kl_only.stats.chance_f1;
    let pass = kl_only.stats.kl < 1e-4
        && near_chance
        && full.stats.da_f1 >= 0.85
        && full.stats.da_f1 > kl_only.stats.da_f1
        && secs < 900.0;
    Ok(Outcome::new(
        pass,
        format!(
            "without act loss: held-out KL {:.2e} (< 1e-4), F1 {:.3} vs chance {:.3} (< 1.5x chance), detector flagged: {}; \
             full: F1 {:.3} (>= 0.85), KL {:.2e}; {secs:.0}s (< 900s)",
            kl_only.stats.kl, kl_only.stats.da_f1, kl_only.stats.chance_f1, kl_only.run.collapsed, full.stats.da_f1, full.stats.kl
        ),
    ))
}

pub fn gate_selectivity() -> CheckResult {
    let s = setup(1, 2000, 0.3)?;
    let full = train(&s, Ablation::default(), 1, 3)?;
    let noise: HashSet<&str> = s.corpus.audit.iter().filter(|a| a.noise).map(|a| a.dialog_id.as_str()).collect();
    let (noisy, conforming): (Vec<Sample>, Vec<Sample>) =
        s.data.unlabeled.iter().cloned().partition(|x| noise.contains(x.dialog_id()));
    let g_conf = mean_gate(&full.model, &conforming)?;
    let g_noise = mean_gate(&full.model, &noisy)?;
    let gap = g_conf - g_noise;
    Ok(Outcome::new(
        gap >= 0.2,
        format!(
            "mean gate {g_conf:.3} on {} conforming vs {g_noise:.3} on {} noise turns, gap {gap:.3} (>= 0.2); held-out F1 {:.3}",
            conforming.len(),
            noisy.len(),
            full.stats.da_f1
        ),
    ))
}

pub fn ablation_ordering() -> CheckResult {
    let seeds = [1u64, 2, 3, 4, 5];
    let variants = [
        ("full", Ablation::default()),
        ("multitask", Ablation { no_kl: true, ..Default::default() }),
        ("no-act", Ablation { no_da: true, ..Default::default() }),
    ];
    let mut f1 = vec![Vec::new(); variants.len()];
    for &seed in &seeds {
        let s = setup(seed, 600, 0.0)?;
        for (k, (_, ablation)) in variants.iter().enumerate() {
            f1[k].push(train(&s, *ablation, seed, 6)?.stats.da_f1);
        }
    }
    let mean_diff = |a: usize, b: usize| f1[a].iter().zip(&f1[b]).map(|(x, y)| x - y).sum::<f64>() / seeds.len() as f64;
    let (d1, d2) = (mean_diff(0, 1), mean_diff(1, 2));
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    Ok(Outcome::new(
        d1 >= 0.0 && d2 >= 0.0,
        format!(
            "held-out F1 over seeds 1-5: {} [{}], {} [{}], {} [{}]; mean(full - multitask) {d1:+.4} (>= 0), \
             mean(multitask - no-act) {d2:+.4} (>= 0)",
            variants[0].0,
            fmt(&f1[0]),
            variants[1].0,
            fmt(&f1[1]),
            variants[2].0,
            fmt(&f1[2])
        ),
    ))
}

fn log_normal_pdf(x: f64, mean: f64, logvar: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI).ln() + logvar + (x - mean).powi(2) / logvar.exp())
}

fn monte_carlo_kl(mq: &[f64], lq: &[f64], mp: &[f64], lp: &[f64], n: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dists: Vec<Normal<f64>> = mq.iter().zip(lq).map(|(&m, &l)| Normal::new(m, (0.5 * l).exp()).unwrap()).collect();
    let draws: Vec<f64> = (0..n)
        .map(|_| {
            dists
                .iter()
                .enumerate()
                .map(|(i, d)| {
                    let z = d.sample(&mut rng);
                    log_normal_pdf(z, mq[i], lq[i]) - log_normal_pdf(z, mp[i], lp[i])
                })
                .sum()
        })
        .collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn pseudo_label_audit() -> semidial::Result<(f64, usize, usize)> {
    let s = setup(3, 2000, 0.0)?;
    let config = PseudoLabelConfig {
        threshold: 0.5,
        teacher: desk_train(3, 30),
        student: desk_train(3, 1),
    };
    let out = pseudo_label_pipeline(&desk_model(s.vocab_size), 3, &s.data, None, &config)?;
    let gold: HashMap<(&str, usize), DaLabelVector> =
        s.corpus.audit.iter().filter(|a| !a.noise).map(|a| ((a.dialog_id.as_str(), a.turn), a.das)).collect();
    let (mut pred, mut want) = (Vec::new(), Vec::new());
    for l in &out.labels.labels {
        if let Some(g) = gold.get(&(l.dialog_id.as_str(), l.turn)) {
            pred.push(l.das);
            want.push(*g);
        }
    }
    Ok((da_f1(&pred, &want)?, pred.len(), gold.len()))
}

pub fn baseline_oracles() -> CheckResult {
    let cases: [[Vec<f64>; 4]; 3] = [
        [vec![0.3, -1.2], vec![0.1, -0.4], vec![0.0, 0.0], vec![0.0, 0.0]],
        [vec![1.5, 0.2, -0.7], vec![-1.0, 0.5, 0.0], vec![0.4, -0.3, 0.2], vec![0.3, -0.2, 0.8]],
        [vec![0.0; 4], vec![-2.0, 1.0, 0.5, -0.5], vec![0.5, 0.5, -0.5, 1.0], vec![0.0; 4]],
    ];
    let mut worst_z: f64 = 0.0;
    let mut parts = Vec::new();
    for (i, [mq, lq, mp, lp]) in cases.iter().enumerate() {
        let closed = gaussian_kl_value(mq, lq, mp, lp);
        let (mc, se) = monte_carlo_kl(mq, lq, mp, lp, 10_000, 40 + i as u64);
        let z = (closed - mc).abs() / se;
        worst_z = worst_z.max(z);
        parts.push(format!("{closed:.4} vs {mc:.4} +- {se:.4}"));
    }
    let (f1, audited, total) = pseudo_label_audit()?;
    Ok(Outcome::new(
        worst_z <= 3.0 && f1 >= 0.9,
        format!(
            "Gaussian KL closed form vs 10k-sample estimate: {}; max deviation {worst_z:.2} SE (<= 3); \
             pseudo-label audit F1 {f1:.3} on {audited} of {total} conforming turns (>= 0.9)",
            parts.join(", ")
        ),
    ))
}
