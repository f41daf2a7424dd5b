//! Training subcommands: pre-training, fine-tuning and the baselines.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::ValueEnum;
use serde::Serialize;

use semidial::baselines::{pseudo_label_pipeline, PseudoLabelConfig, PseudoLabelSet, VaeHeads, VaeObjective};
use semidial::corpus::{write_jsonl, DaLabelVector};
use semidial::eval::{da_f1, EvalReport, F1Average};
use semidial::model::{Checkpoint, DialogModel, GenerationConfig, Vocab};
use semidial::objectives::Ablation;
use semidial::train::{
    heldout_stats, with_act_spans, Event, FinetuneObjective, MetricsLog, MetricsRecord, Objective, PretrainObjective,
    RunOptions, RunSummary, Sample, TrainData, Trainer,
};

use crate::config::RunConfig;
use crate::corpus::{prepare, CorpusDir};
use crate::evaluate::{evaluate, predict};
use crate::manifest::RunDir;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Gated consistency pre-training.
    Gated,
    /// Act and response losses without the consistency term.
    Multitask,
    Pseudo,
    Vae,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gated => "gated",
            Method::Multitask => "multitask",
            Method::Pseudo => "pseudo",
            Method::Vae => "vae",
        }
    }
}

pub struct TrainArgs {
    pub corpus: PathBuf,
    pub run_dir: PathBuf,
    pub labeled_fraction: Option<f64>,
}

#[derive(Serialize)]
struct RunEval {
    #[serde(flatten)]
    report: EvalReport,
    chance_f1: f64,
    heldout_kl: f64,
    collapsed: bool,
    steps: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pseudo_label_f1: Option<f64>,
}

fn io_err(e: anyhow::Error) -> semidial::Error {
    semidial::Error::Io(std::io::Error::other(e.to_string()))
}

fn load_corpus(args: &TrainArgs) -> Result<CorpusDir> {
    let mut corpus = CorpusDir::load(&args.corpus)?;
    if let Some(f) = args.labeled_fraction {
        corpus.restrict_labels(f)?;
    }
    Ok(corpus)
}

/// Runs `body` inside a fresh run directory, recording failure in the
/// manifest before returning the error.
fn with_run_dir<F>(
    args: &TrainArgs,
    command: &str,
    method: Option<Method>,
    config: &RunConfig,
    inputs: Vec<PathBuf>,
    body: F,
) -> Result<()>
where
    F: FnOnce(&mut RunDir) -> Result<()>,
{
    let mut dir = RunDir::create(&args.run_dir, command, method.map(Method::name), config, &inputs)?;
    match body(&mut dir) {
        Ok(()) => dir.complete(),
        Err(e) => {
            dir.fail(&format!("{e:#}"))?;
            Err(e)
        }
    }
}

fn save_checkpoint(dir: &mut RunDir, ck: &Checkpoint, rel: &str) -> Result<()> {
    ck.save(&dir.path(rel))?;
    dir.record_output(rel)
}

/// Self-check: the saved final checkpoint restores to the same parameters.
fn verify_checkpoint(dir: &RunDir, rel: &str, model: &DialogModel) -> Result<()> {
    let restored = Checkpoint::load(&dir.path(rel))?.restore_model()?;
    let same = restored.params().entries().len() == model.params().entries().len()
        && restored
            .params()
            .entries()
            .iter()
            .zip(model.params().entries())
            .all(|(a, b)| {
                a.name == b.name && a.tensor.data().iter().map(|v| v.to_bits()).eq(b.tensor.data().iter().map(|v| v.to_bits()))
            });
    if !same {
        bail!("checkpoint {rel} does not restore the trained parameters");
    }
    Ok(())
}

fn write_records(dir: &mut RunDir, rel: &str, records: &[MetricsRecord]) -> Result<()> {
    let mut log = MetricsLog::create(&dir.path(rel))?;
    for r in records {
        log.write(r)?;
    }
    dir.record_output(rel)
}

fn train<O: Objective>(
    dir: &mut RunDir,
    trainer: &mut Trainer<O>,
    data: &TrainData,
    heldout: &[Sample],
    vocab: &Vocab,
) -> Result<RunSummary> {
    let mut log = MetricsLog::create(&dir.path("metrics.csv"))?;
    dir.record_output("metrics.csv")?;
    let options = RunOptions {
        heldout: (!heldout.is_empty()).then_some(heldout),
        until_step: None,
    };
    let summary = trainer.run(data, options, |t, event| match event {
        Event::Record(r) => log.write(r),
        Event::Checkpoint => {
            let rel = format!("checkpoints/step-{:06}.json", t.step());
            save_checkpoint(dir, &t.checkpoint(Some(vocab)), &rel).map_err(io_err)
        }
    })?;
    save_checkpoint(dir, &trainer.checkpoint(Some(vocab)), "checkpoints/final.json")?;
    verify_checkpoint(dir, "checkpoints/final.json", trainer.model())?;
    Ok(summary)
}

#[allow(clippy::too_many_arguments)]
fn write_eval<O: Objective + ?Sized>(
    dir: &mut RunDir,
    model: &DialogModel,
    objective: &O,
    vocab: &Vocab,
    heldout: &[Sample],
    config: &RunConfig,
    summary: &RunSummary,
    steps: u64,
    pseudo_label_f1: Option<f64>,
) -> Result<()> {
    if heldout.is_empty() {
        log::info!("no held-out split; skipping evaluation");
        return Ok(());
    }
    let generation = GenerationConfig::from(&config.generation);
    let (predictions, references) = predict(model, objective, vocab, heldout, &generation)?;
    write_jsonl(&dir.path("predictions.jsonl"), &predictions)?;
    dir.record_output("predictions.jsonl")?;
    write_jsonl(&dir.path("references.jsonl"), &references)?;
    dir.record_output("references.jsonl")?;
    let report = evaluate(&predictions, &references, None, None, F1Average::Micro)?;
    let stats = heldout_stats(model, objective, heldout, config.seed, steps)?;
    let eval = RunEval {
        report,
        chance_f1: stats.chance_f1,
        heldout_kl: stats.kl,
        collapsed: summary.collapsed,
        steps,
        pseudo_label_f1,
    };
    std::fs::write(dir.path("eval.json"), serde_json::to_string_pretty(&eval)? + "\n")?;
    dir.record_output("eval.json")?;
    log::info!(
        "act F1 {:.4} (chance {:.4}), BLEU {:.2}",
        eval.report.da_f1.unwrap_or(f64::NAN),
        eval.chance_f1,
        eval.report.bleu
    );
    Ok(())
}

fn model_for(config: &RunConfig, vocab: &Vocab) -> Result<DialogModel> {
    let mut mc = config.model.clone();
    mc.vocab_size = vocab.len();
    Ok(DialogModel::new(mc, config.seed)?)
}

pub fn pretrain(config: &RunConfig, method: Method, ablation: Ablation, args: &TrainArgs) -> Result<()> {
    let ablation = match method {
        Method::Gated => ablation,
        Method::Multitask => Ablation { no_kl: true, ..ablation },
        other => bail!("pretrain does not run method {}; use the baseline subcommand", other.name()),
    };
    let corpus = load_corpus(args)?;
    let mut config = config.clone();
    config.train.ablation = ablation;
    with_run_dir(args, "pretrain", Some(method), &config, corpus.files.clone(), |dir| {
        let p = prepare(&corpus, None, config.max_vocab, &config.train);
        log::info!(
            "vocab {}, {} labeled and {} unlabeled samples, {} held out",
            p.vocab.len(),
            p.data.labeled.len(),
            p.data.unlabeled.len(),
            p.heldout.len()
        );
        let objective = PretrainObjective { ablation };
        let mut trainer = Trainer::new(model_for(&config, &p.vocab)?, objective, config.train.clone())?;
        let summary = train(dir, &mut trainer, &p.data, &p.heldout, &p.vocab)?;
        let steps = trainer.step();
        write_eval(dir, trainer.model(), &objective, &p.vocab, &p.heldout, &config, &summary, steps, None)
    })
}

pub fn finetune(config: &RunConfig, checkpoint: &Path, args: &TrainArgs) -> Result<()> {
    let corpus = load_corpus(args)?;
    let ck = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let vocab = ck.vocab.clone().ok_or_else(|| anyhow!("checkpoint {} has no vocabulary", checkpoint.display()))?;
    let mut inputs = corpus.files.clone();
    inputs.push(checkpoint.to_path_buf());
    let config = config.clone();
    with_run_dir(args, "finetune", None, &config, inputs, |dir| {
        let p = prepare(&corpus, Some(vocab), config.max_vocab, &config.train);
        let labeled = if config.alpha > 0.0 {
            with_act_spans(&p.data.labeled, &p.vocab, config.train.max_response_len)?
        } else {
            p.data.labeled.clone()
        };
        let data = TrainData {
            labeled,
            unlabeled: Vec::new(),
        };
        let objective = FinetuneObjective { alpha: config.alpha };
        let mut trainer = Trainer::new(ck.restore_model()?, objective, config.train.clone())?;
        let summary = train(dir, &mut trainer, &data, &p.heldout, &p.vocab)?;
        let steps = trainer.step();
        write_eval(dir, trainer.model(), &objective, &p.vocab, &p.heldout, &config, &summary, steps, None)
    })
}

/// Pseudo-label F1 against the hidden audit labels of taxonomy turns.
fn audit_f1(labels: &PseudoLabelSet, corpus: &CorpusDir) -> Result<Option<f64>> {
    let gold: std::collections::HashMap<(&str, usize), DaLabelVector> = corpus
        .audit
        .iter()
        .filter(|a| !a.noise)
        .map(|a| ((a.dialog_id.as_str(), a.turn), a.das))
        .collect();
    let (mut pred, mut want) = (Vec::new(), Vec::new());
    for l in &labels.labels {
        if let Some(g) = gold.get(&(l.dialog_id.as_str(), l.turn)) {
            pred.push(l.das);
            want.push(*g);
        }
    }
    if want.is_empty() {
        return Ok(None);
    }
    Ok(Some(da_f1(&pred, &want)?))
}

pub fn baseline(config: &RunConfig, method: Method, args: &TrainArgs) -> Result<()> {
    let corpus = load_corpus(args)?;
    let config = config.clone();
    with_run_dir(args, "baseline", Some(method), &config, corpus.files.clone(), |dir| {
        let p = prepare(&corpus, None, config.max_vocab, &config.train);
        let heldout = (!p.heldout.is_empty()).then_some(p.heldout.as_slice());
        match method {
            Method::Pseudo => {
                let pc = PseudoLabelConfig {
                    threshold: config.pseudo_threshold,
                    teacher: config.train.clone(),
                    student: config.train.clone(),
                };
                let mut mc = config.model.clone();
                mc.vocab_size = p.vocab.len();
                let out = pseudo_label_pipeline(&mc, config.seed, &p.data, heldout, &pc)?;
                write_records(dir, "teacher_metrics.csv", &out.teacher_run.records)?;
                write_records(dir, "metrics.csv", &out.student_run.records)?;
                save_checkpoint(dir, &Checkpoint::capture(&out.teacher, Some(&p.vocab), None), "checkpoints/teacher.json")?;
                save_checkpoint(dir, &Checkpoint::capture(&out.student, Some(&p.vocab), None), "checkpoints/final.json")?;
                verify_checkpoint(dir, "checkpoints/final.json", &out.student)?;
                write_jsonl(&dir.path("pseudo_labels.jsonl"), &out.labels.labels)?;
                dir.record_output("pseudo_labels.jsonl")?;
                let f1 = audit_f1(&out.labels, &corpus)?;
                if let Some(f) = f1 {
                    log::info!("pseudo-label audit F1 {f:.4}");
                }
                let steps = out.student_run.losses.len() as u64;
                let objective = PretrainObjective::default();
                write_eval(dir, &out.student, &objective, &p.vocab, &p.heldout, &config, &out.student_run, steps, f1)
            }
            Method::Vae => {
                let mut model = model_for(&config, &p.vocab)?;
                let heads = VaeHeads::attach(&mut model, config.seed)?;
                let mut trainer = Trainer::new(model, VaeObjective { heads }, config.train.clone())?;
                let summary = train(dir, &mut trainer, &p.data, &p.heldout, &p.vocab)?;
                let steps = trainer.step();
                write_eval(dir, trainer.model(), trainer.objective(), &p.vocab, &p.heldout, &config, &summary, steps, None)
            }
            other => bail!("{} is not a baseline; use the pretrain subcommand", other.name()),
        }
    })
}
