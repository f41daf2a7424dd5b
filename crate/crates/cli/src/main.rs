mod config;
mod corpus;
mod evaluate;
mod manifest;
mod plot;
mod run;

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use semidial::corpus::{clean_corpus, generate_synthetic_corpus, load_corpus, write_jsonl, CleaningConfig, SynthConfig};
use semidial::eval::F1Average;
use semidial::objectives::Ablation;
use semidial::train::MetricsLog;

use config::RunConfig;
use run::{Method, TrainArgs};

#[derive(Parser)]
#[command(name = "semidial", version, about = "Semi-supervised dialog pre-training with gated consistency regularization")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunTarget {
    /// Corpus directory with labeled.jsonl and optionally unlabeled.jsonl,
    /// heldout.jsonl and audit.jsonl.
    #[arg(long)]
    corpus: PathBuf,
    /// Output directory; must not already hold a run.
    #[arg(long)]
    run_dir: PathBuf,
    /// Keep act labels on this share of all dialogs; the remaining labeled
    /// dialogs join the unlabeled pool.
    #[arg(long)]
    labeled_fraction: Option<f64>,
}

impl RunTarget {
    fn args(&self) -> TrainArgs {
        TrainArgs {
            corpus: self.corpus.clone(),
            run_dir: self.run_dir.clone(),
            labeled_fraction: self.labeled_fraction,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus directory with hidden audit labels.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        num_dialogs: Option<usize>,
        #[arg(long)]
        labeled_fraction: Option<f64>,
        #[arg(long)]
        noise_fraction: Option<f64>,
        #[arg(long)]
        heldout_dialogs: Option<usize>,
    },
    /// Apply the utterance filters to a JSONL corpus.
    Clean {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Check a JSONL corpus against the record schema.
    Validate {
        #[arg(long)]
        corpus: PathBuf,
        /// Require act labels on every system turn.
        #[arg(long)]
        labeled: bool,
    },
    /// Semi-supervised pre-training.
    Pretrain {
        #[command(flatten)]
        target: RunTarget,
        #[arg(long, value_enum, default_value = "gated")]
        method: Method,
        /// Drop the consistency term.
        #[arg(long)]
        no_kl: bool,
        /// Drop the supervised act term.
        #[arg(long)]
        no_da: bool,
        /// Fix the gate at 1.
        #[arg(long)]
        no_gate: bool,
    },
    /// Fine-tune a checkpoint on the labeled split.
    Finetune {
        #[command(flatten)]
        target: RunTarget,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Act loss weight; 0 trains response generation only.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Pseudo-labeling or variational baseline.
    Baseline {
        #[command(flatten)]
        target: RunTarget,
        #[arg(long, value_enum)]
        method: Method,
    },
    /// Score a predictions file against references.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        references: PathBuf,
        /// Inform or Match, from an external evaluator.
        #[arg(long)]
        metric1: Option<f64>,
        /// Success or SuccF1, from an external evaluator.
        #[arg(long)]
        metric2: Option<f64>,
        /// Macro-average act F1 over labels instead of micro.
        #[arg(long)]
        macro_f1: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot act F1 and KL curves from a metrics CSV.
    PlotCurves {
        #[arg(long)]
        metrics: PathBuf,
        /// SVG output; without it a text plot goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also print the text plot when writing SVG.
        #[arg(long)]
        ascii: bool,
    },
}

fn synth(
    config: &RunConfig,
    out: &PathBuf,
    num_dialogs: Option<usize>,
    labeled_fraction: Option<f64>,
    noise_fraction: Option<f64>,
    heldout_dialogs: Option<usize>,
) -> Result<()> {
    let mut sc = config.synth.clone();
    sc.num_dialogs = num_dialogs.unwrap_or(sc.num_dialogs);
    sc.labeled_fraction = labeled_fraction.unwrap_or(sc.labeled_fraction);
    sc.noise_fraction = noise_fraction.unwrap_or(sc.noise_fraction);
    let corpus = generate_synthetic_corpus(config.seed, &sc)?;
    let held = SynthConfig {
        num_dialogs: heldout_dialogs.unwrap_or(config.heldout_dialogs),
        labeled_fraction: 1.0,
        noise_fraction: 0.0,
        id_prefix: format!("{}-held", sc.id_prefix),
        ..sc.clone()
    };
    let heldout = generate_synthetic_corpus(config.seed ^ 0x4e1d_0u64, &held)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_jsonl(&out.join(corpus::LABELED), &corpus.labeled)?;
    write_jsonl(&out.join(corpus::UNLABELED), &corpus.unlabeled)?;
    write_jsonl(&out.join(corpus::HELDOUT), &heldout.labeled)?;
    write_jsonl(&out.join(corpus::AUDIT), &corpus.audit)?;
    println!(
        "{}",
        serde_json::json!({
            "labeled": corpus.labeled.len(),
            "unlabeled": corpus.unlabeled.len(),
            "heldout": heldout.labeled.len(),
            "audit_turns": corpus.audit.len(),
        })
    );
    Ok(())
}

fn clean(input: &PathBuf, output: &PathBuf) -> Result<()> {
    let reader = BufReader::new(File::open(input).with_context(|| format!("opening {}", input.display()))?);
    let (kept, report) = clean_corpus(reader, &CleaningConfig::default())?;
    write_jsonl(output, &kept)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn validate(corpus: &PathBuf, labeled: bool) -> Result<()> {
    let (_, report) = load_corpus(corpus, labeled)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if !report.is_clean() {
        bail!("{} has structural problems", corpus.display());
    }
    Ok(())
}

fn main_inner(cli: Cli) -> Result<()> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Command::Finetune { alpha: Some(a), .. } = &cli.command {
        config.alpha = *a;
    }
    config.validate()?;
    match &cli.command {
        Command::Synth {
            out,
            num_dialogs,
            labeled_fraction,
            noise_fraction,
            heldout_dialogs,
        } => synth(&config, out, *num_dialogs, *labeled_fraction, *noise_fraction, *heldout_dialogs),
        Command::Clean { input, output } => clean(input, output),
        Command::Validate { corpus, labeled } => validate(corpus, *labeled),
        Command::Pretrain {
            target,
            method,
            no_kl,
            no_da,
            no_gate,
        } => {
            let ablation = Ablation {
                no_kl: *no_kl || config.train.ablation.no_kl,
                no_da: *no_da || config.train.ablation.no_da,
                no_gate: *no_gate || config.train.ablation.no_gate,
            };
            run::pretrain(&config, *method, ablation, &target.args())
        }
        Command::Finetune { target, checkpoint, .. } => run::finetune(&config, checkpoint, &target.args()),
        Command::Baseline { target, method } => run::baseline(&config, *method, &target.args()),
        Command::Eval {
            predictions,
            references,
            metric1,
            metric2,
            macro_f1,
            out,
        } => {
            let average = if *macro_f1 { F1Average::Macro } else { F1Average::Micro };
            let report = evaluate::evaluate_files(predictions, references, *metric1, *metric2, average)?;
            let text = serde_json::to_string_pretty(&report)?;
            if let Some(out) = out {
                std::fs::write(out, text.clone() + "\n")?;
            }
            println!("{text}");
            Ok(())
        }
        Command::PlotCurves { metrics, out, ascii } => {
            let records = MetricsLog::read(metrics).with_context(|| format!("reading {}", metrics.display()))?;
            let curves = plot::curves(&records)?;
            if let Some(out) = out {
                std::fs::write(out, plot::render_svg(&curves))?;
            }
            if out.is_none() || *ascii {
                print!("{}", plot::render_ascii(&curves));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
