use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spikescore::corpus::{validate_records, RecordSchema};
use spikescore::evaluation::PlotSelector;
use spikescore::pipeline::{self, BackboneKind, BackendKind, Manifest, Run, RunConfig};
use spikescore::{Error, Result};

const EXIT_SYSTEMIC: u8 = 1;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(name = "spikescore", version, about = "Multi-turn hallucination detection by trajectory curvature")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replace every seed in the configuration.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,
    /// Turns per dialogue, counting the initial answer.
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true, value_enum)]
    backbone: Option<BackboneKind>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled corpus with features.
    Simulate,
    /// Run multi-turn continuation dialogues.
    Induce {
        /// Restrict to these domains.
        #[arg(long = "domain")]
        domains: Vec<String>,
    },
    /// Score every turn with the configured backbone.
    Score {
        /// Trained probe for the probe backbone (default: <out>/probe.json).
        #[arg(long)]
        probe: Option<PathBuf>,
    },
    /// Compute SpikeScore, peak turn and CV per item.
    Spike,
    /// Train a probe on one domain's initial-answer features.
    TrainProbe {
        #[arg(long)]
        domain: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Calibrate the decision threshold on one domain's factual items.
    Calibrate {
        #[arg(long)]
        domain: String,
        #[arg(long)]
        target_fpr: Option<f64>,
    },
    /// Apply a calibrated threshold to every item.
    Detect {
        #[arg(long)]
        threshold: Option<PathBuf>,
    },
    /// Leave-one-out cross-domain evaluation.
    Evaluate,
    /// AUROC as a function of the number of turns.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        k_values: Option<Vec<usize>>,
    },
    /// Monte Carlo check of the separability bound on a parameter grid.
    TheoremCheck {
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
    /// Build an exact retrieval index from a JSONL corpus.
    RagBuild {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Retrieve contexts and assemble prompts.
    RagQuery {
        #[arg(long = "question")]
        questions: Vec<String>,
        /// Rewrite the questions of this QA file ...
        #[arg(long, requires = "qa_out")]
        qa_in: Option<PathBuf>,
        /// ... into this file.
        #[arg(long, requires = "qa_in")]
        qa_out: Option<PathBuf>,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Write tab-separated plot data from the evaluation report.
    ExportPlots {
        /// trajectories, spike_histograms, sweep or stats.
        #[arg(long = "what", required = true)]
        what: Vec<String>,
        #[arg(long)]
        item: Option<String>,
    },
    /// Check a record file against a schema.
    Validate {
        path: PathBuf,
        /// qa, transcript, feature, score or label.
        #[arg(long)]
        schema: String,
    },
}

fn load_run(cli: &Cli) -> Result<Run> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &cli.out {
        config.out_dir = o.clone();
    }
    if let Some(s) = cli.seed_override {
        config.override_seeds(s);
    }
    if let Some(b) = cli.backend {
        config.backend = b;
    }
    if let Some(k) = cli.k {
        config.k = k;
    }
    if let Some(b) = cli.backbone {
        config.backbone = b;
    }
    Run::new(config)
}

fn report(m: &Manifest) -> u8 {
    for e in &m.item_errors {
        eprintln!("item[{}] {}: {}", e.class, e.item_id, e.detail);
    }
    if m.is_partial() {
        eprintln!("{}: {} item(s) failed; see manifests/{}.json", m.stage, m.item_errors.len(), m.stage);
        EXIT_PARTIAL
    } else {
        0
    }
}

fn run(cli: Cli) -> Result<u8> {
    if let Command::Validate { path, schema } = &cli.command {
        let schema: RecordSchema = schema.parse()?;
        let r = validate_records(path, schema)?;
        for i in &r.issues {
            println!("{}:{}: {}", path.display(), i.line, i.reason);
        }
        return Ok(if r.is_valid() { 0 } else { EXIT_PARTIAL });
    }
    let run = load_run(&cli)?;
    let m = match &cli.command {
        Command::Simulate => pipeline::simulate(&run)?,
        Command::Induce { domains } => pipeline::induce(&run, domains)?,
        Command::Score { probe } => pipeline::score(&run, probe.as_deref())?,
        Command::Spike => pipeline::spike(&run)?,
        Command::TrainProbe { domain, output } => pipeline::train_probe_stage(&run, domain, output.as_deref())?,
        Command::Calibrate { domain, target_fpr } => pipeline::calibrate(&run, domain, *target_fpr)?,
        Command::Detect { threshold } => pipeline::detect(&run, threshold.as_deref())?,
        Command::Evaluate => {
            let (m, r) = pipeline::evaluate(&run)?;
            for t in &r.train_domains {
                println!(
                    "{}\tmean_heldout_auroc={:.4}\tmixture_auroc={:.4}\tobservations={}",
                    t.train_domain,
                    t.mean_heldout_auroc,
                    t.mixture_auroc,
                    t.separability.as_ref().is_some_and(|s| s.checks.all())
                );
            }
            m
        }
        Command::Sweep { k_values } => {
            let (m, rows) = pipeline::sweep(&run, k_values.as_deref())?;
            for r in rows {
                println!("{}\t{:.4}", r.k, r.auroc);
            }
            m
        }
        Command::TheoremCheck { samples } => {
            let (m, s) = pipeline::theorem_check(&run, *samples)?;
            println!("{}/{} configurations satisfy the bound", s.n_holds, s.n_configs);
            m
        }
        Command::RagBuild { corpus } => pipeline::rag_build(&run, corpus)?,
        Command::RagQuery { questions, qa_in, qa_out, top_k } => {
            let qa = qa_in.as_deref().zip(qa_out.as_deref());
            let (m, results) = pipeline::rag_query(&run, questions, qa, *top_k)?;
            for r in results.iter().take(questions.len()) {
                for h in &r.hits {
                    println!("{}\t{}\t{:.6}", r.question, h.doc_id, h.score);
                }
            }
            m
        }
        Command::ExportPlots { what, item } => {
            let sel = what.iter().map(|w| w.parse()).collect::<Result<Vec<PlotSelector>>>()?;
            pipeline::export_plots(&run, &sel, item.as_deref())?
        }
        Command::Validate { .. } => unreachable!("handled above"),
    };
    Ok(report(&m))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error[{}]: {}", e.class(), one_line(&e));
            ExitCode::from(EXIT_SYSTEMIC)
        }
    }
}

fn one_line(e: &Error) -> String {
    e.to_string().replace('\n', " ")
}
