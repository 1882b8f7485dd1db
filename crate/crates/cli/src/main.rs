use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use nck_core::experiment::{self, AblationReport, Command, DataSource, EvalReport, RunConfig, Summary};
use nck_core::io::run_dir::Metrics;
use nck_core::AblationSpec;

/// Graph-convolutional label-noise cleaning for weakly supervised anomaly detection.
#[derive(Parser, Debug)]
#[command(name = "nck", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    #[command(flatten)]
    shared: Shared,
}

#[derive(Args, Debug)]
struct Shared {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every random stream of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Number of alternation steps.
    #[arg(long, global = true)]
    steps: Option<usize>,

    /// Fraction of lowest-variance snippets trusted by the cleaner.
    #[arg(long, global = true)]
    confidence_fraction: Option<f64>,

    /// Discount of the running average of cleaner predictions.
    #[arg(long, global = true)]
    ema_alpha: Option<f64>,

    /// Ablation such as `branch=temporal,graph=constant:0.5`; repeatable.
    #[arg(long = "ablate", global = true, value_name = "SPEC")]
    ablations: Vec<String>,

    /// Average the feature-similarity graph with its transpose.
    #[arg(long, global = true)]
    symmetrize_similarity: bool,

    /// Retrain the classifier on thresholded cleaned labels.
    #[arg(long, global = true)]
    hard_targets: bool,

    /// Directory of training feature files.
    #[arg(long, global = true)]
    train_dir: Option<PathBuf>,

    /// Directory of evaluation feature files with ground truth.
    #[arg(long, global = true)]
    eval_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write a synthetic train/eval split as feature files.
    Generate,
    /// Alternate classifier training and label cleaning.
    Run,
    /// Score a saved classifier on the evaluation set.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare cleaner variants over several seeds.
    Ablate {
        /// Graph for the enabled branches: `native` or `constant:<v>`.
        #[arg(long)]
        graph: Option<String>,
        /// `both`, `feature` or `temporal`.
        #[arg(long)]
        branch: Option<String>,
        /// Seeds per variant, counting up from `--seed`.
        #[arg(long)]
        seeds: Option<u64>,
    },
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let s = &cli.shared;
    let mut cfg = match &s.config {
        Some(path) => RunConfig::from_json_file(path).with_context(|| format!("reading {}", path.display()))?,
        None => RunConfig::default(),
    };
    cfg.command = match cli.command {
        Cmd::Generate => Command::Generate,
        Cmd::Run => Command::Run,
        Cmd::Eval { .. } => Command::Eval,
        Cmd::Ablate { .. } => Command::Ablate,
    };
    if let Some(seed) = s.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &s.out {
        cfg.out_dir = Some(out.clone());
    }
    let alt = &mut cfg.alternation;
    if let Some(n) = s.steps {
        alt.n_steps = n;
    }
    if let Some(f) = s.confidence_fraction {
        alt.confidence_fraction = f;
    }
    if let Some(a) = s.ema_alpha {
        alt.ema_alpha = a;
    }
    alt.symmetrize_similarity |= s.symmetrize_similarity;
    alt.classifier.hard_targets |= s.hard_targets;

    match (&s.train_dir, &s.eval_dir) {
        (_, Some(eval_dir)) => {
            cfg.data = DataSource::Files {
                train_dir: s.train_dir.clone(),
                eval_dir: eval_dir.clone(),
            }
        }
        (Some(_), None) => bail!("--train-dir needs --eval-dir"),
        (None, None) => {}
    }

    let mut specs = s
        .ablations
        .iter()
        .map(|a| experiment::parse_ablation(a).with_context(|| format!("--ablate {a:?}")))
        .collect::<Result<Vec<AblationSpec>>>()?;

    match &cli.command {
        Cmd::Eval { checkpoint } => cfg.checkpoint = Some(checkpoint.clone()),
        Cmd::Ablate { graph, branch, seeds } => {
            if graph.is_some() || branch.is_some() {
                let mut terms = Vec::new();
                if let Some(b) = branch {
                    terms.push(format!("branch={b}"));
                }
                if let Some(g) = graph {
                    terms.push(format!("graph={g}"));
                }
                specs.push(experiment::parse_ablation(&terms.join(","))?);
            }
            if let Some(k) = seeds {
                cfg.ablation_seeds = *k;
            }
            if !specs.is_empty() {
                cfg.ablations = specs;
            }
            return Ok(cfg);
        }
        _ => {}
    }
    match specs.as_slice() {
        [] => {}
        [spec] => cfg.alternation = spec.apply(&cfg.alternation),
        _ => bail!("{} takes at most one --ablate", command_name(cfg.command)),
    }
    Ok(cfg)
}

fn command_name(c: Command) -> &'static str {
    match c {
        Command::Generate => "generate",
        Command::Run => "run",
        Command::Eval => "eval",
        Command::Ablate => "ablate",
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("NCK_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("NCK_THREADS={raw:?} is not a thread count"))?;
    if n == 0 {
        bail!("NCK_THREADS must be at least 1");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn print_metrics(m: &Metrics) {
    for s in &m.steps {
        let loss = s.cleaner_loss.map_or_else(|| "-".to_string(), |l| format!("{l:.4}"));
        println!(
            "step {:>2}  auc {:.4}  far {:.4}  cleaner loss {loss}",
            s.step, s.auc, s.false_alarm_rate
        );
    }
}

fn print_eval(r: &EvalReport) {
    println!(
        "auc {:.4}  far {:.4} at threshold {}",
        r.auc, r.false_alarm_rate, r.threshold
    );
}

fn print_ablation(r: &AblationReport) {
    let width = r.rows.iter().map(|row| row.label.len()).max().unwrap_or(0);
    for row in &r.rows {
        println!(
            "{:<width$}  mean auc {:.4}  over {} seed(s)",
            row.label,
            row.mean_auc,
            row.seeds.len()
        );
    }
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    configure_threads()?;
    let cfg = build_config(&cli)?;
    info!("running {} into {:?}", command_name(cfg.command), cfg.out_dir);
    match experiment::run_experiment(&cfg)? {
        Summary::Generated {
            train_videos,
            eval_videos,
        } => {
            println!("wrote {train_videos} train and {eval_videos} eval videos");
        }
        Summary::Run { metrics } => print_metrics(&metrics),
        Summary::Eval(report) => print_eval(&report),
        Summary::Ablation(report) => print_ablation(&report),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
