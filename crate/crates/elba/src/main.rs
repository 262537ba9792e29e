use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use elba::config::resolve_with_env;
use elba::io::under;
use elba::pipeline::{self, Layout};
use elba::RunConfig;

/// Learning-by-asking agent pipeline.
#[derive(Parser, Debug)]
#[command(name = "elba", version)]
struct Cli {
    /// Output root; every other path is relative to it.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Flat dotted-key TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set confusion.mode=gradient.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Worker threads for evaluation.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the episode splits and their manifest.
    Gen,
    /// Train one model.
    Train {
        component: Component,
        /// Actioner checkpoint to continue training from.
        #[arg(long)]
        resume_from: Option<PathBuf>,
    },
    /// Evaluate the configured arms on the configured splits.
    Eval,
    /// Run one ablation grid; the kind defaults to ablate.kind.
    Ablate { kind: Option<String> },
    /// Merge report CSVs by config hash.
    Report { inputs: Vec<PathBuf> },
    /// Line-aligned Rouge-L between two text files.
    #[command(name = "rouge-l", alias = "rouge_l")]
    RougeL {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        hypothesis: PathBuf,
    },
    /// Print the resolved configuration.
    Config,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Component {
    Actioner,
    Planner,
    Qaeval,
}

fn load_config(cli: &Cli, extra: &[String]) -> Result<RunConfig> {
    let text = match &cli.config {
        Some(p) => {
            let p = under(&cli.out, p);
            Some(fs::read_to_string(&p).with_context(|| format!("reading config {}", p.display()))?)
        }
        None => None,
    };
    let mut sets = cli.sets.clone();
    sets.extend_from_slice(extra);
    resolve_with_env(text.as_deref(), &sets)
}

fn run(cli: Cli) -> Result<()> {
    let extra = match &cli.command {
        Command::Ablate { kind: Some(k) } => vec![format!("ablate.kind={k}")],
        _ => Vec::new(),
    };
    let cfg = load_config(&cli, &extra)?;
    let layout = Layout::new(&cli.out);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        pool = pool.num_threads(j.max(1));
    }
    let pool = pool.build().context("starting worker pool")?;
    pool.install(|| match &cli.command {
        Command::Gen => pipeline::cmd_gen(&cfg, &layout).map(|_| ()),
        Command::Train { component, resume_from } => match component {
            Component::Actioner => pipeline::cmd_train_actioner(&cfg, &layout, resume_from.as_deref()),
            Component::Planner => pipeline::cmd_train_planner(&cfg, &layout),
            Component::Qaeval => pipeline::cmd_train_qaeval(&cfg, &layout),
        },
        Command::Eval => pipeline::cmd_eval(&cfg, &layout).map(|_| ()),
        Command::Ablate { .. } => pipeline::cmd_ablate(&cfg, &layout).map(|_| ()),
        Command::Report { inputs } => pipeline::cmd_report(&cfg, &layout, inputs).map(|_| ()),
        Command::RougeL { reference, hypothesis } => {
            let s = pipeline::cmd_rouge_l(&layout, reference, hypothesis)?;
            println!("rouge_l mean {:.6} over {} lines", s.mean, s.n);
            Ok(())
        }
        Command::Config => {
            print!("{}", cfg.to_flat_toml());
            Ok(())
        }
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
