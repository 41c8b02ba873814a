//! `xneutr`: train probes, neutralize centroids and render the results.
//!
//! Exit codes: 0 success, 2 user or configuration error, 3 numeric failure.

mod commands;
mod manifest;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use manifest::Manifest;
use pipeline::Ctx;

#[derive(Parser)]
#[command(
    name = "xneutr",
    version,
    about = "Cross-neutralization of linguistic categories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a probe and report its test accuracy.
    Train(Common),
    /// Search the layer x pooling grid for one task.
    SelectConfig(Common),
    /// Predicted and gold validation centroids.
    Centroids(Common),
    /// Cross-neutralization matrix (experiment = xn, xl-xn or xt-xn).
    Neutralize(Common),
    /// Matrix with norm-matched random vectors in place of centroids.
    RandomBaseline(Common),
    /// Probe accuracy against a control task.
    Selectivity(Common),
    /// Summary document over every matrix under the output directory.
    Report(Common),
    /// Write a synthetic treebank, stores and manifest.
    Synth(Common),
    /// List manifest keys.
    Keys,
}

/// Flags mirror manifest keys and win over `--manifest`; `--set` reaches
/// every key.
#[derive(Args)]
struct Common {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long)]
    encoder: Option<String>,
    #[arg(long)]
    treebank: Option<String>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    layer: Option<String>,
    #[arg(long)]
    pooling: Option<String>,
    #[arg(long)]
    combiner: Option<String>,
    #[arg(long)]
    direction: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    jobs: Option<String>,
    #[arg(long)]
    zero_centroids: bool,
    #[arg(long)]
    no_train: bool,
}

impl Common {
    fn manifest(&self) -> anyhow::Result<Manifest> {
        let mut m = match &self.manifest {
            Some(path) => Manifest::load(path)?,
            None => Manifest::default(),
        };
        for pair in &self.set {
            m.set_pair(pair)?;
        }
        let flags = [
            ("experiment", &self.experiment),
            ("encoder", &self.encoder),
            ("treebank", &self.treebank),
            ("task", &self.task),
            ("layer", &self.layer),
            ("pooling", &self.pooling),
            ("combiner", &self.combiner),
            ("direction", &self.direction),
            ("seed", &self.seed),
            ("out", &self.out),
            ("jobs", &self.jobs),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                m.set(key, v)?;
            }
        }
        if self.zero_centroids {
            m.set("zero_centroids", "true")?;
        }
        if self.no_train {
            m.set("no_train", "true")?;
        }
        Ok(m)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (common, command) = match cli.command {
        Command::Keys => {
            for (k, help) in manifest::KEYS {
                println!("{k:<26} {help}");
            }
            return Ok(());
        }
        Command::Train(c) => (c, "train"),
        Command::SelectConfig(c) => (c, "select-config"),
        Command::Centroids(c) => (c, "centroids"),
        Command::Neutralize(c) => (c, "neutralize"),
        Command::RandomBaseline(c) => (c, "random-baseline"),
        Command::Selectivity(c) => (c, "selectivity"),
        Command::Report(c) => (c, "report"),
        Command::Synth(c) => (c, "synth"),
    };
    let mut ctx = Ctx::new(common.manifest()?)?;
    match command {
        "train" => commands::train(&ctx),
        "select-config" => commands::select_config_cmd(&ctx),
        "centroids" => commands::centroids(&ctx),
        "neutralize" => commands::neutralize(&mut ctx),
        "random-baseline" => commands::random(&ctx),
        "selectivity" => commands::selectivity_cmd(&ctx),
        "report" => commands::report(&ctx),
        "synth" => commands::synth(&ctx),
        _ => unreachable!("every subcommand is dispatched"),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numeric = err
        .chain()
        .filter_map(|e| e.downcast_ref::<xneutr_core::Error>())
        .any(xneutr_core::Error::is_numeric);
    if numeric {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
