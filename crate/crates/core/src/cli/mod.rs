//! Command-line front end: argument parsing and dispatch.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::synth::SynthConfig;

pub use commands::{
    cmd_compare, cmd_evaluate, cmd_mine, cmd_run, cmd_split, cmd_synth, compare_reports,
    ComparisonRow, MineSummary, RunManifest,
};
pub use config::RunConfig;

const OUTPUTS: &str = "\
Outputs (relative to --out):
  mine      catalog.csv, cooccurrence.csv
  run       manifest.json, catalog.csv, cooccurrence.csv,
            rankings/<method>/n<size>/<class>.csv, reports/<method>.json,
            reports/subclass_ap_n<size>.csv, curves/<method>.csv,
            models/<method>/n<size>/*.json
  compare   comparison.csv
  split     part_subclass.jsonl, part_top.jsonl, part_val.jsonl
  evaluate  evaluation.json
  synth     train.jsonl, test.jsonl, run.toml

Exit codes: 0 success, 2 invalid input or config, 3 I/O failure, 4 internal invariant violated.";

#[derive(Debug, Parser)]
#[command(name = "subclass-rep", version, about = "Rank images by class through mined tag subclasses", after_help = OUTPUTS)]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mine the subclass catalog of a corpus.
    Mine {
        /// Corpus (JSONL); defaults to the config's corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Split, train, rank and evaluate every configured method.
    Run {
        /// Re-run from a manifest.json instead of --config.
        #[arg(long, conflicts_with = "config")]
        manifest: Option<PathBuf>,
    },
    /// Compare SVM_SubClassProb against the baselines in a reports directory.
    Compare {
        /// Directory of <method>.json reports; defaults to <--out>/reports.
        #[arg(long)]
        reports: Option<PathBuf>,
    },
    /// Write the three stratified parts of a corpus.
    Split {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Score a directory of per-class ranking CSVs against a labelled corpus.
    Evaluate {
        /// Directory of <class>.csv rankings.
        #[arg(long)]
        rankings: PathBuf,
        /// Corpus (JSONL) holding the true labels.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 0)]
        train_size: usize,
    },
    /// Generate a synthetic corpus with known subclass structure.
    Synth {
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 3)]
        subclasses: usize,
        #[arg(long, default_value_t = 10)]
        dim: usize,
        #[arg(long, default_value_t = 600)]
        train_records: usize,
        #[arg(long, default_value_t = 300)]
        test_records: usize,
        #[arg(long, default_value_t = 0.1)]
        tag_noise: f64,
    },
}

/// Runs a parsed command line, sizing the worker pool first.
pub fn run(cli: Cli) -> Result<()> {
    match cli.jobs {
        Some(0) => Err(Error::Config("--jobs must be >= 1".into())),
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?
            .install(|| dispatch(cli)),
        None => dispatch(cli),
    }
}

fn load_config(cli: &Cli) -> Result<Option<(RunConfig, String)>> {
    cli.config.as_deref().map(RunConfig::load).transpose()
}

fn dispatch(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Mine { corpus } => {
            let config = load_config(&cli)?;
            let corpus = corpus
                .clone()
                .or_else(|| config.as_ref().map(|(c, _)| c.corpus.clone()))
                .ok_or_else(|| Error::Config("mine needs --corpus or --config".into()))?;
            let mining = config
                .as_ref()
                .map(|(c, _)| c.pipeline.mining.clone())
                .unwrap_or_default();
            let out = output_dir(&cli, config.as_ref().map(|(c, _)| c))?;
            let summary = cmd_mine(&corpus, &mining, &out)?;
            for (class, count) in &summary.per_class {
                println!("{class}\t{count}");
            }
            println!(
                "{} subclasses written to {}",
                summary.total(),
                out.display()
            );
            Ok(())
        }
        Command::Run { manifest } => {
            let (mut config, text) = match manifest {
                Some(path) => {
                    let manifest = RunManifest::load(path)?;
                    manifest.verify_inputs()?;
                    (manifest.config, manifest.config_text)
                }
                None => load_config(&cli)?
                    .ok_or_else(|| Error::Config("run needs --config or --manifest".into()))?,
            };
            if let Some(seed) = cli.seed {
                config.pipeline.seed = seed;
            }
            if let Some(out) = &cli.out {
                config.out_dir = out.clone();
            }
            let manifest = cmd_run(&config, &text)?;
            for method in &manifest.methods {
                for run in &method.runs {
                    println!(
                        "{}\tn={}\tMAP={:.4}",
                        method.method, run.train_size, run.map
                    );
                }
            }
            println!(
                "manifest: {}",
                config.out_dir.join("manifest.json").display()
            );
            Ok(())
        }
        Command::Compare { reports } => {
            let out = output_dir(&cli, None)?;
            let reports = reports.clone().unwrap_or_else(|| out.join("reports"));
            let table = cmd_compare(&reports, &out)?;
            print!("{table}");
            Ok(())
        }
        Command::Split { corpus } => {
            let config = load_config(&cli)?;
            let corpus = corpus
                .clone()
                .or_else(|| config.as_ref().map(|(c, _)| c.corpus.clone()))
                .ok_or_else(|| Error::Config("split needs --corpus or --config".into()))?;
            let pipeline = config
                .as_ref()
                .map(|(c, _)| c.pipeline.clone())
                .unwrap_or_default();
            let seed = cli.seed.unwrap_or(pipeline.seed);
            let out = output_dir(&cli, config.as_ref().map(|(c, _)| c))?;
            let sizes = cmd_split(&corpus, pipeline.split_ratios, seed, &out)?;
            println!(
                "part_subclass {}\tpart_top {}\tpart_val {}",
                sizes[0], sizes[1], sizes[2]
            );
            Ok(())
        }
        Command::Evaluate {
            rankings,
            truth,
            train_size,
        } => {
            let report = cmd_evaluate(rankings, truth, *train_size, cli.out.as_deref())?;
            for ap in &report.per_class_ap {
                println!("{}\t{:.4}", ap.class, ap.ap);
            }
            println!("MAP\t{:.4}", report.map);
            Ok(())
        }
        Command::Synth {
            classes,
            subclasses,
            dim,
            train_records,
            test_records,
            tag_noise,
        } => {
            let config = SynthConfig {
                classes: *classes,
                subclasses_per_class: *subclasses,
                dim: *dim,
                train_records: *train_records,
                test_records: *test_records,
                tag_noise: *tag_noise,
                seed: cli.seed.unwrap_or(0),
                ..Default::default()
            };
            let out = output_dir(&cli, None)?;
            cmd_synth(&config, &out)?;
            println!("synthetic corpus written to {}", out.display());
            Ok(())
        }
    }
}

fn output_dir(cli: &Cli, config: Option<&RunConfig>) -> Result<PathBuf> {
    cli.out
        .clone()
        .or_else(|| config.map(|c| c.out_dir.clone()))
        .ok_or_else(|| Error::Config("--out is required".into()))
}
