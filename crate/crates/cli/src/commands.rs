use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fedyolo::dataio::{
    generate_synthetic, load_directory, partition, partition_manifest, write_directory, PartitionMode, PartitionSpec,
    SynthSpec, CLASS_NAMES,
};
use fedyolo::evaluate::EvalConfig;
use fedyolo::loss::LossConfig;
use fedyolo::seed::{stream_seed, Stream};

use crate::config::{ConfigError, ExperimentConfig};
use crate::pipeline::{self, RunOptions, SchemaError};
use crate::report;

#[derive(Debug, Parser)]
#[command(name = "fedyolo", version, about = "Federated grid-detector training simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for client training.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Iid,
    Dirichlet,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset as P5 images with label files.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        max_objects: usize,
        #[arg(long, default_value_t = 4)]
        grid: usize,
    },
    /// Split a dataset across clients and write the manifest.
    Partition {
        #[command(flatten)]
        common: Common,
        /// Dataset directory (ignored when --config is given).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "iid")]
        mode: ModeArg,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(short = 'n', long = "clients", default_value_t = 4)]
        clients: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
    },
    /// Federated training, then evaluation on the test split.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Centralized baseline with the same budget.
    Centralized {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on a dataset directory.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Compare a federated and a centralized summary.
    Compare {
        #[command(flatten)]
        common: Common,
        fl_summary: PathBuf,
        ml_summary: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<Option<ExperimentConfig>> {
    let Some(path) = &common.config else {
        return Ok(None);
    };
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(Some(cfg))
}

fn require_config(common: &Common) -> Result<ExperimentConfig> {
    load_config(common)?.ok_or_else(|| ConfigError::Invalid("--config is required".into()).into())
}

fn run_options(common: &Common, cfg: &ExperimentConfig) -> RunOptions {
    RunOptions {
        out: common.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out")),
        threads: common.threads.max(1),
    }
}

fn write_json(path: &std::path::Path, v: &impl serde::Serialize) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { common, count, size, max_objects, grid } => {
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("data"));
            let samples = match load_config(&common)? {
                Some(cfg) => pipeline::load_samples(&cfg)?,
                None => {
                    let spec = SynthSpec {
                        max_objects,
                        grid_size: grid,
                        ..SynthSpec::new(count, size, stream_seed(common.seed.unwrap_or(0), Stream::Data))
                    };
                    spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
                    generate_synthetic(&spec)?
                }
            };
            write_directory(&samples, &out)?;
            log::info!("wrote {} samples to {}", samples.len(), out.display());
        }
        Command::Partition { common, data, mode, alpha, clients, classes } => {
            let (samples, spec) = match load_config(&common)? {
                Some(cfg) => {
                    let prep = pipeline::prepare(&cfg)?;
                    let spec = PartitionSpec {
                        mode: cfg.partition,
                        num_clients: cfg.federation.num_clients,
                        seed: stream_seed(cfg.seed, Stream::Partition),
                    };
                    (prep.train, spec)
                }
                None => {
                    let dir = data.ok_or_else(|| ConfigError::Invalid("--data or --config is required".into()))?;
                    let samples =
                        load_directory(&dir, classes).with_context(|| format!("loading {}", dir.display()))?;
                    let mode = match mode {
                        ModeArg::Iid => PartitionMode::Iid,
                        ModeArg::Dirichlet => PartitionMode::Dirichlet { alpha },
                    };
                    let seed = stream_seed(common.seed.unwrap_or(0), Stream::Partition);
                    (samples, PartitionSpec { mode, num_clients: clients, seed })
                }
            };
            let parts = partition(&samples, &spec)?;
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
            write_json(&out.join("partition.json"), &partition_manifest(&parts))?;
        }
        Command::Run { common } => {
            let cfg = require_config(&common)?;
            let s = pipeline::run_federated(&cfg, &run_options(&common, &cfg))?;
            println!("mAP50 {:.4}  mAP50-95 {:.4}  accuracy {:.4}", s.eval.map50, s.eval.map50_95, s.eval.accuracy);
        }
        Command::Centralized { common } => {
            let cfg = require_config(&common)?;
            let s = pipeline::run_centralized(&cfg, &run_options(&common, &cfg))?;
            println!("mAP50 {:.4}  mAP50-95 {:.4}  accuracy {:.4}", s.eval.map50, s.eval.map50_95, s.eval.accuracy);
        }
        Command::Eval { common, checkpoint, data } => {
            let cfg = load_config(&common)?;
            let (names, loss, eval) = match &cfg {
                Some(c) => (c.class_names(), c.loss, c.eval),
                None => {
                    (CLASS_NAMES.iter().map(|s| s.to_string()).collect(), LossConfig::default(), EvalConfig::default())
                }
            };
            let s = pipeline::eval_checkpoint(&checkpoint, &data, &names, &loss, &eval, common.out.as_deref())?;
            println!("mAP50 {:.4}  mAP50-95 {:.4}  accuracy {:.4}", s.map50, s.map50_95, s.accuracy);
        }
        Command::Compare { common, fl_summary, ml_summary } => {
            let fl = pipeline::read_summary(&fl_summary)?;
            let ml = pipeline::read_summary(&ml_summary)?;
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("compare"));
            report::compare(&fl, &ml, &out)?;
        }
    }
    Ok(())
}

/// 2 for configuration, parse and schema errors, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let config = err.chain().any(|e| e.is::<ConfigError>() || e.is::<SchemaError>());
    if config {
        2
    } else {
        1
    }
}
