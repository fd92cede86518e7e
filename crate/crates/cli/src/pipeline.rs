//! End-to-end experiment pipelines.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fedyolo::dataio::{
    generate_synthetic, load_directory, materialize, partition, preprocess, split_train_test, write_directory,
    PartitionSpec, Sample,
};
use fedyolo::evaluate::{evaluate, EvalConfig, Evaluation};
use fedyolo::federation::{
    client_seed, deserialize_checkpoint, run_federation, serialize_checkpoint, sha256_hex, FedSetup, RoundReport,
    Validation, ValidationMetrics,
};
use fedyolo::loss::LossConfig;
use fedyolo::metrics::ClassApRow;
use fedyolo::model::{Detector, ModelConfig, ParamVector};
use fedyolo::netsim::ledger_check;
use fedyolo::seed::{stream_seed, Stream};
use fedyolo::trainer::train_local;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ExperimentConfig};
use crate::report;

/// Train and test splits after resizing (and augmentation of the train split).
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub class_names: Vec<String>,
}

pub fn load_samples(cfg: &ExperimentConfig) -> Result<Vec<Sample>> {
    let samples = match &cfg.data {
        DataSource::Synthetic(s) => generate_synthetic(&cfg.synth_spec(s))?,
        DataSource::Directory(d) => {
            load_directory(&d.path, d.class_names.len()).with_context(|| format!("loading {}", d.path.display()))?
        }
    };
    let c = cfg.class_names().len();
    for (i, s) in samples.iter().enumerate() {
        s.validate(c, cfg.model.grid_size).with_context(|| format!("sample {i}"))?;
    }
    if samples.is_empty() {
        bail!("data source is empty");
    }
    Ok(samples)
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let samples = load_samples(cfg)?;
    let (train_idx, test_idx) =
        split_train_test(&samples, cfg.split.train_fraction, stream_seed(cfg.seed, Stream::Split))?;
    let size = (cfg.preprocess.size[0], cfg.preprocess.size[1]);
    let train = train_idx.iter().flat_map(|&i| preprocess(&samples[i], size, &cfg.preprocess.augment)).collect();
    let test = test_idx.iter().flat_map(|&i| preprocess(&samples[i], size, &[])).collect();
    Ok(Prepared { train, test, class_names: cfg.class_names() })
}

/// Per-round series kept in the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundPoint {
    pub round: usize,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
    pub val_loss: Option<f64>,
    pub val_map50: Option<f64>,
}

impl From<&RoundReport> for RoundPoint {
    fn from(r: &RoundReport) -> Self {
        Self {
            round: r.round,
            train_loss: r.mean_loss,
            val_accuracy: r.validation.map(|v| v.accuracy),
            val_loss: r.validation.map(|v| v.loss),
            val_map50: r.validation.map(|v| v.map50),
        }
    }
}

/// Metrics of one checkpoint on one labelled set; shared by `run`,
/// `centralized` and `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSummary {
    pub checkpoint_sha256: String,
    pub images: usize,
    pub map50: f64,
    pub map50_95: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub test_loss: f64,
    pub best_f1_threshold: f64,
    pub classes: Vec<ClassApRow>,
    pub confusion: Vec<Vec<u64>>,
}

impl EvalSummary {
    fn new(e: &Evaluation, checkpoint: &[u8]) -> Self {
        Self {
            checkpoint_sha256: sha256_hex(checkpoint),
            images: e.table.all.images,
            map50: e.table.all.map50,
            map50_95: e.table.all.map50_95,
            precision: e.table.all.precision,
            recall: e.table.all.recall,
            accuracy: e.accuracy(),
            test_loss: e.mean_loss,
            best_f1_threshold: e.table.best_f1_threshold,
            classes: e.table.rows.clone(),
            confusion: e.confusion.counts.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub mode: String,
    pub seed: u64,
    pub class_names: Vec<String>,
    pub num_rounds: usize,
    pub num_clients: usize,
    pub local_epochs: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub param_count: usize,
    pub checkpoint_bytes: usize,
    pub final_train_loss: f64,
    pub eval: EvalSummary,
    pub rounds: Vec<RoundPoint>,
    pub total_samples_processed: usize,
    pub total_simulated_seconds: f64,
    pub total_bytes: u64,
}

/// Top-level keys every summary file carries.
pub const SUMMARY_KEYS: [&str; 16] = [
    "mode",
    "seed",
    "class_names",
    "num_rounds",
    "num_clients",
    "local_epochs",
    "train_samples",
    "test_samples",
    "param_count",
    "checkpoint_bytes",
    "final_train_loss",
    "eval",
    "rounds",
    "total_samples_processed",
    "total_simulated_seconds",
    "total_bytes",
];

pub struct RunOptions {
    pub out: PathBuf,
    pub threads: usize,
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text)
}

fn write_rounds(path: &Path, reports: &[RoundReport]) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    for r in reports {
        writeln!(f, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}

/// Serialize, reload and evaluate the final model, then write the shared
/// artifacts. Returns the evaluation of the reloaded (f32) parameters.
fn finish(
    out: &Path,
    model_cfg: &ModelConfig,
    params: &ParamVector,
    prep: &Prepared,
    loss: &LossConfig,
    eval: &EvalConfig,
) -> Result<(EvalSummary, Vec<u8>)> {
    let bytes = serialize_checkpoint(params, model_cfg)?;
    let (reloaded, _) = deserialize_checkpoint(&bytes)?;
    write_file(&out.join("final_model.fdck"), &bytes)?;
    let model = Detector::new(*model_cfg)?;
    let e = evaluate(&model, &reloaded, &prep.test, &prep.class_names, loss, eval)?;
    report::write_metrics(&out.join("metrics"), &e, &prep.class_names)?;
    write_directory(&prep.test, &out.join("test_data"))?;
    Ok((EvalSummary::new(&e, &bytes), bytes))
}

pub fn run_federated(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Summary> {
    let prep = prepare(cfg)?;
    let out = &opts.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let n = cfg.federation.num_clients;
    let parts = partition(
        &prep.train,
        &PartitionSpec { mode: cfg.partition, num_clients: n, seed: stream_seed(cfg.seed, Stream::Partition) },
    )?;
    write_json(&out.join("partition.json"), &fedyolo::dataio::partition_manifest(&parts))?;
    let shards: Vec<Vec<Sample>> = parts.iter().map(|p| materialize(&prep.train, p)).collect();
    let sizes: Vec<usize> = shards.iter().map(Vec::len).collect();
    log::info!("client shard sizes {sizes:?}");

    let model_cfg = cfg.model_config();
    let net = cfg.net_profile(n);
    let setup = FedSetup {
        model: model_cfg,
        fed: cfg.fed_config(),
        train: cfg.train_config(),
        loss: cfg.loss,
        net: &net,
        threads: opts.threads,
    };
    let validation = Validation { samples: &prep.test, class_names: prep.class_names.clone(), eval: cfg.eval };
    let init = Detector::new(model_cfg)?.init_params();
    let outcome = run_federation(&setup, init, &shards, Some(&validation), |_| {})?;
    write_rounds(&out.join("rounds.jsonl"), &outcome.reports)?;
    write_json(&out.join("ledger.json"), &outcome.ledger)?;

    let m = model_cfg.param_count()?;
    let ckpt_bytes = fedyolo::federation::checkpoint_size(m);
    if let Err(issues) = ledger_check(
        &outcome.ledger,
        &net,
        ckpt_bytes as u64,
        cfg.federation.num_rounds,
        cfg.train.local_epochs,
        &sizes,
    ) {
        let dropped = outcome.reports.iter().any(|r| r.client_losses.iter().any(Option::is_none));
        let text: Vec<String> = issues.iter().map(ToString::to_string).collect();
        if dropped {
            log::warn!("cost ledger differs from the full budget after dropped clients: {}", text.join("; "));
        } else {
            bail!("cost ledger check failed: {}", text.join("; "));
        }
    }

    let (eval, _) = finish(out, &model_cfg, &outcome.params, &prep, &cfg.loss, &cfg.eval)?;
    let summary = Summary {
        mode: "federated".into(),
        seed: cfg.seed,
        class_names: prep.class_names.clone(),
        num_rounds: cfg.federation.num_rounds,
        num_clients: n,
        local_epochs: cfg.train.local_epochs,
        train_samples: prep.train.len(),
        test_samples: prep.test.len(),
        param_count: m,
        checkpoint_bytes: ckpt_bytes,
        final_train_loss: outcome.reports.last().map_or(f64::NAN, |r| r.mean_loss),
        eval,
        rounds: outcome.reports.iter().map(RoundPoint::from).collect(),
        total_samples_processed: outcome.ledger.total_samples(),
        total_simulated_seconds: outcome.ledger.total_seconds(),
        total_bytes: outcome.ledger.total_bytes(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// One model on the pooled training split with the same budget: `K` blocks
/// of `I` local epochs, shuffled exactly as client 0 of a federated run.
pub fn run_centralized(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Summary> {
    let prep = prepare(cfg)?;
    let out = opts.out.join("centralized");
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let model_cfg = cfg.model_config();
    let model = Detector::new(model_cfg)?;
    let base = cfg.train_config();
    let k = cfg.federation.num_rounds;
    let every = cfg.federation.eval_every;
    let per_sample = cfg.net_profile(1).clients[0].compute_per_sample;

    let mut params = model.init_params();
    let mut reports = Vec::with_capacity(k);
    let mut processed_total = 0;
    let mut elapsed = 0.0;
    for round in 0..k {
        let mut tc = base;
        tc.shuffle_seed = client_seed(base.shuffle_seed, round, 0, true);
        let (theta, traces) = train_local(&model, &params, &prep.train, &tc, &cfg.loss)
            .with_context(|| format!("round {}", round + 1))?;
        params = theta;
        let processed: usize = traces.iter().map(|t| t.samples_processed).sum();
        let loss = traces.iter().map(|t| t.mean_loss.total).sum::<f64>() / traces.len() as f64;
        let seconds = processed as f64 * per_sample;
        processed_total += processed;
        elapsed += seconds;
        let due = round + 1 == k || (every > 0 && (round + 1) % every == 0);
        let validation = if due {
            let e = evaluate(&model, &params, &prep.test, &prep.class_names, &cfg.loss, &cfg.eval)?;
            Some(ValidationMetrics {
                map50: e.table.all.map50,
                map50_95: e.table.all.map50_95,
                accuracy: e.accuracy(),
                loss: e.mean_loss,
            })
        } else {
            None
        };
        log::info!("round {}/{k}: loss {loss:.6}", round + 1);
        reports.push(RoundReport {
            round: round + 1,
            client_losses: vec![Some(loss)],
            mean_loss: loss,
            checksum: fedyolo::federation::param_checksum(&params),
            validation,
            round_seconds: seconds,
            elapsed_seconds: elapsed,
            bytes_up: 0,
            bytes_down: 0,
            samples_processed: processed,
        });
    }
    write_rounds(&out.join("rounds.jsonl"), &reports)?;
    let m = model_cfg.param_count()?;
    let (eval, _) = finish(&out, &model_cfg, &params, &prep, &cfg.loss, &cfg.eval)?;
    let summary = Summary {
        mode: "centralized".into(),
        seed: cfg.seed,
        class_names: prep.class_names.clone(),
        num_rounds: k,
        num_clients: 1,
        local_epochs: cfg.train.local_epochs,
        train_samples: prep.train.len(),
        test_samples: prep.test.len(),
        param_count: m,
        checkpoint_bytes: fedyolo::federation::checkpoint_size(m),
        final_train_loss: reports.last().map_or(f64::NAN, |r| r.mean_loss),
        eval,
        rounds: reports.iter().map(RoundPoint::from).collect(),
        total_samples_processed: processed_total,
        total_simulated_seconds: elapsed,
        total_bytes: 0,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Evaluate a checkpoint file on a directory of P5 images and labels.
pub fn eval_checkpoint(
    checkpoint: &Path,
    data: &Path,
    class_names: &[String],
    loss: &LossConfig,
    eval: &EvalConfig,
    out: Option<&Path>,
) -> Result<EvalSummary> {
    let bytes = fs::read(checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
    let (params, model_cfg) = deserialize_checkpoint(&bytes).with_context(|| format!("{}", checkpoint.display()))?;
    if class_names.len() != model_cfg.num_classes {
        bail!("checkpoint has {} classes but {} class names were given", model_cfg.num_classes, class_names.len());
    }
    let size = (model_cfg.input_height, model_cfg.input_width);
    let samples: Vec<Sample> = load_directory(data, model_cfg.num_classes)
        .with_context(|| format!("loading {}", data.display()))?
        .iter()
        .flat_map(|s| preprocess(s, size, &[]))
        .collect();
    let model = Detector::new(model_cfg)?;
    let e = evaluate(&model, &params, &samples, class_names, loss, eval)?;
    let summary = EvalSummary::new(&e, &bytes);
    if let Some(out) = out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        report::write_metrics(&out.join("metrics"), &e, class_names)?;
        write_json(&out.join("eval.json"), &summary)?;
    }
    Ok(summary)
}

/// Check that a summary file has exactly the expected top-level keys, then parse it.
pub fn read_summary(path: &Path) -> Result<Summary> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let obj = value.as_object().with_context(|| format!("{}: summary must be a JSON object", path.display()))?;
    let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
    keys.sort_unstable();
    let mut expected = SUMMARY_KEYS.to_vec();
    expected.sort_unstable();
    if keys != expected {
        return Err(SchemaError(format!("{}: summary keys {keys:?} do not match {expected:?}", path.display())).into());
    }
    serde_json::from_value(value).map_err(|e| SchemaError(format!("{}: {e}", path.display())).into())
}

#[derive(Debug, thiserror::Error)]
#[error("schema mismatch: {0}")]
pub struct SchemaError(pub String);
