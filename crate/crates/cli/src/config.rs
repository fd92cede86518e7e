//! Experiment configuration files.

use std::path::{Path, PathBuf};

use fedyolo::dataio::{Augmentation, PartitionMode, SynthSpec, CLASS_NAMES};
use fedyolo::evaluate::EvalConfig;
use fedyolo::federation::{Aggregation, FailurePolicy, FedConfig};
use fedyolo::loss::LossConfig;
use fedyolo::model::ModelConfig;
use fedyolo::netsim::{ClientLink, NetProfile};
use fedyolo::seed::{stream_seed, Stream};
use fedyolo::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub count: usize,
    pub image_size: usize,
    #[serde(default = "default_mix")]
    pub class_mix: Vec<f64>,
    #[serde(default = "one")]
    pub max_objects: usize,
}

fn default_mix() -> Vec<f64> {
    vec![1.0 / 3.0; 3]
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectorySource {
    pub path: PathBuf,
    pub class_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSource),
    Directory(DirectorySource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessSection {
    /// Model input as `[height, width]`; images are resized with nearest neighbour.
    pub size: [usize; 2],
    /// Extra augmented copies added to the training split only.
    #[serde(default)]
    pub augment: Vec<Augmentation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
}

fn default_fraction() -> f64 {
    0.8
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { train_fraction: default_fraction() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub grid_size: usize,
    pub boxes_per_cell: usize,
    pub hidden_width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub local_epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_batch() -> usize {
    8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationSection {
    pub num_rounds: usize,
    pub num_clients: usize,
    #[serde(default = "one")]
    pub eval_every: usize,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub failure_policy: FailurePolicy,
    #[serde(default = "yes")]
    pub per_client_seeds: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSection {
    /// Link shared by every client unless `clients` is given.
    #[serde(default)]
    pub link: ClientLink,
    /// One link per client.
    #[serde(default)]
    pub clients: Option<Vec<ClientLink>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSource,
    pub preprocess: PreprocessSection,
    #[serde(default)]
    pub split: SplitSection,
    pub model: ModelSection,
    pub train: TrainSection,
    #[serde(default)]
    pub loss: LossConfig,
    pub federation: FederationSection,
    #[serde(default = "default_partition")]
    pub partition: PartitionMode,
    #[serde(default)]
    pub net: NetSection,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_partition() -> PartitionMode {
    PartitionMode::Iid
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let [h, w] = self.preprocess.size;
        if h == 0 || w == 0 {
            return bad("preprocess.size must be positive".into());
        }
        let f = self.split.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return bad(format!("split.train_fraction must be in (0, 1), got {f}"));
        }
        if self.class_names().is_empty() {
            return bad("data source needs at least one class".into());
        }
        self.fed_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.loss.weights().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let PartitionMode::Dirichlet { alpha } = self.partition {
            if !(alpha.is_finite() && alpha > 0.0) {
                return bad(format!("partition alpha must be > 0, got {alpha}"));
            }
        }
        if let Some(c) = &self.net.clients {
            if c.len() != self.federation.num_clients {
                return bad(format!("net.clients has {} links for {} clients", c.len(), self.federation.num_clients));
            }
        }
        self.net_profile(self.federation.num_clients).validate().map_err(ConfigError::Invalid)?;
        let m = self.model_config();
        m.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        m.param_count().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let DataSource::Synthetic(s) = &self.data {
            self.synth_spec(s).validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        match &self.data {
            DataSource::Synthetic(_) => CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            DataSource::Directory(d) => d.class_names.clone(),
        }
    }

    pub fn synth_spec(&self, s: &SyntheticSource) -> SynthSpec {
        SynthSpec {
            count: s.count,
            image_size: s.image_size,
            class_mix: s.class_mix.clone(),
            max_objects: s.max_objects,
            grid_size: self.model.grid_size,
            seed: stream_seed(self.seed, Stream::Data),
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_height: self.preprocess.size[0],
            input_width: self.preprocess.size[1],
            grid_size: self.model.grid_size,
            boxes_per_cell: self.model.boxes_per_cell,
            num_classes: self.class_names().len(),
            hidden_width: self.model.hidden_width,
            seed: stream_seed(self.seed, Stream::ModelInit),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            local_epochs: self.train.local_epochs,
            batch_size: self.train.batch_size,
            shuffle_seed: stream_seed(self.seed, Stream::Shuffle),
        }
    }

    pub fn fed_config(&self) -> FedConfig {
        let f = &self.federation;
        FedConfig {
            num_rounds: f.num_rounds,
            num_clients: f.num_clients,
            eval_every: f.eval_every,
            aggregation: f.aggregation,
            failure_policy: f.failure_policy,
            per_client_seeds: f.per_client_seeds,
        }
    }

    pub fn net_profile(&self, num_clients: usize) -> NetProfile {
        match &self.net.clients {
            Some(c) => NetProfile { clients: c.clone() },
            None => NetProfile::uniform(num_clients, self.net.link),
        }
    }
}
