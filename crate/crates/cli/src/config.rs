//! Run configuration, read from TOML. Every field has a default, so an empty
//! file is a valid WISDM configuration.

use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use deepact::dbn::{FineTuneConfig, PretrainConfig};
use deepact::ingest::{DaphnetSensor, DatasetFormat, LoadOptions, SkodaLayout, SplitPolicy};
use deepact::rbm::{Reconstruction, TrainConfig};
use deepact::{derive_seed, Error, Result};
use serde::{Deserialize, Serialize};

/// Seed streams for the pipeline stages.
/// Optional directory for relative dataset paths of config-less runs.
pub const DATA_DIR_ENV: &str = "DEEPACT_DATA_DIR";

pub mod stream {
    pub const SPLIT: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const PRETRAIN: u64 = 3;
    pub const FINETUNE: u64 = 4;
    pub const INIT: u64 = 5;
    pub const SWEEP: u64 = 6;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every stage seed is derived from it.
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub window: WindowConfig,
    pub features: FeatureConfig,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub pipeline: PipelineConfig,
    pub sweep: SweepGrid,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            dataset: DatasetConfig::default(),
            window: WindowConfig::default(),
            features: FeatureConfig::default(),
            split: SplitConfig::default(),
            model: ModelConfig::default(),
            pipeline: PipelineConfig::default(),
            sweep: SweepGrid::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    /// File or directory. Relative paths resolve against the config file.
    pub path: PathBuf,
    /// `wisdm`, `daphnet` or `skoda`.
    pub format: String,
    /// Daphnet sensor: `ankle`, `thigh` or `trunk`.
    pub sensor: String,
    /// Skoda node id.
    pub node: u32,
    /// Saturation bound in g.
    pub saturation: f64,
    pub strict: bool,
    /// Overrides the nominal sampling rate of the format, in Hz.
    pub sampling_hz: Option<f64>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            name: "wisdm".into(),
            path: PathBuf::from("WISDM_ar_v1.1_raw.txt"),
            format: "wisdm".into(),
            sensor: "ankle".into(),
            node: 16,
            saturation: deepact::ingest::DEFAULT_SATURATION,
            strict: true,
            sampling_hz: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    /// Window length in seconds; 0 picks the format default (10 s WISDM, 4 s otherwise).
    pub seconds: f64,
    /// Stride in seconds; 0 means non-overlapping.
    pub stride_seconds: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            seconds: 0.0,
            stride_seconds: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub hann: bool,
    pub log_magnitude: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// `random-stratified` or `by-user`.
    pub policy: String,
    pub test_fraction: f64,
    /// Overrides the seed derived from the master seed.
    pub seed: Option<u64>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            policy: SplitPolicy::RandomStratified.to_string(),
            test_fraction: 0.3,
            seed: None,
        }
    }
}

/// Supplies the defaults of one layer kind.
pub trait StageDefaults {
    fn defaults() -> TrainConfig;
}

/// First layer (Gaussian-binary).
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian;

/// Stacked layers (binary-binary).
#[derive(Debug, Clone, PartialEq)]
pub struct Binary;

impl StageDefaults for Gaussian {
    fn defaults() -> TrainConfig {
        TrainConfig::grbm_default()
    }
}

impl StageDefaults for Binary {
    fn defaults() -> TrainConfig {
        TrainConfig::brbm_default()
    }
}

/// Trainer settings for one kind of layer; `K` picks the defaults that fill
/// missing fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound = "K: StageDefaults")]
pub struct RbmStage<K> {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub initial_momentum: f64,
    pub momentum_switch_epoch: usize,
    pub weight_decay: f64,
    /// `mean` or `sample`.
    pub reconstruction: String,
    #[serde(skip)]
    kind: PhantomData<K>,
}

impl<K> RbmStage<K> {
    fn from_train(cfg: TrainConfig) -> Self {
        Self {
            learning_rate: cfg.learning_rate,
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            momentum: cfg.momentum,
            initial_momentum: cfg.initial_momentum,
            momentum_switch_epoch: cfg.momentum_switch_epoch,
            weight_decay: cfg.weight_decay,
            reconstruction: "mean".into(),
            kind: PhantomData,
        }
    }

    fn to_train(&self, seed: u64) -> Result<TrainConfig> {
        let reconstruction = match self.reconstruction.as_str() {
            "mean" => Reconstruction::Mean,
            "sample" => Reconstruction::Sample,
            other => return Err(Error::Config(format!("unknown reconstruction `{other}`"))),
        };
        let cfg = TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            momentum: self.momentum,
            initial_momentum: self.initial_momentum,
            momentum_switch_epoch: self.momentum_switch_epoch,
            weight_decay: self.weight_decay,
            seed,
            reconstruction,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl<K: StageDefaults> Default for RbmStage<K> {
    fn default() -> Self {
        Self::from_train(K::defaults())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineTuneStage {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: Option<usize>,
}

impl Default for FineTuneStage {
    fn default() -> Self {
        let d = FineTuneConfig::default();
        Self {
            learning_rate: d.learning_rate,
            epochs: d.epochs,
            batch_size: d.batch_size,
            patience: d.patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden layer widths, bottom to top.
    pub layers: Vec<usize>,
    pub grbm: RbmStage<Gaussian>,
    pub brbm: RbmStage<Binary>,
    pub finetune: FineTuneStage,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: vec![1000, 1000, 1000],
            grbm: RbmStage::default(),
            brbm: RbmStage::default(),
            finetune: FineTuneStage::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub pretrain: bool,
    pub hmm: bool,
    /// Standard deviation of Gaussian noise added to raw samples, in g.
    pub noise_sigma: f64,
    /// Additive smoothing for HMM counts.
    pub smoothing: f64,
    /// Divide posteriors by a uniform prior instead of class frequencies.
    pub uniform_priors: bool,
    /// Class treated as positive for TPR/TNR; defaults to index 1 when M = 2.
    pub positive_class: Option<String>,
    /// Worker cap for parallel stages; 0 lets the runtime decide.
    pub threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            pretrain: true,
            hmm: false,
            noise_sigma: 0.0,
            smoothing: deepact::hmm::DEFAULT_SMOOTHING,
            uniform_priors: false,
            positive_class: None,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub depths: Vec<usize>,
    pub widths: Vec<usize>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            depths: vec![1, 2, 3, 4, 5],
            widths: vec![500, 1000, 2000],
        }
    }
}

/// Window geometry in samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub n: usize,
    pub stride: usize,
    pub sampling_hz: f64,
}

/// `seconds × rate` must be a whole, even number of samples.
fn samples_for(seconds: f64, hz: f64, what: &str) -> Result<usize> {
    let exact = seconds * hz;
    let n = exact.round();
    if !(seconds > 0.0) || (exact - n).abs() > 1e-9 * exact.max(1.0) || n < 1.0 {
        return Err(Error::Config(format!(
            "{what} of {seconds} s at {hz} Hz is not a whole number of samples"
        )));
    }
    Ok(n as usize)
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        // A run manifest embeds the config under `[config]`.
        let table = match value.get("config") {
            Some(toml::Value::Table(t)) if value.contains_key("run") => t.clone(),
            _ => value,
        };
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config or manifest file. A relative dataset path is resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        if cfg.dataset.path.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.dataset.path = dir.join(&cfg.dataset.path);
            }
        }
        Ok(cfg)
    }

    /// Resolves a relative dataset path against `dir`. The binary uses the
    /// directory named by [`DATA_DIR_ENV`] when no config file is given.
    pub fn with_data_dir(mut self, dir: &Path) -> Self {
        if self.dataset.path.is_relative() {
            self.dataset.path = dir.join(&self.dataset.path);
        }
        self
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.format()?;
        self.load_options()?;
        self.geometry()?;
        self.split_policy()?;
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test fraction must lie in (0, 1), got {}",
                self.split.test_fraction
            )));
        }
        if self.model.layers.is_empty() || self.model.layers.contains(&0) {
            return Err(Error::Config("model.layers must list positive widths".into()));
        }
        self.pretrain_config()?;
        self.finetune_config().validate()?;
        if !(self.pipeline.noise_sigma >= 0.0) || !self.pipeline.noise_sigma.is_finite() {
            return Err(Error::Config(format!(
                "noise sigma must be >= 0, got {}",
                self.pipeline.noise_sigma
            )));
        }
        if !(self.pipeline.smoothing >= 0.0) || !self.pipeline.smoothing.is_finite() {
            return Err(Error::Config("smoothing must be >= 0".into()));
        }
        if self.sweep.depths.contains(&0) || self.sweep.widths.contains(&0) {
            return Err(Error::Config("sweep grids must hold positive values".into()));
        }
        Ok(())
    }

    pub fn format(&self) -> Result<DatasetFormat> {
        self.dataset.format.parse()
    }

    pub fn load_options(&self) -> Result<LoadOptions> {
        let sensor: DaphnetSensor = self.dataset.sensor.parse()?;
        if !(self.dataset.saturation > 0.0) {
            return Err(Error::Config("saturation must be positive".into()));
        }
        Ok(LoadOptions {
            saturation: self.dataset.saturation,
            strict: self.dataset.strict,
            daphnet_sensor: sensor,
            skoda: SkodaLayout {
                node: self.dataset.node,
                ..SkodaLayout::default()
            },
            ..LoadOptions::default()
        })
    }

    pub fn geometry(&self) -> Result<Geometry> {
        let format = self.format()?;
        let hz = self.dataset.sampling_hz.unwrap_or(format.sampling_hz());
        if !(hz > 0.0) || !hz.is_finite() {
            return Err(Error::Config(format!("sampling rate must be positive, got {hz}")));
        }
        let seconds = if self.window.seconds == 0.0 {
            match format {
                DatasetFormat::Wisdm => 10.0,
                DatasetFormat::Daphnet | DatasetFormat::Skoda => 4.0,
            }
        } else {
            self.window.seconds
        };
        let n = samples_for(seconds, hz, "window")?;
        if n % 2 != 0 {
            return Err(Error::Config(format!(
                "window of {seconds} s at {hz} Hz gives N = {n}, which is odd"
            )));
        }
        let stride = if self.window.stride_seconds == 0.0 {
            n
        } else {
            samples_for(self.window.stride_seconds, hz, "stride")?
        };
        Ok(Geometry {
            n,
            stride,
            sampling_hz: hz,
        })
    }

    pub fn split_policy(&self) -> Result<SplitPolicy> {
        self.split.policy.parse()
    }

    pub fn split_seed(&self) -> u64 {
        self.split.seed.unwrap_or_else(|| derive_seed(self.seed, stream::SPLIT))
    }

    pub fn noise_seed(&self) -> u64 {
        derive_seed(self.seed, stream::NOISE)
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, stream::INIT)
    }

    pub fn sweep_seed(&self) -> u64 {
        derive_seed(self.seed, stream::SWEEP)
    }

    pub fn pretrain_config(&self) -> Result<PretrainConfig> {
        Ok(PretrainConfig {
            first: self.model.grbm.to_train(0)?,
            rest: self.model.brbm.to_train(0)?,
            seed: derive_seed(self.seed, stream::PRETRAIN),
        })
    }

    pub fn finetune_config(&self) -> FineTuneConfig {
        let f = &self.model.finetune;
        FineTuneConfig {
            learning_rate: f.learning_rate,
            epochs: f.epochs,
            batch_size: f.batch_size,
            seed: derive_seed(self.seed, stream::FINETUNE),
            patience: f.patience,
        }
    }
}
