use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::MixupPolicy;
use crate::error::{Error, Result};
use crate::evaluation::Aggregation;
use crate::features::{FeatureConfig, LogMelTensor, FEATURE_CHANNELS};
use crate::fsutil;
use crate::nn::{NetworkSpec, OptimizerConfig};

pub const CONFIG_VERSION: u32 = 1;
pub const DEFAULT_FOLDS: usize = 4;

/// Which feature channels feed the network.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    /// Left, right and mean stacked.
    #[default]
    Multi,
    Left,
    Right,
    Mean,
}

impl ChannelMode {
    pub const ALL: [ChannelMode; 4] = [
        ChannelMode::Multi,
        ChannelMode::Left,
        ChannelMode::Right,
        ChannelMode::Mean,
    ];

    pub fn channels(self) -> usize {
        match self {
            ChannelMode::Multi => FEATURE_CHANNELS,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelMode::Multi => "multi",
            ChannelMode::Left => "left",
            ChannelMode::Right => "right",
            ChannelMode::Mean => "mean",
        }
    }

    /// Table label such as `Multi-channel` or `Single-channel (mean)`.
    pub fn label(self) -> String {
        match self {
            ChannelMode::Multi => "Multi-channel".into(),
            single => format!("Single-channel ({})", single.name()),
        }
    }

    /// Keeps the channels this mode uses from a left/right/mean tensor.
    pub fn select(self, tensor: &LogMelTensor<f32>) -> Result<LogMelTensor<f32>> {
        let [c, m, t] = tensor.shape();
        if c != FEATURE_CHANNELS {
            return Err(Error::shape("clip features", FEATURE_CHANNELS, c));
        }
        let idx = match self {
            ChannelMode::Multi => return Ok(tensor.clone()),
            ChannelMode::Left => 0,
            ChannelMode::Right => 1,
            ChannelMode::Mean => 2,
        };
        LogMelTensor::new([1, m, t], tensor.channel(idx).to_vec())
    }
}

impl fmt::Display for ChannelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ChannelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown channel mode {s:?}; expected multi, left, right or mean"
                ))
            })
    }
}

fn default_network() -> String {
    "vgg_style".into()
}
fn default_batch() -> usize {
    16
}
fn default_epochs() -> usize {
    40
}
fn default_eval_every() -> usize {
    1
}

/// Everything that determines a training run. Stored as TOML:
///
/// ```toml
/// version = 1
/// network = "vgg_style"
/// channel_mode = "multi"
/// epochs = 40
///
/// [optimizer]
/// learning_rate = 0.01
///
/// [mixup]
/// mode = "fixed"
/// alpha = 0.5
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub version: u32,
    #[serde(default = "default_network")]
    pub network: String,
    #[serde(default)]
    pub channel_mode: ChannelMode,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Number of generated folds; defaults to 4. Exclusive with `fold_plan`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub folds: Option<usize>,
    /// External plan file, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold_plan: Option<PathBuf>,
    #[serde(default)]
    pub aggregation: Aggregation,
    /// Validate every n-th epoch; the final epoch is always validated.
    /// Zero validates only the final epoch.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub mixup: MixupPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            network: default_network(),
            channel_mode: ChannelMode::default(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            seed: 0,
            folds: None,
            fold_plan: None,
            aggregation: Aggregation::default(),
            eval_every: default_eval_every(),
            features: FeatureConfig::default(),
            optimizer: OptimizerConfig::default(),
            mixup: MixupPolicy::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config; a relative `fold_plan` is resolved
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&fsutil::read_to_string(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let (Some(plan), Some(dir)) = (cfg.fold_plan.as_mut(), path.parent()) {
            if plan.is_relative() {
                *plan = dir.join(&*plan);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            ));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !self.mixup.is_off() && self.batch_size < 2 {
            return bad("batch_size must be at least 2 when mixup is on".into());
        }
        if self.folds.is_some() && self.fold_plan.is_some() {
            return bad("`folds` and `fold_plan` are mutually exclusive".into());
        }
        if self.folds == Some(0) {
            return bad("folds must be at least 1".into());
        }
        self.features.validate()?;
        self.optimizer.validate()?;
        self.mixup.validate()?;
        self.network_spec()?.shape_check()?;
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.folds.unwrap_or(DEFAULT_FOLDS)
    }

    /// `(channels, n_mels, patch_frames)`.
    pub fn input_shape(&self) -> [usize; 3] {
        [
            self.channel_mode.channels(),
            self.features.n_mels,
            self.features.patch_frames,
        ]
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        NetworkSpec::preset(
            &self.network,
            self.input_shape(),
            crate::audio_io::NUM_CLASSES,
        )
    }

    /// The policy the training loop applies. A fixed ratio of 0 is the
    /// "no mixup" setting and runs exactly like `off`.
    pub fn effective_mixup(&self) -> MixupPolicy {
        match self.mixup {
            MixupPolicy::Fixed { alpha: 0.0 } => MixupPolicy::Off,
            other => other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LrSchedule;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = TrainConfig::from_toml("version = 1\n").unwrap();
        assert_eq!(cfg, TrainConfig::default());
        assert_eq!(cfg.optimizer.weight_decay, 0.002);
        assert_eq!(cfg.k(), 4);
        assert_eq!(cfg.input_shape(), [3, 128, 128]);
    }

    #[test]
    fn round_trip_through_toml() {
        let cfg = TrainConfig {
            channel_mode: ChannelMode::Left,
            network: "xception_style".into(),
            folds: Some(2),
            mixup: MixupPolicy::Fixed { alpha: 0.2 },
            aggregation: Aggregation::Median,
            optimizer: OptimizerConfig {
                lr_schedule: LrSchedule::Constant,
                ..Default::default()
            },
            ..Default::default()
        };
        let text = cfg.to_toml();
        assert_eq!(TrainConfig::from_toml(&text).unwrap(), cfg);
        assert!(text.contains("alpha = 0.2"));
    }

    #[test]
    fn single_channel_input_shape() {
        let cfg = TrainConfig {
            channel_mode: ChannelMode::Left,
            ..Default::default()
        };
        assert_eq!(cfg.input_shape(), [1, 128, 128]);
        assert_eq!(cfg.network_spec().unwrap().input_shape, [1, 128, 128]);
    }

    #[test]
    fn rejections() {
        for text in [
            "version = 2",
            "version = 1\nepochs = 0",
            "version = 1\nbatch_size = 1\n[mixup]\nmode = \"fixed\"\nalpha = 0.5",
            "version = 1\nfolds = 2\nfold_plan = \"p.tsv\"",
            "version = 1\nnetwork = \"resnet\"",
            "version = 1\nlearning_rate = 0.1",
            "version = 1\n[optimizer]\nlearning_rate = 0.0",
            "version = 1\n[mixup]\nmode = \"fixed\"\nalpha = 1.5",
            "version = 1\nchannel_mode = \"stereo\"",
        ] {
            let err = TrainConfig::from_toml(text).unwrap_err();
            assert_eq!(err.kind(), crate::error::ErrorKind::Usage, "{text}: {err}");
        }
    }

    #[test]
    fn zero_ratio_runs_as_off() {
        let cfg = TrainConfig {
            mixup: MixupPolicy::Fixed { alpha: 0.0 },
            ..Default::default()
        };
        assert_eq!(cfg.effective_mixup(), MixupPolicy::Off);
        let cfg = TrainConfig {
            mixup: MixupPolicy::Fixed { alpha: 0.5 },
            ..Default::default()
        };
        assert_eq!(cfg.effective_mixup(), cfg.mixup);
    }

    #[test]
    fn channel_selection() {
        let t = LogMelTensor::new([3, 2, 2], (0..12).map(|v| v as f32).collect()).unwrap();
        assert_eq!(ChannelMode::Multi.select(&t).unwrap(), t);
        assert_eq!(
            ChannelMode::Right.select(&t).unwrap().as_slice(),
            &[4.0, 5.0, 6.0, 7.0]
        );
        assert_eq!(ChannelMode::Mean.select(&t).unwrap().shape(), [1, 2, 2]);
    }
}
