//! Training configuration, loaded from TOML with dotted-key overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{AugmentConfig, Layout};
use crate::losses::LossWeights;
use crate::model::ModelConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid config value: {0}")]
    Invalid(String),
}

/// Loss terms and architecture pieces that can be switched off.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub drop_scene: bool,
    pub drop_cycle: bool,
    pub drop_align: bool,
    /// Replace the appearance encoder with one learned code per domain.
    pub drop_appearance_encoder: bool,
}

impl AblationFlags {
    pub const FULL: Self = Self {
        drop_scene: false,
        drop_cycle: false,
        drop_align: false,
        drop_appearance_encoder: false,
    };

    /// Zeroes the weights of dropped terms.
    pub fn apply_weights(&self, w: &LossWeights) -> LossWeights {
        let mut out = *w;
        if self.drop_scene {
            out.lambda_scene = 0.0;
        }
        if self.drop_cycle {
            out.lambda_cycle = 0.0;
        }
        if self.drop_align {
            out.lambda_align = 0.0;
        }
        out
    }

    pub fn apply_model(&self, m: &ModelConfig) -> ModelConfig {
        let mut out = *m;
        if self.drop_appearance_encoder {
            out.use_appearance_encoder = false;
        }
        out
    }

    /// Short name used for run directories and tables.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.drop_scene {
            parts.push("no_scene");
        }
        if self.drop_cycle {
            parts.push("no_cycle");
        }
        if self.drop_align {
            parts.push("no_align");
        }
        if self.drop_appearance_encoder {
            parts.push("no_appearance_encoder");
        }
        if parts.is_empty() {
            "full".to_string()
        } else {
            parts.join("+")
        }
    }

    /// The full model and each single removal.
    pub fn standard_variants() -> Vec<Self> {
        let f = Self::FULL;
        vec![
            f,
            Self { drop_scene: true, ..f },
            Self { drop_cycle: true, ..f },
            Self { drop_align: true, ..f },
            Self {
                drop_appearance_encoder: true,
                ..f
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub root: PathBuf,
    pub layout: Layout,
    /// Used only when the dataset has no manifest.
    pub split_ratios: [f64; 3],
    pub augment: AugmentConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: PathBuf::from("data"),
            layout: Layout::Synthetic,
            split_ratios: [0.8, 0.1, 0.1],
            augment: AugmentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 4,
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Write an epoch checkpoint every this many epochs.
    pub checkpoint_every: usize,
    /// Cap on optimizer steps per epoch; `None` runs the whole split.
    pub max_steps_per_epoch: Option<usize>,
    /// Continue from this checkpoint blob.
    pub resume: Option<PathBuf>,
    /// Continue from `out_dir/checkpoints/last.sasw` if it exists.
    pub auto_resume: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/train"),
            checkpoint_every: 1,
            max_steps_per_epoch: None,
            resume: None,
            auto_resume: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub optim: OptimConfig,
    pub ablation: AblationFlags,
    pub run: RunConfig,
}

impl TrainConfig {
    /// 128x64 synthetic frames, 30 epochs.
    pub fn desk_scale() -> Self {
        let mut c = Self::default();
        c.optim.epochs = 30;
        c
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let o = &self.optim;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return bad(format!("optim.lr must be positive, got {}", o.lr));
        }
        if o.batch_size == 0 {
            return bad("optim.batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return bad("optim.beta1 and optim.beta2 must be in [0, 1)".into());
        }
        if o.eps.is_nan() || o.eps <= 0.0 {
            return bad("optim.eps must be positive".into());
        }
        if self.run.checkpoint_every == 0 {
            return bad("run.checkpoint_every must be at least 1".into());
        }
        self.loss.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.effective_model()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Loss weights after ablation.
    pub fn effective_weights(&self) -> LossWeights {
        self.ablation.apply_weights(&self.loss)
    }

    /// Model configuration after ablation.
    pub fn effective_model(&self) -> ModelConfig {
        self.ablation.apply_model(&self.model)
    }

    /// Sets `key` (for example `optim.lr`) from a TOML literal; bare words
    /// are taken as strings.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let mut root = toml::Table::try_from(&*self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let parsed = parse_literal(value);
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        let (last, path) = parts.split_last().expect("non-empty");
        let mut table = &mut root;
        for p in path {
            table = match table.get_mut(*p) {
                Some(toml::Value::Table(t)) => t,
                _ => return Err(ConfigError::UnknownKey(key.to_string())),
            };
        }
        table.insert(last.to_string(), parsed);
        *self = toml::Value::Table(root).try_into().map_err(|e: toml::de::Error| {
            let msg = e.to_string();
            if msg.contains("unknown field") {
                ConfigError::UnknownKey(key.to_string())
            } else {
                ConfigError::Invalid(format!("{key} = {value}: {}", msg.trim()))
            }
        })?;
        Ok(())
    }
}

fn parse_literal(value: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!(c.optim.epochs, 200);
        assert_eq!(c.optim.batch_size, 4);
        assert_eq!(c.optim.lr, 1e-4);
        assert_eq!((c.optim.beta1, c.optim.beta2), (0.5, 0.999));
        c.validate().unwrap();
    }

    #[test]
    fn toml_roundtrip_and_sections() {
        let c = TrainConfig::desk_scale();
        let text = c.to_toml_string();
        for section in ["[data]", "[model]", "[loss]", "[optim]", "[ablation]", "[run]"] {
            assert!(text.contains(section), "{section} missing from\n{text}");
        }
        assert_eq!(TrainConfig::from_toml_str(&text).unwrap(), c);
        let partial = TrainConfig::from_toml_str("[optim]\nlr = 0.001\n").unwrap();
        assert_eq!(partial.optim.lr, 1e-3);
        assert_eq!(partial.optim.batch_size, 4);
        assert!(TrainConfig::from_toml_str("[optim]\nlearning_rate = 1\n").is_err());
    }

    #[test]
    fn overrides() {
        let mut c = TrainConfig::default();
        c.apply_override("optim.lr", "2e-4").unwrap();
        c.apply_override("ablation.drop_align", "true").unwrap();
        c.apply_override("data.root", "some/dir").unwrap();
        c.apply_override("run.resume", "\"ck/last.sasw\"").unwrap();
        c.apply_override("data.augment.intensity_scale", "[0.8, 1.2]").unwrap();
        assert_eq!(c.optim.lr, 2e-4);
        assert!(c.ablation.drop_align);
        assert_eq!(c.data.root, PathBuf::from("some/dir"));
        assert_eq!(c.run.resume, Some(PathBuf::from("ck/last.sasw")));
        assert_eq!(c.data.augment.intensity_scale, Some((0.8, 1.2)));
        assert!(matches!(
            c.apply_override("optim.nope", "1"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            c.apply_override("nope.lr", "1"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(c.apply_override("optim.batch_size", "\"four\"").is_err());
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut c = TrainConfig::default();
        c.optim.lr = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.optim.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.loss.lambda_ncc = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn ablation_weights() {
        let w = LossWeights::default();
        let f = AblationFlags {
            drop_align: true,
            drop_scene: true,
            ..AblationFlags::FULL
        };
        let e = f.apply_weights(&w);
        assert_eq!((e.lambda_scene, e.lambda_cycle, e.lambda_align), (0.0, 0.5, 0.0));
        assert_eq!(e.lambda_ncc, w.lambda_ncc);
        assert_eq!(f.label(), "no_scene+no_align");
        let labels: Vec<String> = AblationFlags::standard_variants().iter().map(|v| v.label()).collect();
        assert_eq!(
            labels,
            ["full", "no_scene", "no_cycle", "no_align", "no_appearance_encoder"]
        );
    }
}
