//! `key = value` run configuration with flag overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use hrne::encoder::{AttentionFlags, EncoderConfig, EncoderVariant};
use hrne::eval::Smoothing;
use hrne::model::ModelConfig;
use hrne::recurrent::InitConfig;
use hrne::training::{AdamConfig, TrainConfig};

pub const KEYS: &[&str] = &[
    "data",
    "manifest",
    "val_manifest",
    "out",
    "variant",
    "hidden",
    "hidden1",
    "hidden2",
    "dec_hidden",
    "embed",
    "embed_dim",
    "word_embed",
    "deep_dim",
    "chunk_len",
    "stride",
    "attention",
    "att_frames",
    "att_chunks",
    "att_decoder",
    "input_dim",
    "max_frames",
    "max_len",
    "init_scale",
    "forget_bias",
    "batch_size",
    "max_epochs",
    "dropout",
    "patience",
    "seed",
    "lr",
    "beta1",
    "beta2",
    "adam_eps",
    "clip_norm",
    "min_count",
    "bleu_smoothing",
];

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    Syntax { origin: String, line: usize, text: String },
    UnknownKey { origin: String, key: String },
    InvalidValue { key: String, value: String, expected: &'static str },
    MissingKey(&'static str),
    Invalid(String),
    Unreadable { path: PathBuf, reason: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Syntax { origin, line, text } => {
                write!(f, "{origin}:{line}: expected `key = value`, found {text:?}")
            }
            ConfigError::UnknownKey { origin, key } => write!(f, "{origin}: unknown config key `{key}`"),
            ConfigError::InvalidValue { key, value, expected } => {
                write!(f, "invalid value {value:?} for `{key}`: expected {expected}")
            }
            ConfigError::MissingKey(key) => write!(f, "missing required config key `{key}`"),
            ConfigError::Invalid(msg) => write!(f, "invalid configuration: {msg}"),
            ConfigError::Unreadable { path, reason } => write!(f, "cannot read config {}: {reason}", path.display()),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Raw key/value settings; later insertions override earlier ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::default();
        for (i, line) in text.lines().enumerate() {
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                origin: origin.to_string(),
                line: i + 1,
                text: line.to_string(),
            })?;
            raw.set(key.trim(), value.trim(), origin)?;
        }
        Ok(raw)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: &str, origin: &str) -> Result<(), ConfigError> {
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey {
                origin: origin.to_string(),
                key: key.to_string(),
            });
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// `KEY=VALUE` as given to `--set`.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (k, v) = pair.split_once('=').ok_or_else(|| ConfigError::Syntax {
            origin: "--set".into(),
            line: 1,
            text: pair.to_string(),
        })?;
        self.set(k.trim(), v.trim(), "--set")
    }

    pub fn merge(&mut self, other: RawConfig) {
        self.values.extend(other.values);
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn typed<T: std::str::FromStr>(&self, key: &str, expected: &'static str) -> Result<Option<T>, ConfigError> {
        self.get(key)
            .map(|v| {
                v.parse().map_err(|_| ConfigError::InvalidValue {
                    key: key.to_string(),
                    value: v.to_string(),
                    expected,
                })
            })
            .transpose()
    }

    fn count(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        self.typed(key, "a non-negative integer")
    }

    fn real(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.typed(key, "a number")
    }

    fn flag(&self, key: &str) -> Result<Option<bool>, ConfigError> {
        self.typed(key, "true or false")
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }
}

/// Fully defaulted settings for a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    /// Explicit feature dimension; otherwise taken from the data.
    pub input_dim: Option<usize>,
    pub train: TrainConfig,
    pub min_count: usize,
    pub data: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        let hidden = raw.count("hidden")?.unwrap_or(1024);
        let embed = raw.count("embed")?.unwrap_or(hidden / 2);
        let variant = match raw.get("variant") {
            None => EncoderVariant::Hrne,
            Some(v) => v.parse().map_err(|_| ConfigError::InvalidValue {
                key: "variant".into(),
                value: v.into(),
                expected: "hrne, stacked or meanpool",
            })?,
        };
        let all = raw.flag("attention")?.unwrap_or(false);
        let attention = AttentionFlags {
            frames: raw.flag("att_frames")?.unwrap_or(all),
            chunks: raw.flag("att_chunks")?.unwrap_or(all),
            decoder: raw.flag("att_decoder")?.unwrap_or(all),
        };
        let chunk_len = raw.count("chunk_len")?.unwrap_or(8);
        let defaults = ModelConfig::default();
        let model = ModelConfig {
            encoder: EncoderConfig {
                chunk_len,
                stride: raw.count("stride")?.unwrap_or(chunk_len),
                input_dim: raw.count("input_dim")?.unwrap_or(1),
                embed_dim: raw.count("embed_dim")?.unwrap_or(embed),
                hidden1: raw.count("hidden1")?.unwrap_or(hidden),
                hidden2: raw.count("hidden2")?.unwrap_or(hidden),
                attention,
                variant,
                levels: 2,
            },
            vocab_size: defaults.vocab_size,
            word_embed: raw.count("word_embed")?.unwrap_or(embed),
            dec_hidden: raw.count("dec_hidden")?.unwrap_or(hidden),
            deep_dim: raw.count("deep_dim")?.unwrap_or(embed),
            init: InitConfig {
                scale: raw.real("init_scale")?.unwrap_or(defaults.init.scale),
                forget_bias: raw.real("forget_bias")?.unwrap_or(defaults.init.forget_bias),
            },
            max_len: raw.count("max_len")?.unwrap_or(defaults.max_len),
            max_frames: raw.count("max_frames")?.unwrap_or(defaults.max_frames),
        };
        let td = TrainConfig::default();
        let clip_norm = match raw.get("clip_norm") {
            None => td.clip_norm,
            Some("none" | "off") => None,
            Some(_) => Some(raw.typed("clip_norm", "a positive number, `none` or `off`")?.unwrap_or(5.0)),
        };
        let train = TrainConfig {
            batch_size: raw.count("batch_size")?.unwrap_or(td.batch_size),
            max_epochs: raw.count("max_epochs")?.unwrap_or(td.max_epochs),
            dropout: raw.real("dropout")?.unwrap_or(td.dropout),
            patience: raw.count("patience")?.unwrap_or(td.patience),
            seed: raw.typed("seed", "a non-negative integer")?.unwrap_or(td.seed),
            adam: AdamConfig {
                lr: raw.real("lr")?.unwrap_or(td.adam.lr),
                beta1: raw.real("beta1")?.unwrap_or(td.adam.beta1),
                beta2: raw.real("beta2")?.unwrap_or(td.adam.beta2),
                eps: raw.real("adam_eps")?.unwrap_or(td.adam.eps),
            },
            clip_norm,
            bleu_smoothing: if raw.flag("bleu_smoothing")?.unwrap_or(false) {
                Smoothing::AddOne
            } else {
                Smoothing::None
            },
        };
        let cfg = RunConfig {
            model,
            input_dim: raw.count("input_dim")?,
            train,
            min_count: raw.count("min_count")?.unwrap_or(1),
            data: raw.path("data"),
            manifest: raw.path("manifest"),
            val_manifest: raw.path("val_manifest"),
            out: raw.path("out"),
        };
        cfg.model.encoder.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if cfg.model.max_len == 0 {
            return Err(ConfigError::Invalid("max_len must be at least 1".into()));
        }
        Ok(cfg)
    }

    pub fn require(value: &Option<PathBuf>, key: &'static str) -> Result<PathBuf, ConfigError> {
        value.clone().ok_or(ConfigError::MissingKey(key))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build(text: &str) -> Result<RunConfig, ConfigError> {
        RunConfig::from_raw(&RawConfig::parse(text, "test")?)
    }

    #[test]
    fn empty_config_gives_published_defaults() {
        let cfg = build("").unwrap();
        let e = &cfg.model.encoder;
        assert_eq!((e.hidden1, e.hidden2, cfg.model.dec_hidden), (1024, 1024, 1024));
        assert_eq!((e.embed_dim, cfg.model.word_embed), (512, 512));
        assert_eq!((e.chunk_len, e.stride), (8, 8));
        assert_eq!(cfg.train.batch_size, 128);
        assert_eq!(cfg.train.adam.lr, 2e-4);
        assert_eq!(cfg.train.dropout, 0.5);
        assert_eq!(cfg.train.max_epochs, 200);
        assert_eq!(e.variant, EncoderVariant::Hrne);
    }

    #[test]
    fn comments_and_whitespace() {
        let cfg = build("# model\nhidden = 64   # small\n\n  chunk_len=4\n").unwrap();
        assert_eq!(cfg.model.encoder.hidden1, 64);
        assert_eq!(cfg.model.encoder.embed_dim, 32);
        assert_eq!(cfg.model.encoder.stride, 4);
    }

    #[test]
    fn distinct_errors() {
        assert!(matches!(build("hidden = banana"), Err(ConfigError::InvalidValue { .. })));
        assert!(matches!(build("colour = red"), Err(ConfigError::UnknownKey { .. })));
        assert!(matches!(build("just words"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(build("dropout = 1.0"), Err(ConfigError::Invalid(_))));
        assert!(matches!(build("variant = lstm9"), Err(ConfigError::InvalidValue { .. })));
        let cfg = build("").unwrap();
        assert_eq!(RunConfig::require(&cfg.data, "data"), Err(ConfigError::MissingKey("data")));
    }

    #[test]
    fn later_settings_win() {
        let mut raw = RawConfig::parse("hidden = 1024", "file").unwrap();
        let mut flags = RawConfig::default();
        flags.set("hidden", "512", "--hidden").unwrap();
        raw.merge(flags);
        assert_eq!(RunConfig::from_raw(&raw).unwrap().model.encoder.hidden1, 512);
    }

    #[test]
    fn attention_shorthand_and_clip() {
        let cfg = build("attention = true\natt_chunks = false\nclip_norm = none").unwrap();
        let a = cfg.model.encoder.attention;
        assert!(a.frames && !a.chunks && a.decoder);
        assert_eq!(cfg.train.clip_norm, None);
        assert_eq!(build("clip_norm = 2.5").unwrap().train.clip_norm, Some(2.5));
    }
}
