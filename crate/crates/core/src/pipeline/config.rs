//! Pipeline configuration: one TOML tree, every key overridable from the
//! command line by its dotted path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clients::mock::Corruption;
use crate::clients::{ClientConfig, IMAGE_API_KEY_ENV, OCR_API_KEY_ENV, TEXT_API_KEY_ENV, VERIFIER_API_KEY_ENV};
use crate::diffusion::SamplerConfig;
use crate::experiments::{PretrainConfig, TaskConfig, TrainConfig};
use crate::filter::DEFAULT_THRESHOLD;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientsConfig {
    pub text: ClientConfig,
    pub image: ClientConfig,
    pub verifier: ClientConfig,
    pub ocr: ClientConfig,
}

impl Default for ClientsConfig {
    fn default() -> Self {
        let mock = |env: &str| ClientConfig {
            mock: true,
            ..ClientConfig::with_env(env)
        };
        Self {
            text: mock(TEXT_API_KEY_ENV),
            image: mock(IMAGE_API_KEY_ENV),
            verifier: mock(VERIFIER_API_KEY_ENV),
            ocr: mock(OCR_API_KEY_ENV),
        }
    }
}

/// Knobs for the offline stand-ins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    /// Share of image calls that inject a corruption.
    pub corruption_rate: f64,
    pub corruption_kinds: Vec<Corruption>,
    /// Share of characters the mock OCR misreads.
    pub ocr_noise: f64,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            corruption_rate: 0.0,
            corruption_kinds: vec![Corruption::NoText, Corruption::DifferentBackground, Corruption::SameText],
            ocr_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Sampling seeds per prompt.
    pub n: usize,
    /// Built-in prompts generated when no prompt file exists.
    pub prompts: usize,
    /// Samples for the target-accuracy measurement.
    pub accuracy_samples: usize,
    pub replicas: usize,
    pub normalize: bool,
    pub sampler: SamplerConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n: 4,
            prompts: 100,
            accuracy_samples: 400,
            replicas: 1000,
            normalize: true,
            sampler: SamplerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Run directory holding pairs/, filtered/, train/, eval/, report/.
    pub root: PathBuf,
    pub seed: u64,
    pub count: usize,
    pub threshold: i64,
    pub workers: usize,
    pub misspell_rate: f64,
    /// Seed words; the built-in list is used when empty.
    pub words: Vec<String>,
    /// Background-request attempts before a record is marked failed.
    pub background_attempts: u32,
    pub clients: ClientsConfig,
    pub mock: MockConfig,
    pub task: TaskConfig,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            root: PathBuf::from("run"),
            seed: 0,
            count: 300,
            threshold: DEFAULT_THRESHOLD,
            workers: 4,
            misspell_rate: 0.2,
            words: Vec::new(),
            background_attempts: 3,
            clients: ClientsConfig::default(),
            mock: MockConfig::default(),
            task: TaskConfig::default(),
            pretrain: PretrainConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid value for {key}: {message}")]
    Value { key: String, message: String },
}

/// A TOML scalar, array or inline table; anything else is taken as a bare
/// string so `--root=runs/a` needs no quoting.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(tree: &mut toml::Table, key: &str, value: toml::Value, known: &toml::Table) -> Result<(), ConfigError> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = tree;
    let mut shape = known;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        let Some(expected) = shape.get(*part) else {
            return Err(ConfigError::UnknownKey(key.to_string()));
        };
        if last {
            let value = match (expected, value) {
                // Integers are accepted where floats are expected.
                (toml::Value::Float(_), toml::Value::Integer(n)) => toml::Value::Float(n as f64),
                (toml::Value::String(_), v) if !v.is_str() => toml::Value::String(v.to_string()),
                (_, v) => v,
            };
            node.insert(part.to_string(), value);
            return Ok(());
        }
        let Some(next_shape) = expected.as_table() else {
            return Err(ConfigError::UnknownKey(key.to_string()));
        };
        shape = next_shape;
        node = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
    }
    Ok(())
}

impl PipelineConfig {
    /// The fully spelled-out tree of defaults; every overridable key.
    pub fn default_tree() -> toml::Table {
        toml::Table::try_from(PipelineConfig::default()).expect("defaults serialize")
    }

    /// Loads `path` (if any), then applies `(dotted key, raw value)`
    /// overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut tree = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Read {
                    path: p.display().to_string(),
                    message: e.to_string(),
                })?;
                text.parse::<toml::Table>().map_err(|e| ConfigError::Parse(e.to_string()))?
            }
            None => toml::Table::new(),
        };
        let known = Self::default_tree();
        for (key, raw) in overrides {
            set_path(&mut tree, key, parse_value(raw), &known)?;
        }
        let cfg: PipelineConfig = tree.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, message: &str| {
            Err(ConfigError::Value {
                key: key.to_string(),
                message: message.to_string(),
            })
        };
        if self.count < 1 {
            return bad("count", "must be >= 1");
        }
        if self.eval.n < 1 {
            return bad("eval.n", "must be >= 1");
        }
        if !(self.misspell_rate > 0.0 && self.misspell_rate <= 1.0) {
            return bad("misspell_rate", "must lie in (0, 1]");
        }
        if self.train.steps < 1 {
            return bad("train.steps", "must be >= 1");
        }
        if !(self.train.lr > 0.0) {
            return bad("train.lr", "must be > 0");
        }
        if !(0.0..=1.0).contains(&self.mock.corruption_rate) {
            return bad("mock.corruption_rate", "must lie in [0, 1]");
        }
        if self.background_attempts < 1 {
            return bad("background_attempts", "must be >= 1");
        }
        if self.words.iter().any(|w| w.is_empty() || !w.chars().all(|c| crate::font::glyph(c).is_some())) {
            return bad("words", "words must be non-empty and use only A-Z and 0-9");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_roundtrip_through_toml() {
        let cfg = PipelineConfig::default();
        let back: PipelineConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.count, 300);
        assert_eq!(cfg.threshold, 70);
        assert_eq!(cfg.eval.n, 4);
    }

    #[test]
    fn dotted_overrides_apply() {
        let cfg = PipelineConfig::load(
            None,
            &ov(&[("train.lr", "0.01"), ("count", "12"), ("root", "runs/a"), ("mock.corruption_rate", "1"), ("clients.ocr.mock", "false")]),
        )
        .unwrap();
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.count, 12);
        assert_eq!(cfg.root, PathBuf::from("runs/a"));
        assert_eq!(cfg.mock.corruption_rate, 1.0);
        assert!(!cfg.clients.ocr.mock);
        assert!(cfg.clients.text.mock);
    }

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "seed = 9\ncount = 5\n[train]\nsteps = 7\n").unwrap();
        let cfg = PipelineConfig::load(Some(&p), &ov(&[("count", "6")])).unwrap();
        assert_eq!((cfg.seed, cfg.count, cfg.train.steps), (9, 6, 7));
        assert_eq!(cfg.train.batch_size, 16);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert_eq!(
            PipelineConfig::load(None, &ov(&[("train.nope", "1")])),
            Err(ConfigError::UnknownKey("train.nope".into()))
        );
        assert!(matches!(PipelineConfig::load(None, &ov(&[("count", "0")])), Err(ConfigError::Value { .. })));
        assert!(matches!(PipelineConfig::load(None, &ov(&[("count", "many")])), Err(ConfigError::Parse(_))));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "bogus = 1\n").unwrap();
        assert!(matches!(PipelineConfig::load(Some(&p), &[]), Err(ConfigError::Parse(_))));
    }
}
