//! Run configuration: one TOML document covering every module, built from a
//! named preset, an optional file and `key.path=value` overrides.
//!
//! ```toml
//! preset = "desk"          # optional; a --preset flag takes precedence
//! sample_rate = 8000
//!
//! [trainer]
//! batch_size = 4
//!
//! [trainer.generator_optimizer]
//! lr = 1e-3
//! ```

use std::path::Path;

use lipwave::critic::CriticConfig;
use lipwave::generator::GeneratorConfig;
use lipwave::grid::{samples_per_frame, PreprocessConfig, SplitMode};
use lipwave::io::read_text;
use lipwave::metrics::EvalConfig;
use lipwave::speech_encoder::LogMelEncoderConfig;
use lipwave::trainer::TrainConfig;
use lipwave::{Error, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

pub const PRESETS: [&str; 3] = ["full", "desk", "smoke"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub split_mode: SplitMode,
    pub split_seed: u64,
    /// Speaker assignment file, required in speaker-independent mode.
    pub assignment: Option<String>,
    pub preprocess: PreprocessConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            split_mode: SplitMode::SpeakerDependent,
            split_seed: 0,
            assignment: None,
            preprocess: PreprocessConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub sample_rate: u32,
    pub data: DataConfig,
    pub generator: GeneratorConfig,
    pub critic: CriticConfig,
    pub speech_encoder: LogMelEncoderConfig,
    pub trainer: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sample_rate: 50_000,
            data: DataConfig::default(),
            generator: GeneratorConfig::default(),
            critic: CriticConfig::default(),
            speech_encoder: LogMelEncoderConfig::default(),
            trainer: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::default()),
            "desk" => Ok(Self {
                sample_rate: 8000,
                generator: GeneratorConfig::desk(),
                critic: CriticConfig::desk(),
                ..Self::default()
            }),
            "smoke" => {
                let mut c = Self::preset("desk")?;
                c.trainer.generator_optimizer.lr = 1e-3;
                c.trainer.critic_optimizer.lr = 1e-3;
                c.trainer.batch_size = 4;
                c.trainer.mirror_augment = false;
                c.trainer.max_epochs = 200;
                c.trainer.patience = 200;
                Ok(c)
            }
            other => Err(Error::Config(format!("unknown preset {other:?} (expected one of {PRESETS:?})"))),
        }
    }

    /// Preset, then file, then overrides, then validation.
    pub fn resolve(preset: Option<&str>, file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut file_table = match file {
            Some(path) => toml::from_str::<Table>(&read_text(path)?)
                .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?,
            None => Table::new(),
        };
        let file_preset = match file_table.remove("preset") {
            Some(Value::String(s)) => Some(s),
            Some(other) => return Err(Error::Config(format!("preset must be a string, got {other}"))),
            None => None,
        };
        let name = preset.map(str::to_string).or(file_preset).unwrap_or_else(|| "full".into());
        let mut value = to_value(&Self::preset(&name)?)?;
        merge(&mut value, Value::Table(file_table));
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let config: Self = value.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        samples_per_frame(self.sample_rate).map_err(|e| Error::Config(e.to_string()))?;
        self.data.preprocess.validate()?;
        self.generator.validate()?;
        if self.generator.in_channels != self.data.preprocess.channels {
            return Err(Error::Config(format!(
                "generator.in_channels ({}) must equal data.preprocess.channels ({})",
                self.generator.in_channels, self.data.preprocess.channels
            )));
        }
        self.critic.validate()?;
        self.critic.clip_len(self.sample_rate)?;
        self.trainer.validate()?;
        if self.data.split_mode == SplitMode::SpeakerIndependent && self.data.assignment.is_none() {
            return Err(Error::Config("speaker-independent splits need data.assignment".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or_default()
    }
}

fn to_value(config: &RunConfig) -> Result<Value> {
    Value::try_from(config).map_err(|e| Error::Config(e.to_string()))
}

/// Recursively overlays `top` onto `base`.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Table(b), Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies `a.b.c=value`; the value is read as TOML and falls back to a bare string.
fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override key {path:?} is malformed")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let mut node = root;
    for (i, key) in keys.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {path:?}: {} is not a table", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            table.insert(key.to_string(), value);
            return Ok(());
        }
        node = table.entry(key.to_string()).or_insert_with(|| Value::Table(Table::new()));
    }
    unreachable!("override path has at least one key")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_roundtrip() {
        for name in PRESETS {
            let c = RunConfig::preset(name).unwrap();
            c.validate().unwrap();
            let back: RunConfig = toml::from_str(&c.to_toml().unwrap()).unwrap();
            assert_eq!(back, c);
        }
        assert!(RunConfig::preset("huge").is_err());
    }

    #[test]
    fn overrides_apply_in_order() {
        let sets = ["trainer.batch_size=2".to_string(), "trainer.generator_optimizer.lr=0.01".into(), "trainer.batch_size=3".into()];
        let c = RunConfig::resolve(Some("desk"), None, &sets).unwrap();
        assert_eq!(c.trainer.batch_size, 3);
        assert_eq!(c.trainer.generator_optimizer.lr, 0.01);
        assert_eq!(c.sample_rate, 8000);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::resolve(None, None, &["trainer.bach_size=2".into()]).is_err());
        assert!(RunConfig::resolve(None, None, &["colour=1".into()]).is_err());
        assert!(RunConfig::resolve(None, None, &["trainer".into()]).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[critic]\nkernal = 3\n").unwrap();
        let err = RunConfig::resolve(None, Some(&path), &[]).unwrap_err();
        assert!(err.to_string().contains("kernal"), "{err}");
    }

    #[test]
    fn file_preset_and_values_merge() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "preset = \"smoke\"\n[eval.recognizer]\ncommand = \"asr\"\n").unwrap();
        let c = RunConfig::resolve(None, Some(&path), &[]).unwrap();
        assert_eq!(c.trainer.batch_size, 4);
        assert_eq!(c.eval.recognizer.unwrap().command, "asr");
        let c = RunConfig::resolve(Some("desk"), Some(&path), &[]).unwrap();
        assert_eq!(c.trainer.batch_size, 8);
    }

    #[test]
    fn invalid_combinations_fail() {
        assert!(RunConfig::resolve(Some("desk"), None, &["sample_rate=8001".into()]).is_err());
        assert!(RunConfig::resolve(Some("desk"), None, &["trainer.patience=0".into()]).is_err());
        assert!(RunConfig::resolve(Some("desk"), None, &["data.split_mode=\"speaker_independent\"".into()]).is_err());
        assert!(RunConfig::resolve(Some("desk"), None, &["data.preprocess.channels=3".into()]).is_err());
    }
}
