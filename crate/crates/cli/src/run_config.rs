//! Flat `key=value` run configuration shared by every subcommand.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mpvit_core::model::ModelConfig;
use mpvit_core::train::TrainConfig;

use crate::CliError;

/// Keys that are neither training nor model settings.
const OTHER_KEYS: &[&str] = &[
    "manifest",
    "out",
    "checkpoint",
    "split",
    "threshold",
    "n_train",
    "n_val",
    "n_test",
    "ratio",
    "drop_prob",
];

/// Raw settings from a config file; a repeated key keeps its last value.
#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    base_dir: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("config line {}: expected key=value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !is_known(k) {
                return Err(CliError::usage(format!("config line {}: unknown key `{k}`", n + 1)));
            }
            values.insert(k.to_string(), v.to_string());
        }
        Ok(RunConfig {
            values,
            base_dir: base_dir.to_path_buf(),
        })
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new("")))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn parsed<V: std::str::FromStr>(&self, key: &str) -> Result<Option<V>, CliError> {
        self.get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| CliError::usage(format!("bad value `{v}` for `{key}`")))
            })
            .transpose()
    }

    /// A path setting, resolved against the config file's directory.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(|p| self.base_dir.join(p))
    }

    /// Training settings from the file on top of the defaults.
    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let mut cfg = TrainConfig::default();
        for (k, v) in self.values.iter().filter(|(k, _)| is_train_key(k)) {
            cfg.set(k, v).map_err(CliError::Usage)?;
        }
        Ok(cfg)
    }

    /// Applies model-architecture overrides from the file to `model`.
    pub fn apply_model(&self, model: &mut ModelConfig) -> Result<(), CliError> {
        for (k, v) in self.values.iter().filter(|(k, _)| is_model_key(k)) {
            model.set(k, v).map_err(CliError::Usage)?;
        }
        Ok(())
    }
}

// `set` answers Ok(false) only for keys it does not own
fn is_train_key(key: &str) -> bool {
    !matches!(TrainConfig::default().set(key, ""), Ok(false))
}

fn is_model_key(key: &str) -> bool {
    !matches!(ModelConfig::desk_tiny().set(key, ""), Ok(false))
}

fn is_known(key: &str) -> bool {
    OTHER_KEYS.contains(&key) || is_train_key(key) || is_model_key(key)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_and_unknown_keys() {
        let base = Path::new("/cfg");
        let c = RunConfig::parse("# comment\nlr = 0.001\nepochs=2\ndepth=2\nmanifest=data/m.tsv\n", base).unwrap();
        let t = c.train_config().unwrap();
        assert_eq!((t.lr, t.epochs), (0.001, 2));
        let mut m = ModelConfig::desk_tiny();
        c.apply_model(&mut m).unwrap();
        assert_eq!(m.depth, 2);
        assert_eq!(c.path("manifest").unwrap(), Path::new("/cfg/data/m.tsv"));
        assert!(RunConfig::parse("learning_rate=1\n", base).is_err());
        assert!(RunConfig::parse("lr\n", base).is_err());
    }
}
