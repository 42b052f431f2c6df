//! Pretraining configuration: line-based `key = value` text, `#` comments.
//! Every key is required and unknown keys are errors, so a config file is
//! always a complete, honest record of a run.

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::path::Path;

/// Name of the environment variable that overrides the config seed.
pub const SEED_ENV_VAR: &str = "LDBN_SEED";

const KEYS: [&str; 8] = [
    "seed",
    "frames",
    "val_frames",
    "max_epochs",
    "batch_size",
    "learning_rate",
    "momentum",
    "target_accuracy",
];

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    /// Seeds the model init, the data streams and the epoch shuffles.
    pub seed: u64,
    /// Training frames, rendered from the source scenario at this seed.
    pub frames: usize,
    /// Validation frames, rendered from the source scenario at seed + 1.
    pub val_frames: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    /// Validation accuracy that ends training early.
    pub target_accuracy: f32,
}

impl PretrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut seen: HashMap<&str, String> = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::validation(format!(
                    "config line {}: expected `key = value`, got {raw:?}",
                    lineno + 1
                ))
            })?;
            let key = key.trim();
            let value = value.trim();
            let Some(&canonical) = KEYS.iter().find(|&&k| k == key) else {
                return Err(Error::validation(format!(
                    "config line {}: unknown key {key:?} (expected one of {})",
                    lineno + 1,
                    KEYS.join(", ")
                )));
            };
            if seen.insert(canonical, value.to_string()).is_some() {
                return Err(Error::validation(format!(
                    "config line {}: duplicate key {key:?}",
                    lineno + 1
                )));
            }
        }
        if let Some(missing) = KEYS.iter().find(|&&k| !seen.contains_key(k)) {
            return Err(Error::validation(format!(
                "config is missing required key {missing:?}"
            )));
        }
        fn get<T: std::str::FromStr>(seen: &HashMap<&str, String>, key: &str) -> Result<T> {
            seen[key].parse().map_err(|_| {
                Error::validation(format!("config key {key:?}: cannot parse {:?}", seen[key]))
            })
        }
        let cfg = Self {
            seed: get(&seen, "seed")?,
            frames: get(&seen, "frames")?,
            val_frames: get(&seen, "val_frames")?,
            max_epochs: get(&seen, "max_epochs")?,
            batch_size: get(&seen, "batch_size")?,
            learning_rate: get(&seen, "learning_rate")?,
            momentum: get(&seen, "momentum")?,
            target_accuracy: get(&seen, "target_accuracy")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.val_frames == 0 {
            return Err(Error::validation("frames and val_frames must be positive"));
        }
        if self.batch_size == 0 || self.batch_size > self.frames {
            return Err(Error::validation(format!(
                "batch_size {} must lie in [1, frames]",
                self.batch_size
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::validation("max_epochs must be positive"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::validation(format!(
                "learning_rate {} must be finite and positive",
                self.learning_rate
            )));
        }
        if !self.momentum.is_finite() || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::validation(format!(
                "momentum {} must lie in [0, 1)",
                self.momentum
            )));
        }
        if !self.target_accuracy.is_finite() || !(0.0..=1.0).contains(&self.target_accuracy) {
            return Err(Error::validation(format!(
                "target_accuracy {} must lie in [0, 1]",
                self.target_accuracy
            )));
        }
        Ok(())
    }

    /// Applies the `LDBN_SEED` override if set. Returns the seed actually
    /// in effect.
    pub fn apply_env_seed(&mut self) -> Result<u64> {
        if let Ok(raw) = std::env::var(SEED_ENV_VAR) {
            self.seed = raw.parse().map_err(|_| {
                Error::validation(format!("{SEED_ENV_VAR}={raw:?} is not a valid u64 seed"))
            })?;
        }
        Ok(self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "\
# reference pretraining recipe
seed = 7
frames = 64          # rendered on the fly
val_frames = 16
max_epochs = 3
batch_size = 8
learning_rate = 0.05
momentum = 0.9
target_accuracy = 0.9
";

    #[test]
    fn parses_a_complete_config() {
        let c = PretrainConfig::parse(GOOD).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.frames, 64);
        assert_eq!(c.batch_size, 8);
        assert!((c.learning_rate - 0.05).abs() < 1e-9);
    }

    #[test]
    fn missing_key_is_named() {
        let text = GOOD.replace("momentum = 0.9\n", "");
        let err = PretrainConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("momentum"), "{err}");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = format!("{GOOD}wormhole = 3\n");
        let err = PretrainConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("wormhole"), "{err}");
    }

    #[test]
    fn duplicate_and_unparseable_keys_are_rejected() {
        let dup = format!("{GOOD}seed = 8\n");
        assert!(PretrainConfig::parse(&dup).is_err());
        let bad = GOOD.replace("seed = 7", "seed = seven");
        let err = PretrainConfig::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
    }

    #[test]
    fn out_of_range_values_fail_validation() {
        let zero_epochs = GOOD.replace("max_epochs = 3", "max_epochs = 0");
        assert!(PretrainConfig::parse(&zero_epochs).is_err());
        let neg_lr = GOOD.replace("learning_rate = 0.05", "learning_rate = -1");
        assert!(PretrainConfig::parse(&neg_lr).is_err());
        let big_bs = GOOD.replace("batch_size = 8", "batch_size = 100");
        assert!(PretrainConfig::parse(&big_bs).is_err());
    }
}
