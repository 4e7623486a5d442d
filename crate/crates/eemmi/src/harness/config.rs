//! Plain-text `key = value` configuration files with `#` comments.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::acoustic::TrainConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: lineno + 1,
                msg: "expected `key = value`".into(),
            })?;
            entries.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(KvConfig { entries })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| {
                Error::validation(format!("config key `{key}`: cannot parse `{v}`"))
            }),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| Error::validation(format!("missing config key `{key}`")))
    }

    /// Errors on any key outside the allowed set; catches typos early.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for k in self.entries.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::validation(format!("unknown config key `{k}`")));
            }
        }
        Ok(())
    }

    /// Sorted `key = value` lines, used when echoing configs to manifests.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

const TRAIN_KEYS: [&str; 12] = [
    "learning_rate",
    "clip_norm",
    "batch_size",
    "epochs",
    "valid_fraction",
    "seed",
    "shift_interval",
    "window_radius",
    "hidden",
    "lm_alpha",
    "lr_halve_patience",
    "stop_patience",
];

/// Training configuration from `key = value` text; the loss kind and the
/// train-LM kind stay on the command line.
pub fn parse_train_config(kv: &KvConfig) -> Result<TrainConfig> {
    kv.check_keys(&TRAIN_KEYS)?;
    let d = TrainConfig::default();
    let hidden = match kv.raw("hidden") {
        None => d.hidden.clone(),
        Some(text) => text
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::validation(format!("bad hidden size `{t}`")))
            })
            .collect::<Result<Vec<usize>>>()?,
    };
    let cfg = TrainConfig {
        learning_rate: kv.get_or("learning_rate", d.learning_rate)?,
        clip_norm: kv.get_or("clip_norm", d.clip_norm)?,
        batch_size: kv.get_or("batch_size", d.batch_size)?,
        epochs: kv.get_or("epochs", d.epochs)?,
        valid_fraction: kv.get_or("valid_fraction", d.valid_fraction)?,
        seed: kv.get_or("seed", d.seed)?,
        shift_interval: kv.get_or("shift_interval", d.shift_interval)?,
        window_radius: kv.get_or("window_radius", d.window_radius)?,
        hidden,
        lm_alpha: kv.get_or("lm_alpha", d.lm_alpha)?,
        lr_halve_patience: kv.get_or("lr_halve_patience", d.lr_halve_patience)?,
        stop_patience: kv.get_or("stop_patience", d.stop_patience)?,
        ..d
    };
    cfg.validate()?;
    Ok(cfg)
}
