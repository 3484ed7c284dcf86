//! Run configuration: `key=value` lines, `#` comments. Every key has a
//! default; a config file and then `--set` flags override it.

use std::collections::BTreeMap;
use std::path::Path;

use coldstart::eval::SyntheticWorldConfig;
use coldstart::model::{AblationMask, ModelConfig};
use coldstart::serving::WorkloadConfig;
use coldstart::train::TrainConfig;
use coldstart::Execution;

use crate::CliError;

const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("exec", "parallel"),
    ("learning_rate", "0.003"),
    ("batch_size", "512"),
    ("epsilon", "1e-8"),
    ("pretrain_epochs", "1"),
    ("finetune_epochs", "1"),
    ("max_steps", "none"),
    ("mask", "none"),
    ("ablation_masks", "drop_repr,drop_stats,drop_physical,drop_author,drop_product,drop_semantic,drop_h2,drop_h3"),
    ("semantic_k", "20"),
    ("neighbors_k", "20"),
    ("server.threads", "4"),
    ("bench.requests", "1000"),
    ("bench.candidates", "20"),
    ("bench.behaviors", "30"),
    ("model.video_dim", "32"),
    ("model.item_dim", "32"),
    ("model.author_dim", "16"),
    ("model.category_dim", "16"),
    ("model.token_dim", "16"),
    ("model.user_dim", "16"),
    ("model.user_numeric", "2"),
    ("model.attn_dim", "128"),
    ("model.hidden", "512,256,128"),
    ("model.max_behaviors", "50"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut values: BTreeMap<String, String> =
            DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        let world = SyntheticWorldConfig::default();
        for line in world.to_text().lines() {
            let (k, v) = line.split_once('=').expect("world config lines are key=value");
            if k != "seed" {
                values.insert(format!("world.{k}"), v.to_string());
            }
        }
        RunConfig { values }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
            for (n, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                cfg.set_pair(line).map_err(|e| CliError::Config(format!("{}:{}: {e}", p.display(), n + 1)))?;
            }
        }
        for o in overrides {
            cfg.set_pair(o).map_err(CliError::Config)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set_pair(&mut self, pair: &str) -> Result<(), String> {
        let (k, v) = pair.split_once('=').ok_or_else(|| format!("expected key=value, got `{pair}`"))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(format!("unknown config key `{key}`")),
        }
    }

    /// Parses every typed view once so bad values fail before any work.
    fn validate(&self) -> Result<(), CliError> {
        self.world()?;
        self.model()?.validate()?;
        self.train()?.validate()?;
        self.ablation_masks()?;
        self.workload()?;
        self.usize("semantic_k")?;
        self.usize("neighbors_k")?;
        self.usize("server.threads")?;
        Ok(())
    }

    pub fn snapshot(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("key has a default")
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        let v = self.raw(key);
        v.parse().map_err(|_| CliError::Config(format!("bad value `{v}` for `{key}`")))
    }

    pub fn usize(&self, key: &str) -> Result<usize, CliError> {
        self.parsed(key)
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.parsed("seed")
    }

    pub fn exec(&self) -> Result<Execution, CliError> {
        match self.raw("exec") {
            "parallel" => Ok(Execution::Parallel),
            "sequential" => Ok(Execution::Sequential),
            v => Err(CliError::Config(format!("exec must be parallel or sequential, got `{v}`"))),
        }
    }

    pub fn world(&self) -> Result<SyntheticWorldConfig, CliError> {
        let mut w = SyntheticWorldConfig { seed: self.seed()?, ..SyntheticWorldConfig::default() };
        for (k, v) in &self.values {
            if let Some(k) = k.strip_prefix("world.") {
                w.set(k, v)?;
            }
        }
        Ok(w)
    }

    pub fn model(&self) -> Result<ModelConfig, CliError> {
        let hidden = self
            .raw("model.hidden")
            .split(',')
            .map(|h| h.trim().parse().map_err(|_| CliError::Config(format!("bad hidden width `{h}`"))))
            .collect::<Result<_, _>>()?;
        Ok(ModelConfig {
            video_dim: self.usize("model.video_dim")?,
            item_dim: self.usize("model.item_dim")?,
            author_dim: self.usize("model.author_dim")?,
            category_dim: self.usize("model.category_dim")?,
            token_dim: self.usize("model.token_dim")?,
            user_dim: self.usize("model.user_dim")?,
            user_numeric: self.usize("model.user_numeric")?,
            attn_dim: self.usize("model.attn_dim")?,
            hidden,
            max_behaviors: self.usize("model.max_behaviors")?,
            seed: self.seed()?,
        })
    }

    pub fn mask(&self) -> Result<AblationMask, CliError> {
        Ok(AblationMask::parse(self.raw("mask"))?)
    }

    /// Comma-separated masks; flags within one mask are joined with `+`.
    pub fn ablation_masks(&self) -> Result<Vec<AblationMask>, CliError> {
        self.raw("ablation_masks")
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| AblationMask::parse(s).map_err(CliError::from))
            .collect()
    }

    /// Training settings for one phase with `epochs` epochs.
    pub fn train_for(&self, epochs_key: &str) -> Result<TrainConfig, CliError> {
        let max_steps = match self.raw("max_steps") {
            "none" | "" => None,
            _ => Some(self.usize("max_steps")?),
        };
        Ok(TrainConfig {
            learning_rate: self.parsed("learning_rate")?,
            batch_size: self.usize("batch_size")?,
            epochs: self.usize(epochs_key)?,
            epsilon: self.parsed("epsilon")?,
            seed: self.seed()?,
            mask: self.mask()?,
            max_steps,
            exec: self.exec()?,
        })
    }

    pub fn train(&self) -> Result<TrainConfig, CliError> {
        self.train_for("pretrain_epochs")
    }

    pub fn workload(&self) -> Result<WorkloadConfig, CliError> {
        Ok(WorkloadConfig {
            requests: self.usize("bench.requests")?,
            candidates: self.usize("bench.candidates")?,
            behaviors: self.usize("bench.behaviors")?,
            seed: self.seed()?,
        })
    }
}
