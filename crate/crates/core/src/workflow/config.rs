use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::decoder::DecodeConfig;
use crate::error::{Error, Result};
use crate::network::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Paper,
    Toy,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "paper" => Ok(Profile::Paper),
            "toy" => Ok(Profile::Toy),
            other => Err(Error::Config(format!("unknown profile {other:?}; use paper or toy"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epoch (0-based) from which the learning rate is multiplied by
    /// `lr_decay_factor`.
    pub lr_decay_epoch: usize,
    pub lr_decay_factor: f64,
    /// Random horizontal flips during training.
    pub flip: bool,
    /// Save a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Also write a checkpoint with the center branch pruned.
    pub prune_after: bool,
}

impl Schedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.lr_decay_epoch {
            self.lr * self.lr_decay_factor
        } else {
            self.lr
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Root holding `images/`, `annotations/` and `splits.json`.
    pub dataset: Option<PathBuf>,
    pub train_split: String,
    pub eval_split: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dataset: None,
            train_split: "train".into(),
            eval_split: "test".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub decode: DecodeConfig,
    pub schedule: Schedule,
    pub data: DataConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Continue training from this checkpoint.
    pub resume: Option<PathBuf>,
}

impl RunConfig {
    pub fn profile(p: Profile) -> Self {
        match p {
            Profile::Paper => RunConfig {
                model: ModelConfig::paper(),
                decode: DecodeConfig::default(),
                schedule: Schedule {
                    lr: 5e-4,
                    batch_size: 6,
                    epochs: 180,
                    lr_decay_epoch: 150,
                    lr_decay_factor: 0.1,
                    flip: true,
                    checkpoint_every: 10,
                    prune_after: true,
                },
                data: DataConfig::default(),
                seed: 0,
                out_dir: PathBuf::from("runs/paper"),
                resume: None,
            },
            Profile::Toy => RunConfig {
                model: ModelConfig::toy(),
                decode: DecodeConfig::toy(),
                schedule: Schedule {
                    lr: 2e-3,
                    batch_size: 8,
                    epochs: 40,
                    lr_decay_epoch: 32,
                    lr_decay_factor: 0.1,
                    flip: true,
                    checkpoint_every: 0,
                    prune_after: true,
                },
                data: DataConfig::default(),
                seed: 0,
                out_dir: PathBuf::from("runs/toy"),
                resume: None,
            },
        }
    }

    /// Profile defaults overlaid with a (possibly partial) JSON document.
    pub fn from_json(profile: Profile, overrides: &Value) -> Result<Self> {
        let mut base = serde_json::to_value(Self::profile(profile))?;
        merge(&mut base, overrides);
        let cfg: RunConfig = serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.decode.validate()?;
        let s = &self.schedule;
        if !(s.lr > 0.0) || s.batch_size == 0 || !(s.lr_decay_factor > 0.0) {
            return Err(Error::Config("lr, batch_size and lr_decay_factor must be positive".into()));
        }
        Ok(())
    }
}

/// Recursive object merge; non-object values in `over` replace `base`.
pub fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}
