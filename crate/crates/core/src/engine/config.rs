use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::boxes::JitterParams;
use crate::dataset::SynthConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::objectives::LossWeights;
use crate::tpan::{Mode, ModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Decoupled weight decay of the optimiser.
    pub weight_decay: f64,
    /// Epoch from which the learning rate is multiplied by 0.1.
    pub lr_decay_epoch: usize,
    pub ids_per_batch: usize,
    pub samples_per_id: usize,
    /// Prototype update ratio.
    pub lambda: f64,
    pub margin: f64,
    pub loss_weights: LossWeights,
    /// Epochs trained with the guidance weight held at zero. Prototypes
    /// are still updated during these epochs.
    pub guide_warmup: usize,
    /// Std of random box shifts applied to training crops, as a fraction of
    /// box size. Zero disables.
    pub box_jitter: f64,
    /// Probability of mirroring a training crop.
    pub flip_prob: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 3e-3,
            weight_decay: 2.0,
            lr_decay_epoch: 20,
            ids_per_batch: 8,
            samples_per_id: 2,
            lambda: 0.5,
            margin: 0.2,
            loss_weights: LossWeights::default(),
            guide_warmup: 15,
            box_jitter: 0.1,
            flip_prob: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn batch_size(&self) -> usize {
        self.ids_per_batch * self.samples_per_id
    }
}

/// Everything that determines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    /// Initialisation, batch order and augmentation.
    pub seed: u64,
    /// Synthetic corpus, split and evaluation detector.
    pub data_seed: u64,
    /// Annotation directory; the synthetic generator is used when absent.
    pub corpus: Option<PathBuf>,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub detector: JitterParams,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Tpan,
            seed: 1,
            data_seed: 7,
            corpus: None,
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            detector: JitterParams::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn json_err(locus: impl Into<String>, e: impl std::fmt::Display) -> Error {
    Error::Json {
        locus: locus.into(),
        message: e.to_string(),
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| json_err("config", e))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| json_err(path.display().to_string(), e))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Applies `key=value` overrides; dotted keys reach into sections
    /// (`train.lr=0.01`). Values parse as JSON, falling back to a string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut v = serde_json::to_value(self).expect("config serialises");
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let value: Value =
                serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut slot = &mut v;
            for part in key.split('.') {
                slot = slot
                    .as_object_mut()
                    .and_then(|m| m.get_mut(part))
                    .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
            }
            *slot = value;
        }
        let cfg: Self = serde_json::from_value(v).map_err(|e| json_err("config override", e))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        let m = &self.model;
        let (h, w) = m.feature_size();
        if m.channel_ratio == 0 || m.dim % m.channel_ratio != 0 {
            return Err(Error::Config(format!(
                "channel_ratio {} must divide dim {}",
                m.channel_ratio, m.dim
            )));
        }
        if m.spatial_ratio == 0 || (h * w) % m.spatial_ratio != 0 {
            return Err(Error::Config(format!(
                "spatial_ratio {} must divide the {h}x{w} feature map",
                m.spatial_ratio
            )));
        }
        if self.train.batch_size() < 2 || self.train.ids_per_batch < 2 {
            return Err(Error::Config(
                "a batch needs at least two identities".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.train.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1)", self.train.lambda)));
        }
        if !(self.train.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.train.flip_prob) || self.train.box_jitter < 0.0 {
            return Err(Error::Config("invalid augmentation settings".into()));
        }
        self.detector.check()?;
        Ok(())
    }

    /// Digest of the canonical JSON form, stored in checkpoints.
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.to_json().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_and_validates() {
        let c = RunConfig::default();
        c.check().unwrap();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(RunConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn overrides() {
        let c = RunConfig::default()
            .with_overrides(&["mode=baseline", "train.lr=0.01", "synth.captions_per_box=1"])
            .unwrap();
        assert_eq!(c.mode, Mode::Baseline);
        assert_eq!(c.train.lr, 0.01);
        assert_eq!(c.synth.captions_per_box, 1);
        assert!(RunConfig::default().with_overrides(&["train.nope=1"]).is_err());
        assert!(RunConfig::default().with_overrides(&["mode=sideways"]).is_err());
        assert!(RunConfig::default().with_overrides(&["novalue"]).is_err());
        assert!(RunConfig::default().with_overrides(&["model.channel_ratio=5"]).is_err());
        assert_ne!(c.hash(), RunConfig::default().hash());
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }
}
