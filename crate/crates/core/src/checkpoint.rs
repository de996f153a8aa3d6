//! JSON checkpoints of trained samplers.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::SamplerModel;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// A sampler together with the provenance needed to re-evaluate it.
/// Every tensor is stored with its shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub version: String,
    pub seed: u64,
    pub target: String,
    pub step: usize,
    pub model: SamplerModel,
}

impl Checkpoint {
    pub fn new(model: SamplerModel, target: impl Into<String>, seed: u64, step: usize) -> Self {
        Self {
            format: FORMAT_VERSION,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            target: target.into(),
            step,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s)?;
        if c.format != FORMAT_VERSION {
            return Err(Error::Invalid(format!("unsupported checkpoint format {}", c.format)));
        }
        c.model.config.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{DiffusionConfig, Method};
    use crate::priors::MixturePrior;

    fn model() -> SamplerModel {
        let mut config = DiffusionConfig::new(Method::Dbs, 3);
        config.hidden = 8;
        config.embed_width = 4;
        let mut prior = MixturePrior::standard(2);
        prior.add_component(&[1.0 / 3.0, -2.5e-7], 0.7).unwrap();
        SamplerModel::new(config, prior, 4).unwrap()
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let c = Checkpoint::new(model(), "funnel", 4, 120);
        let first = c.to_json().unwrap();
        let back = Checkpoint::from_json(&first).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_json().unwrap(), first);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let c = Checkpoint::new(model(), "gmm", 1, 0);
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let json = Checkpoint::new(model(), "gmm", 1, 0).to_json().unwrap();
        let broken = json.replacen("\"shape\": [\n", "\"shape\": [\n          7,\n", 1);
        assert_ne!(broken, json);
        assert!(Checkpoint::from_json(&broken).is_err());
    }
}
