//! Versioned JSON checkpoints with a content hash.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::cgdan::CgdanModel;
use crate::error::{Error, Result};
use crate::gdan::GdanModel;

pub const FORMAT: &str = "shiftlab-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Checkpoint {
    Gdan(GdanModel),
    Cgdan(CgdanModel),
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    kind: String,
    sha256: String,
    model: Value,
}

/// SHA-256 of the compact JSON rendering, hex encoded.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Checkpoint {
    pub fn kind(&self) -> &'static str {
        match self {
            Checkpoint::Gdan(_) => "gdan",
            Checkpoint::Cgdan(_) => "cgdan",
        }
    }

    fn model_value(&self) -> Result<Value> {
        Ok(match self {
            Checkpoint::Gdan(m) => serde_json::to_value(m)?,
            Checkpoint::Cgdan(m) => serde_json::to_value(m)?,
        })
    }

    /// Hash of the model body; identical models hash identically.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(
            serde_json::to_string(&self.model_value()?)?.as_bytes(),
        ))
    }

    pub fn to_json(&self) -> Result<String> {
        let model = self.model_value()?;
        let env = Envelope {
            format: FORMAT.into(),
            version: VERSION,
            kind: self.kind().into(),
            sha256: sha256_hex(serde_json::to_string(&model)?.as_bytes()),
            model,
        };
        Ok(serde_json::to_string_pretty(&env)?)
    }

    /// Parses and verifies a checkpoint; a body that no longer matches its
    /// recorded hash is rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let env: Envelope = serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("not a checkpoint document: {e}")))?;
        if env.format != FORMAT {
            return Err(Error::Checkpoint(format!(
                "unknown format `{}`",
                env.format
            )));
        }
        if env.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (this build reads {VERSION})",
                env.version
            )));
        }
        let actual = sha256_hex(serde_json::to_string(&env.model)?.as_bytes());
        if actual != env.sha256 {
            return Err(Error::Checkpoint(format!(
                "hash mismatch: recorded {}, computed {actual}",
                env.sha256
            )));
        }
        let bad =
            |e: serde_json::Error| Error::Checkpoint(format!("malformed {} model: {e}", env.kind));
        match env.kind.as_str() {
            "gdan" => Ok(Checkpoint::Gdan(
                serde_json::from_value(env.model).map_err(bad)?,
            )),
            "cgdan" => Ok(Checkpoint::Cgdan(
                serde_json::from_value(env.model).map_err(bad)?,
            )),
            other => Err(Error::Checkpoint(format!("unknown model kind `{other}`"))),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<String> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))?;
        self.hash()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn as_gdan(&self) -> Option<&GdanModel> {
        match self {
            Checkpoint::Gdan(m) => Some(m),
            Checkpoint::Cgdan(_) => None,
        }
    }

    pub fn as_cgdan(&self) -> Option<&CgdanModel> {
        match self {
            Checkpoint::Cgdan(m) => Some(m),
            Checkpoint::Gdan(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DomainDataset, LabelSpace};
    use crate::gdan::{init_gdan, TrainConfig};
    use crate::numerics::Rng;

    fn model() -> GdanModel {
        let mut rng = Rng::new(1);
        let x = rng.gaussian(20, 2).unwrap();
        let y: Vec<f64> = (0..20).map(|i| (i % 2) as f64).collect();
        let names = vec!["a".to_string(), "b".to_string()];
        let s = DomainDataset::new("s", x.clone(), Some(y), names.clone()).unwrap();
        let t = DomainDataset::new("t", x, None, names).unwrap();
        let m = init_gdan(&[s], &t, &TrainConfig::default()).unwrap();
        assert_eq!(m.label_space, LabelSpace::Categorical { classes: 2 });
        m
    }

    #[test]
    fn round_trip_is_exact() {
        let c = Checkpoint::Gdan(model());
        let back = Checkpoint::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn tampering_is_detected() {
        let c = Checkpoint::Gdan(model());
        let mut v: Value = serde_json::from_str(&c.to_json().unwrap()).unwrap();
        v["model"]["config"]["alpha"] = Value::from(2.0);
        let err = Checkpoint::from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("hash mismatch"), "{err}");
    }

    #[test]
    fn wrong_format_rejected() {
        assert!(matches!(
            Checkpoint::from_json("{}"),
            Err(Error::Checkpoint(_))
        ));
    }
}
