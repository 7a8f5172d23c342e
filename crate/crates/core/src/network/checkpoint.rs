//! `sgml-ckpt-v1` checkpoint documents.
//!
//! Parameters are written as nested JSON arrays (`weight[fan_in][fan_out]`,
//! `bias[fan_out]`). Floats use the shortest representation that parses back
//! to the identical `f64`, so a save/load cycle is bit-exact.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{AdamState, Dense, NetworkParams, NetworkShape};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "sgml-ckpt-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DenseDoc {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamsDoc {
    trunk: Vec<DenseDoc>,
    fc: DenseDoc,
    emb: DenseDoc,
    attr: DenseDoc,
}

impl From<&Dense> for DenseDoc {
    fn from(d: &Dense) -> Self {
        Self {
            weight: d.weight.outer_iter().map(|r| r.to_vec()).collect(),
            bias: d.bias.to_vec(),
        }
    }
}

impl TryFrom<DenseDoc> for Dense {
    type Error = Error;

    fn try_from(doc: DenseDoc) -> Result<Self> {
        let rows = doc.weight.len();
        let cols = doc.bias.len();
        if doc.weight.iter().any(|r| r.len() != cols) {
            return Err(Error::config("checkpoint: ragged weight matrix"));
        }
        let flat: Vec<f64> = doc.weight.into_iter().flatten().collect();
        let weight = Array2::from_shape_vec((rows, cols), flat)
            .map_err(|e| Error::config(format!("checkpoint: {e}")))?;
        Ok(Dense {
            weight,
            bias: Array1::from(doc.bias),
        })
    }
}

/// Trained model state plus everything needed to reproduce or resume it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub shape: NetworkShape,
    #[serde(with = "params_serde")]
    pub params: NetworkParams,
    pub optimizer: AdamState,
    pub step: u64,
    /// SHA-256 of the canonical JSON of the training configuration.
    pub config_hash: String,
    /// The resolved configuration itself.
    pub config: serde_json::Value,
}

mod params_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        p: &NetworkParams,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        ParamsDoc {
            trunk: p.trunk.iter().map(DenseDoc::from).collect(),
            fc: (&p.fc).into(),
            emb: (&p.emb).into(),
            attr: (&p.attr).into(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<NetworkParams, D::Error> {
        use serde::de::Error as _;
        let doc = ParamsDoc::deserialize(d)?;
        let conv = |x: DenseDoc| Dense::try_from(x).map_err(D::Error::custom);
        Ok(NetworkParams {
            trunk: doc
                .trunk
                .into_iter()
                .map(conv)
                .collect::<std::result::Result<_, _>>()?,
            fc: conv(doc.fc)?,
            emb: conv(doc.emb)?,
            attr: conv(doc.attr)?,
        })
    }
}

impl Checkpoint {
    pub fn new(
        params: NetworkParams,
        optimizer: AdamState,
        config: serde_json::Value,
        config_hash: String,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            shape: params.shape(),
            step: optimizer.step,
            params,
            optimizer,
            config_hash,
            config,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::config(format!(
                "unsupported checkpoint format {:?}",
                ck.format
            )));
        }
        if ck.params.shape() != ck.shape {
            return Err(Error::config(
                "checkpoint: parameter shapes disagree with the declared shape",
            ));
        }
        if !ck.params.all_finite() {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
