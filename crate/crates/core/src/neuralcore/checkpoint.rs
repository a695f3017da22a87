//! JSON parameter manifest: one entry per tensor with name, shape, partition
//! and row-major values. Floats are written in shortest round-trip form, so a
//! save/load cycle is value-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Param, ParamSet, Partition, Tensor};
use crate::error::{Error, Result};

pub const PARAMS_FORMAT: &str = "dannlime-params";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub partition: Partition,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamManifest {
    pub format: String,
    pub version: u32,
    pub learning_rate: f64,
    pub lambda: f64,
    pub params: Vec<ParamEntry>,
}

impl ParamManifest {
    pub fn from_params(params: &ParamSet) -> Self {
        Self {
            format: PARAMS_FORMAT.to_string(),
            version: PARAMS_VERSION,
            learning_rate: params.learning_rate,
            lambda: params.lambda,
            params: params
                .iter()
                .map(|p| ParamEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    partition: p.partition,
                    values: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn into_params(self) -> Result<ParamSet> {
        if self.format != PARAMS_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", self.format)));
        }
        if self.version != PARAMS_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported parameter manifest version {}",
                self.version
            )));
        }
        let entries = self
            .params
            .into_iter()
            .map(|e| {
                Ok(Param {
                    value: Tensor::new(e.shape, e.values)?,
                    name: e.name,
                    partition: e.partition,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ParamSet::from_entries(entries, self.learning_rate, self.lambda)
    }
}

pub fn save_params(params: &ParamSet, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(&ParamManifest::from_params(params))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<ParamSet> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: ParamManifest = serde_json::from_str(&raw)?;
    manifest.into_params()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn json_roundtrip_is_exact(values in proptest::collection::vec(-1e300f64..1e300, 1..20), tiny in -1e-300f64..1e-300) {
            let mut ps = ParamSet::new(0.05, 0.7);
            let n = values.len();
            ps.add("w", Partition::Feature, Tensor::vector(values)).unwrap();
            ps.add("t", Partition::Domain, Tensor::scalar(tiny)).unwrap();
            let f = tempfile::NamedTempFile::new().unwrap();
            save_params(&ps, f.path()).unwrap();
            let back = load_params(f.path()).unwrap();
            prop_assert!(back.bitwise_eq(&ps));
            prop_assert_eq!(back.value(back.find("w").unwrap()).len(), n);
            prop_assert_eq!(back.lambda, 0.7);
        }
    }

    #[test]
    fn rejects_unknown_version() {
        let mut m = ParamManifest::from_params(&ParamSet::default());
        m.version = 99;
        assert!(matches!(m.into_params(), Err(Error::Checkpoint(_))));
    }
}
