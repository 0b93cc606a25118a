use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DualHeadNetwork, NetworkConfig, Parameters};
use crate::error::{Error, Result};

const FORMAT: &str = "aerothreat-checkpoint/1";

/// Self-describing JSON checkpoint: network configuration plus every named
/// parameter array with its shape. Floats are written in shortest
/// round-trip form, so loading reproduces forward outputs bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: NetworkConfig,
    pub parameters: Parameters,
    /// Epoch the parameters were taken from, if produced by training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<usize>,
}

impl Checkpoint {
    pub fn from_network(net: &DualHeadNetwork, epoch: Option<usize>) -> Self {
        Self {
            format: FORMAT.to_string(),
            config: net.config.clone(),
            parameters: net.params.clone(),
            epoch,
        }
    }

    pub fn into_network(self) -> Result<DualHeadNetwork> {
        DualHeadNetwork::from_parts(self.config, self.parameters)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Format {
            what: "checkpoint",
            message: e.to_string(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Format {
            what: "checkpoint",
            message: e.to_string(),
        })?;
        if ckpt.format != FORMAT {
            return Err(Error::Format {
                what: "checkpoint",
                message: format!("unknown format tag {:?}", ckpt.format),
            });
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::NumericArray;
    use crate::types::LabelSpace;

    #[test]
    fn reload_reproduces_forward_bitwise() {
        let net = DualHeadNetwork::new(NetworkConfig::new(LabelSpace::avd()), 42).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        Checkpoint::from_network(&net, Some(3)).save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.epoch, Some(3));
        let loaded = loaded.into_network().unwrap();
        assert_eq!(loaded, net);
        let x = NumericArray::new(
            vec![1, 32, 32, 3],
            (0..3072).map(|i| (i % 97) as f64 / 96.0).collect(),
        )
        .unwrap();
        let a = net.predict(&x).unwrap();
        let b = loaded.predict(&x).unwrap();
        assert_eq!(a.class_probs.values(), b.class_probs.values());
        assert_eq!(a.threat_probs.values(), b.threat_probs.values());
    }

    #[test]
    fn rejects_mismatched_parameters() {
        let net = DualHeadNetwork::new(NetworkConfig::new(LabelSpace::avd()), 1).unwrap();
        let mut ckpt = Checkpoint::from_network(&net, None);
        ckpt.config.conv1x1_filters = 16;
        assert!(ckpt.into_network().is_err());
        assert!(Checkpoint::from_json("{\"format\":\"other\"}").is_err());
    }
}
