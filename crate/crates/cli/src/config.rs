//! Run configuration files and the provenance records written next to outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use aerothreat::curation::{AugmentationParams, SplitConfig};
use aerothreat::training::TrainConfig;
use aerothreat::{Error, LabelSpace, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    #[default]
    Standin,
    EfficientnetB4,
}

/// Everything a run can be configured with. Any subset may appear in a
/// `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub label_space: Option<String>,
    pub rules: Option<PathBuf>,
    pub backbone: Backbone,
    pub split: SplitConfig,
    pub augmentation: AugmentationParams,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            what: "run configuration",
            message: format!("{}: {e}", path.display()),
        })
    }
}

/// Resolves a preset name (AVD, AODTA) or a comma-separated category list.
pub fn parse_label_space(spec: Option<&str>) -> Result<LabelSpace> {
    let spec = spec.unwrap_or("AODTA").trim();
    if let Some(ls) = LabelSpace::preset(spec) {
        return Ok(ls);
    }
    if spec.contains(',') {
        return LabelSpace::new("custom", spec.split(',').map(str::trim));
    }
    Err(Error::Validation(format!(
        "unknown label space {spec:?}; use AVD, AODTA or a comma-separated category list"
    )))
}

/// The resolved configuration of one command, written as `<command>_config.json`.
#[derive(Debug, Serialize)]
pub struct RunRecord<'a> {
    pub command: &'a str,
    pub inputs: BTreeMap<&'a str, String>,
    pub config: &'a RunConfig,
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let body = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    fs::write(path, body).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

/// Wall-clock details are kept out of every other artifact so that reruns
/// are byte-identical; they live only in `<command>_metadata.json`.
pub fn write_metadata(out: &Path, command: &str, started: SystemTime) -> Result<()> {
    let secs = |t: SystemTime| t.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let meta = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "started_unix": secs(started),
        "finished_unix": secs(SystemTime::now()),
        "threads": rayon::current_num_threads(),
    });
    write_json(&out.join(format!("{command}_metadata.json")), &meta)
}
