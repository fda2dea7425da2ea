//! The single aggregated run configuration and its provenance hashing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use phasessl_core::dataset::SplitConfig;
use phasessl_core::enhance::{FilterBankConfig, RegularizerConfig};
use phasessl_core::net::{NetConfig, TrainConfig};
use phasessl_core::ssl::{PipelineConfig, SelectionConfig, Variant};

/// Everything one reproducible run needs, in one JSON document. Unknown
/// keys anywhere in the document are rejected.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub filterbank: FilterBankConfig,
    pub regularizer: RegularizerConfig,
    pub split: SplitConfig,
    pub net: NetConfig,
    pub teacher_train: TrainConfig,
    pub student_train: TrainConfig,
    pub finetune: TrainConfig,
    pub selection: SelectionConfig,
    pub variant: Variant,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.filterbank.validate()?;
        self.regularizer.validate()?;
        self.split.validate()?;
        self.net.validate()?;
        self.teacher_train.validate()?;
        self.student_train.validate()?;
        self.finetune.validate()?;
        self.selection.validate()?;
        Ok(())
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            teacher_net: self.net.clone(),
            student_net: self.net.clone(),
            teacher_train: self.teacher_train.clone(),
            student_train: self.student_train.clone(),
            finetune: self.finetune.clone(),
            selection: self.selection,
            variant: self.variant,
            seed: self.seed,
        }
    }
}

/// JSON with recursively sorted object keys, the hashing canon.
pub fn canonical_json(value: &serde_json::Value) -> String {
    fn write(value: &serde_json::Value, out: &mut String) {
        match value {
            serde_json::Value::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort();
                out.push('{');
                for (i, k) in keys.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&serde_json::to_string(k).expect("string"));
                    out.push(':');
                    write(&map[*k], out);
                }
                out.push('}');
            }
            serde_json::Value::Array(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write(item, out);
                }
                out.push(']');
            }
            other => out.push_str(&other.to_string()),
        }
    }
    let mut out = String::new();
    write(value, &mut out);
    out
}

/// SHA-256 of the canonicalized config JSON, hex-encoded.
pub fn config_hash(cfg: &RunConfig) -> String {
    let value = serde_json::to_value(cfg).expect("config serializes");
    let canon = canonical_json(&value);
    let mut hasher = Sha256::new();
    hasher.update(canon.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// The provenance block stamped onto every JSON output.
pub fn provenance(cfg: &RunConfig, command: &str) -> serde_json::Value {
    serde_json::json!({
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "artifact_version": env!("CARGO_PKG_VERSION"),
        "command": command,
    })
}
