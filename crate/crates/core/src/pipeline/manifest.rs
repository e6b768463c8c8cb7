use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineConfig;
use crate::container::{read_json, write_json};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "run_manifest.json";
const STAGE_ORDER: [&str; 4] = ["analyze", "quantize", "search", "report"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    /// Configuration with paths replaced by the hashes in `inputs`.
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub artifacts: BTreeMap<String, String>,
    pub stages: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<BTreeMap<String, f64>>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn relative_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            relative_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("under root");
            out.push(rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"));
        }
    }
    Ok(())
}

/// sha256 of every file under `dir`, keyed by `/`-separated relative path.
pub fn hash_tree(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut files = Vec::new();
    relative_files(dir, dir, &mut files)?;
    files
        .into_iter()
        .map(|rel| {
            let p = dir.join(&rel);
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            Ok((rel, sha256_hex(&bytes)))
        })
        .collect()
}

/// One digest over a directory's files, or over a single file.
fn digest_input(path: &Path) -> Result<String> {
    if path.is_dir() {
        let tree = hash_tree(path)?;
        Ok(sha256_hex(serde_json::to_string(&tree).expect("string map").as_bytes()))
    } else {
        Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
    }
}

pub(crate) fn write_manifest(
    cfg: &PipelineConfig,
    stages_run: &[&str],
    timings: &BTreeMap<String, f64>,
) -> Result<RunManifest> {
    let out = &cfg.output_dir;
    let path = out.join(MANIFEST_FILE);
    let previous: Option<RunManifest> = if path.exists() { read_json(&path).ok() } else { None };

    let mut inputs = BTreeMap::new();
    inputs.insert("model".to_string(), digest_input(&cfg.model_path)?);
    inputs.insert("calib".to_string(), digest_input(&cfg.calib_path)?);
    if cfg.cost_table != super::SYNTHETIC {
        inputs.insert("cost_table".to_string(), digest_input(Path::new(&cfg.cost_table))?);
    }

    let mut config = serde_json::to_value(cfg).expect("serializable");
    let obj = config.as_object_mut().expect("object");
    for key in ["model_path", "calib_path", "output_dir"] {
        obj.remove(key);
    }
    if cfg.cost_table != super::SYNTHETIC {
        obj.insert("cost_table".into(), serde_json::Value::String("file".into()));
    }

    let mut artifacts = hash_tree(out)?;
    artifacts.remove(MANIFEST_FILE);

    let mut stages: Vec<String> = previous.as_ref().map(|m| m.stages.clone()).unwrap_or_default();
    stages.extend(stages_run.iter().map(|s| s.to_string()));
    stages.sort_by_key(|s| STAGE_ORDER.iter().position(|o| o == s).unwrap_or(STAGE_ORDER.len()));
    stages.dedup();

    let timings_ms = cfg.record_timings.then(|| {
        let mut t = previous.as_ref().and_then(|m| m.timings_ms.clone()).unwrap_or_default();
        t.extend(timings.iter().map(|(k, v)| (k.clone(), *v)));
        t
    });

    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        config,
        inputs,
        artifacts,
        stages,
        timings_ms,
    };
    write_json(&path, &manifest)?;
    Ok(manifest)
}
