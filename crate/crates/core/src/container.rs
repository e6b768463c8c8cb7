//! Directory containers for models and calibration data.
//!
//! A model directory holds `manifest.json` (layer list with dims and byte
//! offsets) and `weights.bin` (little-endian `f32`, layer order, row-major).
//! A calibration directory holds `manifest.json`, `inputs.bin`
//! (little-endian `f32`, `[samples, input_dim]`) and `labels.bin`
//! (little-endian `i32`).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Activation, Batch, Layer, LayerKind, ModelGraph};
use crate::quantizer::CalibrationSet;
use crate::tensor::Tensor;

pub const MODEL_FORMAT: &str = "mpq-model";
pub const CALIB_FORMAT: &str = "mpq-calib";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKindTag {
    Dense,
    Relu,
    Tanh,
    SoftmaxXent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub id: String,
    pub kind: LayerKindTag,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dims: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_offset: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_offset: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: String,
    pub version: u32,
    pub input_dim: usize,
    pub layers: Vec<LayerEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibManifest {
    pub format: String,
    pub version: u32,
    pub samples: usize,
    pub input_dim: usize,
    pub n_classes: usize,
    pub batch_size: usize,
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(path, e.to_string()))
}

fn f32_bytes(values: &[f32], out: &mut Vec<u8>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_f32s(bytes: &[u8], offset: u64, count: usize, path: &Path, what: &str) -> Result<Vec<f32>> {
    let start = offset as usize;
    let end = start + count * 4;
    let slice = bytes.get(start..end).ok_or_else(|| {
        Error::data(path, format!("{what}: bytes [{start}, {end}) beyond file of {} bytes", bytes.len()))
    })?;
    Ok(slice.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub fn save_model(model: &ModelGraph, dir: &Path) -> Result<()> {
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    for layer in model.layers() {
        let entry = match &layer.kind {
            LayerKind::Dense { weights, bias, .. } => {
                let weight_offset = blob.len() as u64;
                f32_bytes(weights.data(), &mut blob);
                let bias_offset = bias.as_ref().map(|b| {
                    let off = blob.len() as u64;
                    f32_bytes(b.data(), &mut blob);
                    off
                });
                LayerEntry {
                    id: layer.id.clone(),
                    kind: LayerKindTag::Dense,
                    dims: weights.shape().to_vec(),
                    weight_offset: Some(weight_offset),
                    bias_offset,
                }
            }
            LayerKind::Activation(a) => LayerEntry {
                id: layer.id.clone(),
                kind: match a {
                    Activation::Relu => LayerKindTag::Relu,
                    Activation::Tanh => LayerKindTag::Tanh,
                },
                dims: vec![],
                weight_offset: None,
                bias_offset: None,
            },
            LayerKind::SoftmaxCrossEntropy => LayerEntry {
                id: layer.id.clone(),
                kind: LayerKindTag::SoftmaxXent,
                dims: vec![],
                weight_offset: None,
                bias_offset: None,
            },
        };
        entries.push(entry);
    }
    let manifest =
        ModelManifest { format: MODEL_FORMAT.into(), version: 1, input_dim: model.input_dim(), layers: entries };
    write_atomic(&dir.join("weights.bin"), &blob)?;
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn load_model(dir: &Path) -> Result<ModelGraph> {
    let mpath = dir.join("manifest.json");
    let manifest: ModelManifest = read_json(&mpath)?;
    if manifest.format != MODEL_FORMAT {
        return Err(Error::data(&mpath, format!("expected format `{MODEL_FORMAT}`, got `{}`", manifest.format)));
    }
    let wpath = dir.join("weights.bin");
    let blob = fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for e in &manifest.layers {
        let layer = match e.kind {
            LayerKindTag::Dense => {
                if e.dims.len() != 2 {
                    return Err(Error::data(&mpath, format!("layer `{}`: dense dims must be [out, in]", e.id)));
                }
                let off = e
                    .weight_offset
                    .ok_or_else(|| Error::data(&mpath, format!("layer `{}` lacks weight_offset", e.id)))?;
                let w = read_f32s(&blob, off, e.dims[0] * e.dims[1], &wpath, &e.id)?;
                let weights = Tensor::new(e.dims.clone(), w)
                    .map_err(|err| Error::data(&wpath, format!("layer `{}`: {err}", e.id)))?;
                let bias = match e.bias_offset {
                    Some(bo) => Some(
                        Tensor::new(vec![e.dims[0]], read_f32s(&blob, bo, e.dims[0], &wpath, &e.id)?)
                            .map_err(|err| Error::data(&wpath, format!("layer `{}`: {err}", e.id)))?,
                    ),
                    None => None,
                };
                Layer::dense(e.id.clone(), weights, bias)
            }
            LayerKindTag::Relu => Layer::activation(e.id.clone(), Activation::Relu),
            LayerKindTag::Tanh => Layer::activation(e.id.clone(), Activation::Tanh),
            LayerKindTag::SoftmaxXent => Layer::head(e.id.clone()),
        };
        layers.push(layer);
    }
    ModelGraph::new(manifest.input_dim, layers).map_err(|e| Error::data(&mpath, e.to_string()))
}

pub fn save_calibration(all: &Batch, n_classes: usize, batch_size: usize, dir: &Path) -> Result<()> {
    let mut inputs = Vec::with_capacity(all.inputs().len() * 4);
    f32_bytes(all.inputs().data(), &mut inputs);
    let labels: Vec<u8> = all.labels().iter().flat_map(|&l| (l as i32).to_le_bytes()).collect();
    write_atomic(&dir.join("inputs.bin"), &inputs)?;
    write_atomic(&dir.join("labels.bin"), &labels)?;
    let manifest = CalibManifest {
        format: CALIB_FORMAT.into(),
        version: 1,
        samples: all.len(),
        input_dim: all.dim(),
        n_classes,
        batch_size,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

/// Loads the whole calibration file as one batch plus its manifest.
pub fn load_calibration_batch(dir: &Path) -> Result<(Batch, CalibManifest)> {
    let mpath = dir.join("manifest.json");
    let m: CalibManifest = read_json(&mpath)?;
    if m.format != CALIB_FORMAT {
        return Err(Error::data(&mpath, format!("expected format `{CALIB_FORMAT}`, got `{}`", m.format)));
    }
    if m.samples == 0 || m.input_dim == 0 {
        return Err(Error::data(&mpath, "calibration set is empty"));
    }
    let ipath = dir.join("inputs.bin");
    let ibytes = fs::read(&ipath).map_err(|e| Error::io(&ipath, e))?;
    if ibytes.len() != m.samples * m.input_dim * 4 {
        return Err(Error::data(
            &ipath,
            format!("expected {} bytes, found {}", m.samples * m.input_dim * 4, ibytes.len()),
        ));
    }
    let inputs = read_f32s(&ibytes, 0, m.samples * m.input_dim, &ipath, "inputs")?;
    let lpath = dir.join("labels.bin");
    let lbytes = fs::read(&lpath).map_err(|e| Error::io(&lpath, e))?;
    if lbytes.len() != m.samples * 4 {
        return Err(Error::data(&lpath, format!("expected {} bytes, found {}", m.samples * 4, lbytes.len())));
    }
    let mut labels = Vec::with_capacity(m.samples);
    for c in lbytes.chunks_exact(4) {
        let l = i32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        if l < 0 || l as usize >= m.n_classes {
            return Err(Error::data(&lpath, format!("label {l} outside [0, {})", m.n_classes)));
        }
        labels.push(l as usize);
    }
    let t = Tensor::new(vec![m.samples, m.input_dim], inputs).map_err(|e| Error::data(&ipath, e.to_string()))?;
    let batch = Batch::new(t, labels).map_err(|e| Error::data(&mpath, e.to_string()))?;
    Ok((batch, m))
}

pub fn load_calibration(dir: &Path) -> Result<CalibrationSet> {
    let (batch, m) = load_calibration_batch(dir)?;
    CalibrationSet::from_batch(&batch, m.batch_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_model() -> ModelGraph {
        let w1 = Tensor::new(vec![3, 2], vec![0.1, -0.2, 1e-30, f32::MAX, -0.0, 7.5]).unwrap();
        let b1 = Tensor::from_vec(vec![0.5, -0.5, 0.25]).unwrap();
        let w2 = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        ModelGraph::new(
            2,
            vec![
                Layer::dense("fc1", w1, Some(b1)),
                Layer::activation("act", Activation::Relu),
                Layer::dense("fc2", w2, None),
                Layer::head("head"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = sample_model();
        save_model(&m, dir.path()).unwrap();
        let back = load_model(dir.path()).unwrap();
        for (a, b) in m.layers().iter().zip(back.layers()) {
            assert_eq!(a.id, b.id);
            let bits = |t: Option<&Tensor>| t.map(|t| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            assert_eq!(bits(a.weights()), bits(b.weights()));
            assert_eq!(bits(a.bias()), bits(b.bias()));
        }
        let first = fs::read(dir.path().join("weights.bin")).unwrap();
        save_model(&back, dir.path()).unwrap();
        assert_eq!(first, fs::read(dir.path().join("weights.bin")).unwrap());
    }

    #[test]
    fn truncated_weights_are_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        save_model(&sample_model(), dir.path()).unwrap();
        let p = dir.path().join("weights.bin");
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        let err = load_model(dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("fc2"), "{err}");
    }

    #[test]
    fn calibration_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let b =
            Batch::new(Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(), vec![0, 2, 1]).unwrap();
        save_calibration(&b, 3, 2, dir.path()).unwrap();
        let set = load_calibration(dir.path()).unwrap();
        assert_eq!(set.batches().len(), 2);
        assert_eq!(set.to_batch(), b);
    }
}
