//! Model persistence: a JSON manifest describing the network, quantizer and
//! tensor layout, plus a sidecar of little-endian `f32` arrays.
//!
//! Tensors, in order, with `i` counting layers of each kind:
//!
//! * `dense.{i}.weight` — `[in_dim, out_dim]`, pruned entries are zero and,
//!   under QAT, values are the quantized weights (integer multiples of the
//!   recorded `scale`)
//! * `dense.{i}.bias` — `[out_dim]`
//! * `dense.{i}.mask` — `[in_dim, out_dim]`, 1.0 for live weights, 0.0 for pruned
//! * `batch_norm.{i}.{gamma,beta,running_mean,running_var}` — `[dim]`
//! * `activation.absmax` — `[activation layer count]`

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::params::{BatchNormParams, DenseParams, ModelParams, QuantConfig};
use super::quant::{absmax, quantize_with_scale, scale_for};
use super::TrainedModel;
use crate::ir::NetworkDescription;

pub const FORMAT: &str = "hwnas-model";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid model artifact: {0}")]
    Schema(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the sidecar, in `f32` elements.
    pub offset: usize,
    pub len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: String,
    pub version: u32,
    pub network: NetworkDescription,
    pub quant: QuantConfig,
    pub weights_file: String,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

struct Packer {
    data: Vec<f32>,
    tensors: Vec<TensorEntry>,
}

impl Packer {
    fn push(&mut self, name: String, shape: Vec<usize>, values: &[f32], scale: Option<f64>) {
        self.tensors.push(TensorEntry {
            name,
            shape,
            offset: self.data.len(),
            len: values.len(),
            scale,
        });
        self.data.extend_from_slice(values);
    }
}

/// Values written for a dense layer's weights: masked, and quantized when
/// QAT is on.
pub fn exported_weights(layer: &DenseParams<f32>, quant: &QuantConfig) -> (Vec<f32>, Option<f32>) {
    let masked: Vec<f32> = layer
        .weights
        .iter()
        .zip(&layer.mask)
        .map(|(&w, &m)| if m { w } else { 0.0 })
        .collect();
    if quant.enabled {
        let scale = scale_for(absmax(&masked), quant.weight_bits);
        (quantize_with_scale(&masked, scale, quant.weight_bits), Some(scale))
    } else {
        (masked, None)
    }
}

/// Writes `json_path` and a sidecar named `weights_file` next to it.
pub fn write_model(
    model: &TrainedModel,
    json_path: &Path,
    weights_file: &str,
    provenance: serde_json::Value,
) -> Result<ModelManifest, ArtifactError> {
    let p = &model.params;
    let mut pack = Packer {
        data: Vec::new(),
        tensors: Vec::new(),
    };
    for (i, d) in p.dense.iter().enumerate() {
        let (w, scale) = exported_weights(d, &p.quant);
        pack.push(
            format!("dense.{i}.weight"),
            vec![d.in_dim, d.out_dim],
            &w,
            scale.map(f64::from),
        );
        pack.push(format!("dense.{i}.bias"), vec![d.out_dim], &d.bias, None);
        let mask: Vec<f32> = d.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        pack.push(format!("dense.{i}.mask"), vec![d.in_dim, d.out_dim], &mask, None);
    }
    for (i, b) in p.batch_norm.iter().enumerate() {
        let dim = vec![b.dim()];
        pack.push(format!("batch_norm.{i}.gamma"), dim.clone(), &b.gamma, None);
        pack.push(format!("batch_norm.{i}.beta"), dim.clone(), &b.beta, None);
        pack.push(format!("batch_norm.{i}.running_mean"), dim.clone(), &b.running_mean, None);
        pack.push(format!("batch_norm.{i}.running_var"), dim, &b.running_var, None);
    }
    pack.push(
        "activation.absmax".into(),
        vec![p.act_absmax.len()],
        &p.act_absmax,
        None,
    );

    let manifest = ModelManifest {
        format: FORMAT.into(),
        version: VERSION,
        network: model.annotated_net(),
        quant: p.quant,
        weights_file: weights_file.into(),
        tensors: pack.tensors,
        provenance,
    };
    let dir = json_path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let bin_path = dir.join(weights_file);
    let bytes: Vec<u8> = pack.data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&bin_path, bytes).map_err(io_err(&bin_path))?;
    let text = serde_json::to_string_pretty(&manifest).map_err(|source| ArtifactError::Json {
        path: json_path.display().to_string(),
        source,
    })?;
    fs::write(json_path, text + "\n").map_err(io_err(json_path))?;
    Ok(manifest)
}

pub fn read_manifest(json_path: &Path) -> Result<ModelManifest, ArtifactError> {
    let text = fs::read_to_string(json_path).map_err(io_err(json_path))?;
    let manifest: ModelManifest = serde_json::from_str(&text).map_err(|source| ArtifactError::Json {
        path: json_path.display().to_string(),
        source,
    })?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(ArtifactError::Schema(format!(
            "unsupported format {} v{}",
            manifest.format, manifest.version
        )));
    }
    Ok(manifest)
}

/// Loads a model written by [`write_model`].
pub fn read_model(json_path: &Path) -> Result<(TrainedModel, ModelManifest), ArtifactError> {
    let manifest = read_manifest(json_path)?;
    let dir = json_path.parent().unwrap_or(Path::new("."));
    let bin_path: PathBuf = dir.join(&manifest.weights_file);
    let bytes = fs::read(&bin_path).map_err(io_err(&bin_path))?;
    if bytes.len() % 4 != 0 {
        return Err(ArtifactError::Schema("sidecar length is not a multiple of 4".into()));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let tensor = |name: &str, len: usize| -> Result<&[f32], ArtifactError> {
        let t = manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| ArtifactError::Schema(format!("missing tensor `{name}`")))?;
        if t.len != len || t.offset + t.len > data.len() {
            return Err(ArtifactError::Schema(format!(
                "tensor `{name}` has length {} (expected {len}) at offset {}",
                t.len, t.offset
            )));
        }
        Ok(&data[t.offset..t.offset + t.len])
    };

    let net = manifest.network.clone();
    let mut params = ModelParams::<f32>::zeros(&net).map_err(|e| ArtifactError::Schema(e.to_string()))?;
    params.quant = manifest.quant;
    for (i, d) in params.dense.iter_mut().enumerate() {
        let n = d.in_dim * d.out_dim;
        d.weights = tensor(&format!("dense.{i}.weight"), n)?.to_vec();
        d.bias = tensor(&format!("dense.{i}.bias"), d.out_dim)?.to_vec();
        d.mask = tensor(&format!("dense.{i}.mask"), n)?
            .iter()
            .map(|&m| m != 0.0)
            .collect();
    }
    for (i, b) in params.batch_norm.iter_mut().enumerate() {
        let dim = b.dim();
        *b = BatchNormParams {
            gamma: tensor(&format!("batch_norm.{i}.gamma"), dim)?.to_vec(),
            beta: tensor(&format!("batch_norm.{i}.beta"), dim)?.to_vec(),
            running_mean: tensor(&format!("batch_norm.{i}.running_mean"), dim)?.to_vec(),
            running_var: tensor(&format!("batch_norm.{i}.running_var"), dim)?.to_vec(),
        };
    }
    let n_act = params.act_absmax.len();
    params.act_absmax = tensor("activation.absmax", n_act)?.to_vec();

    // Sparsity/bit annotations are derived from the params on the way out.
    let mut plain = net;
    for l in &mut plain.layers {
        l.sparsity = 0.0;
        l.weight_bits = crate::ir::FULL_PRECISION_BITS;
        l.act_bits = crate::ir::FULL_PRECISION_BITS;
    }
    Ok((TrainedModel::new(plain, params), manifest))
}
