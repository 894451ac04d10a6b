//! GTEN tensor files, model manifests and labelled dataset files.
//!
//! GTEN layout, all integers little-endian:
//!
//! ```text
//! "GTEN" | version u16 = 1 | dtype u8 (0 = f32, 1 = f64) | ndim u8
//! | ndim x u64 dims | row-major payload
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::autodiff::Dense;
use crate::error::{Error, Result};
use crate::inference::LabeledDataset;
use crate::models::{GeneratorModel, Layer, ModelKind, SpiralParams};
use crate::Tensor;

pub const GTEN_MAGIC: &[u8; 4] = b"GTEN";
pub const GTEN_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

pub fn encode_gten(tensor: &Tensor, dtype: Dtype) -> Result<Vec<u8>> {
    let ndim = u8::try_from(tensor.shape().len())
        .map_err(|_| Error::Format(format!("{} dimensions exceed 255", tensor.shape().len())))?;
    let mut out = Vec::with_capacity(8 + 8 * ndim as usize + tensor.len() * dtype.size());
    out.extend_from_slice(GTEN_MAGIC);
    out.extend_from_slice(&GTEN_VERSION.to_le_bytes());
    out.push(dtype.code());
    out.push(ndim);
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match dtype {
        Dtype::F64 => tensor
            .data()
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        Dtype::F32 => tensor
            .data()
            .iter()
            .for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
    }
    Ok(out)
}

/// Decodes a GTEN buffer, also returning the stored dtype.
pub fn decode_gten(bytes: &[u8]) -> Result<(Tensor, Dtype)> {
    if bytes.len() < 8 {
        return Err(Error::Format("truncated header".into()));
    }
    if &bytes[..4] != GTEN_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != GTEN_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dtype = match bytes[6] {
        0 => Dtype::F32,
        1 => Dtype::F64,
        other => return Err(Error::Format(format!("unknown dtype code {other}"))),
    };
    let ndim = bytes[7] as usize;
    let header = 8 + 8 * ndim;
    if bytes.len() < header {
        return Err(Error::Format("truncated dimensions".into()));
    }
    let shape = bytes[8..header]
        .chunks_exact(8)
        .map(|c| {
            usize::try_from(u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .map_err(|_| Error::Format("dimension overflows usize".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("element count overflows".into()))?;
    let payload = &bytes[header..];
    if Some(payload.len()) != count.checked_mul(dtype.size()) {
        return Err(Error::Format(format!(
            "payload holds {} bytes, dims {shape:?} need {}",
            payload.len(),
            count.saturating_mul(dtype.size())
        )));
    }
    let data: Vec<f64> = match dtype {
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
            .collect(),
    };
    Ok((Tensor::new(shape, data)?, dtype))
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    write_tensor_as(path, tensor, Dtype::F64)
}

pub fn write_tensor_as(path: impl AsRef<Path>, tensor: &Tensor, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_gten(tensor, dtype)?).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_gten(&bytes).map(|(t, _)| t)
}

/// Stacks equally shaped samples into one `[N, ...]` tensor.
pub fn stack(samples: &[Tensor]) -> Result<Tensor> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("samples", "nothing to stack"))?;
    let mut data = Vec::with_capacity(samples.len() * first.len());
    for s in samples {
        s.ensure_shape(first.shape(), "stacked sample")?;
        data.extend_from_slice(s.data());
    }
    let mut shape = vec![samples.len()];
    shape.extend_from_slice(first.shape());
    Tensor::new(shape, data)
}

/// Splits a `[N, ...]` tensor along its first axis.
pub fn unstack(batch: &Tensor) -> Result<Vec<Tensor>> {
    let (&n, rest) = batch
        .shape()
        .split_first()
        .ok_or_else(|| Error::Format("a batch needs a leading sample axis".into()))?;
    let rest = if rest.is_empty() { vec![1] } else { rest.to_vec() };
    if n == 0 {
        return Ok(Vec::new());
    }
    let per = batch.len() / n;
    batch
        .data()
        .chunks_exact(per)
        .map(|c| Tensor::new(rest.clone(), c.to_vec()))
        .collect()
}

/// Label sidecar stored next to a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSidecar {
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub group: String,
}

/// `data.gten` -> `data.labels.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("labels.json")
}

pub fn save_dataset(path: impl AsRef<Path>, data: &LabeledDataset) -> Result<()> {
    let path = path.as_ref();
    write_tensor(path, &stack(&data.samples)?)?;
    let side = LabelSidecar {
        labels: data.labels.clone(),
        num_classes: data.num_classes,
        group: data.group.clone(),
    };
    let side_path = sidecar_path(path);
    let text = serde_json::to_string_pretty(&side)? + "\n";
    fs::write(&side_path, text).map_err(|e| Error::io(side_path, e))
}

/// Loads a dataset; without a sidecar every sample gets label 0.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let samples = unstack(&read_tensor(path)?)?;
    let side_path = sidecar_path(path);
    if side_path.exists() {
        let text = fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
        let side: LabelSidecar = serde_json::from_str(&text)?;
        LabeledDataset::new(samples, side.labels, side.num_classes, side.group)
    } else {
        let n = samples.len();
        let group = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        LabeledDataset::new(samples, vec![0; n], 1, group)
    }
}

/// JSON description of a model; weight tensors live in GTEN files listed
/// in `weights`, relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub id: String,
    pub kind: ModelKind,
    pub latent_dim: usize,
    pub output_shape: Vec<usize>,
    #[serde(default)]
    pub params: Value,
    #[serde(default)]
    pub weights: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
enum LayerSpec {
    Dense { weight: usize, bias: usize },
    Tanh,
    Relu,
    LeakyRelu,
    Sigmoid,
    Reshape { shape: Vec<usize> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpParams {
    layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpiralSpec {
    angular_gain: f64,
    offset: f64,
    radial_gain: f64,
}

/// Splits a model into its manifest and the weight tensors it references.
pub fn model_to_manifest(model: &GeneratorModel, stem: &str) -> Result<(ModelManifest, Vec<Tensor>)> {
    let mut tensors: Vec<Tensor> = Vec::new();
    let params = match model.kind() {
        ModelKind::Linear => {
            let (w, mu) = model.linear_params().expect("linear model");
            tensors.push(w.clone());
            tensors.push(mu.clone());
            Value::Object(Default::default())
        }
        ModelKind::Constant => {
            tensors.push(model.constant_output().expect("constant model"));
            Value::Object(Default::default())
        }
        ModelKind::Spiral => {
            let p = model.spiral_params().expect("spiral model");
            serde_json::to_value(SpiralSpec {
                angular_gain: p.angular_gain,
                offset: p.offset,
                radial_gain: p.radial_gain,
            })?
        }
        ModelKind::Mlp => {
            let layers = model
                .layers()
                .expect("mlp model")
                .iter()
                .map(|l| match l {
                    Layer::Dense(d) => {
                        tensors.push(d.weight().clone());
                        tensors.push(d.bias().clone());
                        LayerSpec::Dense {
                            weight: tensors.len() - 2,
                            bias: tensors.len() - 1,
                        }
                    }
                    Layer::Tanh => LayerSpec::Tanh,
                    Layer::Relu => LayerSpec::Relu,
                    Layer::LeakyRelu => LayerSpec::LeakyRelu,
                    Layer::Sigmoid => LayerSpec::Sigmoid,
                    Layer::Reshape(s) => LayerSpec::Reshape { shape: s.clone() },
                })
                .collect();
            serde_json::to_value(MlpParams { layers })?
        }
    };
    let weights = (0..tensors.len()).map(|i| format!("{stem}.w{i}.gten")).collect();
    Ok((
        ModelManifest {
            id: model.id().to_string(),
            kind: model.kind(),
            latent_dim: model.latent_dim(),
            output_shape: model.output_shape().to_vec(),
            params,
            weights,
        },
        tensors,
    ))
}

fn params_as<T: for<'de> Deserialize<'de>>(params: &Value, kind: ModelKind) -> Result<T> {
    serde_json::from_value(params.clone())
        .map_err(|e| Error::Manifest(format!("params for {} model: {e}", kind.as_str())))
}

fn expect_weights(m: &ModelManifest, tensors: &[Tensor], n: usize) -> Result<()> {
    if tensors.len() != n {
        return Err(Error::Manifest(format!(
            "{} model needs {n} weight files, manifest lists {}",
            m.kind.as_str(),
            tensors.len()
        )));
    }
    Ok(())
}

/// Rebuilds a model from a manifest and its loaded weight tensors.
pub fn model_from_manifest(m: &ModelManifest, tensors: &[Tensor]) -> Result<GeneratorModel> {
    let empty = |v: &Value| v.is_null() || v.as_object().is_some_and(|o| o.is_empty());
    let model = match m.kind {
        ModelKind::Linear => {
            expect_weights(m, tensors, 2)?;
            if !empty(&m.params) {
                return Err(Error::Manifest("linear model takes no params".into()));
            }
            GeneratorModel::linear(tensors[0].clone(), tensors[1].clone())?
        }
        ModelKind::Constant => {
            expect_weights(m, tensors, 1)?;
            if !empty(&m.params) {
                return Err(Error::Manifest("constant model takes no params".into()));
            }
            GeneratorModel::constant(tensors[0].clone(), m.latent_dim)?
        }
        ModelKind::Spiral => {
            expect_weights(m, tensors, 0)?;
            let s: SpiralSpec = params_as(&m.params, m.kind)?;
            GeneratorModel::spiral(SpiralParams {
                angular_gain: s.angular_gain,
                offset: s.offset,
                radial_gain: s.radial_gain,
            })?
        }
        ModelKind::Mlp => {
            let p: MlpParams = params_as(&m.params, m.kind)?;
            let fetch = |i: usize| {
                tensors.get(i).cloned().ok_or_else(|| {
                    Error::Manifest(format!("layer refers to weight {i}, only {} listed", tensors.len()))
                })
            };
            let layers = p
                .layers
                .into_iter()
                .map(|l| {
                    Ok(match l {
                        LayerSpec::Dense { weight, bias } => {
                            Layer::Dense(Dense::new(fetch(weight)?, fetch(bias)?)?)
                        }
                        LayerSpec::Tanh => Layer::Tanh,
                        LayerSpec::Relu => Layer::Relu,
                        LayerSpec::LeakyRelu => Layer::LeakyRelu,
                        LayerSpec::Sigmoid => Layer::Sigmoid,
                        LayerSpec::Reshape { shape } => Layer::Reshape(shape),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            GeneratorModel::mlp(m.latent_dim, layers, m.output_shape.clone())?
        }
    };
    if model.latent_dim() != m.latent_dim {
        return Err(Error::Manifest(format!(
            "latent_dim {} disagrees with weights ({})",
            m.latent_dim,
            model.latent_dim()
        )));
    }
    if model.output_shape() != m.output_shape.as_slice() {
        return Err(Error::Manifest(format!(
            "output_shape {:?} disagrees with weights ({:?})",
            m.output_shape,
            model.output_shape()
        )));
    }
    Ok(model.with_id(m.id.clone()))
}

/// Writes `path` (the manifest) and one GTEN file per weight tensor beside it.
pub fn save_model(model: &GeneratorModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    let dir = path.parent().unwrap_or(Path::new(""));
    let (manifest, tensors) = model_to_manifest(model, &stem)?;
    for (name, t) in manifest.weights.iter().zip(&tensors) {
        write_tensor(dir.join(name), t)?;
    }
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<GeneratorModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: ModelManifest =
        serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new(""));
    let tensors = manifest
        .weights
        .iter()
        .map(|w| read_tensor(dir.join(w)))
        .collect::<Result<Vec<_>>>()?;
    model_from_manifest(&manifest, &tensors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Tensor {
        Tensor::new(vec![2, 3], vec![0.1, -2.5, 3.0, 1e-300, 7.25, -0.0]).unwrap()
    }

    #[test]
    fn gten_round_trip_is_exact() {
        let t = sample();
        let bytes = encode_gten(&t, Dtype::F64).unwrap();
        assert_eq!(&bytes[..4], b"GTEN");
        assert_eq!(bytes.len(), 8 + 16 + 48);
        let (back, dtype) = decode_gten(&bytes).unwrap();
        assert_eq!(dtype, Dtype::F64);
        assert_eq!(back.shape(), t.shape());
        assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(encode_gten(&back, dtype).unwrap(), bytes);
    }

    #[test]
    fn f32_payload_decodes() {
        let t = Tensor::vector(vec![0.5, -1.25]).unwrap();
        let bytes = encode_gten(&t, Dtype::F32).unwrap();
        assert_eq!(bytes[6], 0);
        let (back, dtype) = decode_gten(&bytes).unwrap();
        assert_eq!(dtype, Dtype::F32);
        assert_eq!(back.data(), t.data());
        assert_eq!(encode_gten(&back, Dtype::F32).unwrap(), bytes);
    }

    #[test]
    fn corrupt_headers_are_rejected() {
        let good = encode_gten(&sample(), Dtype::F64).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_gten(&bad), Err(Error::Format(m)) if m.contains("magic")));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(decode_gten(&bad), Err(Error::Format(m)) if m.contains("version")));
        let mut bad = good.clone();
        bad[6] = 7;
        assert!(decode_gten(&bad).is_err());
        assert!(decode_gten(&good[..good.len() - 1]).is_err());
        assert!(decode_gten(&good[..5]).is_err());
    }

    #[test]
    fn stack_and_unstack() {
        let xs = vec![Tensor::vector(vec![1.0, 2.0]).unwrap(), Tensor::vector(vec![3.0, 4.0]).unwrap()];
        let b = stack(&xs).unwrap();
        assert_eq!(b.shape(), &[2, 2]);
        assert_eq!(unstack(&b).unwrap(), xs);
    }

    #[test]
    fn unknown_manifest_keys_are_rejected() {
        let text = r#"{"id":"a","kind":"spiral","latent_dim":1,"output_shape":[2],
            "params":{"angular_gain":1.0,"offset":0.0,"radial_gain":0.5},"weights":[],"extra":1}"#;
        assert!(serde_json::from_str::<ModelManifest>(text).is_err());
    }
}
