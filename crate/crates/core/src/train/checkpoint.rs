//! Versioned safetensors checkpoints. Parameters are stored under their
//! module-qualified names; the model and training configurations, the
//! shuffle key and the iteration counter travel in the header metadata.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use crate::error::{Error, Result};
use crate::shuffle::ShuffleKey;

use super::pipeline::{ModelConfig, Pipeline};
use super::trainer::TrainConfig;

pub const FORMAT_NAME: &str = "shufflemark-pipeline";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct PipelineCheckpoint {
    pub format_version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub iteration: usize,
    pub shuffle_key: ShuffleKey,
    pub tensors: BTreeMap<String, Tensor>,
}

impl PipelineCheckpoint {
    pub fn capture(pipeline: &Pipeline, train: &TrainConfig, iteration: usize) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            model: pipeline.config().clone(),
            train: train.clone(),
            iteration,
            shuffle_key: pipeline.config().shuffle,
            tensors: pipeline.params().tensors(),
        }
    }

    /// Rebuilds the pipeline and overwrites its parameters.
    pub fn to_pipeline(&self) -> Result<Pipeline> {
        let dtype = self.tensors.values().next().map_or(DType::F32, |t| t.dtype());
        let p = Pipeline::new(&self.model, 0, dtype)?;
        p.params().assign(&self.tensors)?;
        Ok(p)
    }
}

fn to_bytes(t: &Tensor) -> Result<(Dtype, Vec<u8>)> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F32 => (Dtype::F32, flat.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect()),
        DType::F64 => (Dtype::F64, flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect()),
        other => return Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
    })
}

fn from_view(view: &TensorView<'_>) -> Result<Tensor> {
    let shape = view.shape().to_vec();
    let data = view.data();
    let t = match view.dtype() {
        Dtype::F32 => {
            let v: Vec<f32> = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::from_vec(v, shape, &Device::Cpu)?
        }
        Dtype::F64 => {
            let v: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::from_vec(v, shape, &Device::Cpu)?
        }
        other => return Err(Error::Checkpoint(format!("unsupported stored dtype {other:?}"))),
    };
    Ok(t)
}

fn st_err(e: safetensors::SafeTensorError) -> Error {
    Error::Checkpoint(e.to_string())
}

pub fn save_checkpoint(path: &Path, ckpt: &PipelineCheckpoint) -> Result<()> {
    let mut meta = HashMap::new();
    meta.insert("format".to_string(), FORMAT_NAME.to_string());
    meta.insert("format_version".to_string(), ckpt.format_version.to_string());
    meta.insert("model".to_string(), serde_json::to_string(&ckpt.model)?);
    meta.insert("train".to_string(), serde_json::to_string(&ckpt.train)?);
    meta.insert("iteration".to_string(), ckpt.iteration.to_string());
    meta.insert("shuffle_key".to_string(), serde_json::to_string(&ckpt.shuffle_key)?);
    let mut owned = Vec::with_capacity(ckpt.tensors.len());
    for (name, t) in &ckpt.tensors {
        let (dtype, bytes) = to_bytes(t)?;
        owned.push((name.clone(), dtype, t.dims().to_vec(), bytes));
    }
    let views = owned
        .iter()
        .map(|(n, d, s, b)| Ok((n.as_str(), TensorView::new(*d, s.clone(), b).map_err(st_err)?)))
        .collect::<Result<Vec<_>>>()?;
    safetensors::serialize_to_file(views, Some(meta), path).map_err(st_err)
}

pub fn load_checkpoint(path: &Path) -> Result<PipelineCheckpoint> {
    let bytes = std::fs::read(path)?;
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(st_err)?;
    let meta = header.metadata().clone().ok_or_else(|| Error::Checkpoint("missing header metadata".into()))?;
    let field = |k: &str| meta.get(k).ok_or_else(|| Error::Checkpoint(format!("missing metadata field `{k}`")));
    if field("format")? != FORMAT_NAME {
        return Err(Error::Checkpoint(format!("not a {FORMAT_NAME} file")));
    }
    let version: u32 =
        field("format_version")?.parse().map_err(|_| Error::Checkpoint("unreadable format_version".into()))?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let model: ModelConfig = serde_json::from_str(field("model")?)?;
    let train: TrainConfig = serde_json::from_str(field("train")?)?;
    let shuffle_key: ShuffleKey = serde_json::from_str(field("shuffle_key")?)?;
    let iteration: usize = field("iteration")?.parse().map_err(|_| Error::Checkpoint("unreadable iteration".into()))?;
    let st = SafeTensors::deserialize(&bytes).map_err(st_err)?;
    let mut tensors = BTreeMap::new();
    for (name, view) in st.tensors() {
        tensors.insert(name, from_view(&view)?);
    }
    Ok(PipelineCheckpoint { format_version: version, model, train, iteration, shuffle_key, tensors })
}
