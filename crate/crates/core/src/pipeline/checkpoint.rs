//! Binary model checkpoints plus a JSON sidecar describing the data layout
//! and training run.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "CASARNET"  u32 version  u32 layer_count
//! per layer:  u32 in_dim  u32 out_dim  u8 activation
//! per layer:  f32 weights[out_dim * in_dim] (row-major)  f32 bias[out_dim]
//! ```

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Augmentation, TrainedActionModule, TrainedContactModule};
use crate::datamodel::DatasetConfig;
use crate::error::{Error, Result};
use crate::fsutil::{read_to_string, write_atomic};
use crate::neuralcore::{Activation, ActionHead, DenseLayer, MlpModel};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CASARNET";
pub const CHECKPOINT_VERSION: u32 = 1;

const HEADER_LEN: usize = 16;
const LAYER_HEADER_LEN: usize = 9;

pub fn encode_checkpoint(model: &MlpModel) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * model.parameter_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.layers().len() as u32).to_le_bytes());
    for layer in model.layers() {
        for dim in [layer.in_dim(), layer.out_dim()] {
            let dim = u32::try_from(dim).map_err(|_| Error::Checkpoint(format!("layer width {dim} too large")))?;
            out.extend_from_slice(&dim.to_le_bytes());
        }
        out.push(layer.activation.code());
    }
    for layer in model.layers() {
        for &v in layer.weights.iter().chain(layer.bias.iter()) {
            let v = v as f32;
            if !v.is_finite() {
                return Err(Error::Numeric("parameter is not representable as a finite f32".into()));
            }
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    source: &'a str,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!(
                "{}: truncated at byte {} (file has {} bytes)",
                self.source,
                self.pos,
                self.bytes.len()
            ))
        })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("layer too large".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8], source: &str) -> Result<MlpModel> {
    let mut r = Reader { bytes, pos: 0, source };
    if r.take(8).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(Error::Checkpoint(format!("{source}: bad magic, not a model checkpoint")));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{source}: unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let count = r.u32()? as usize;
    if count == 0 || count.saturating_mul(LAYER_HEADER_LEN) > bytes.len() {
        return Err(Error::Checkpoint(format!("{source}: implausible layer count {count}")));
    }
    let mut shapes = Vec::with_capacity(count);
    for i in 0..count {
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        let code = r.take(1)?[0];
        let act = Activation::from_code(code)
            .ok_or_else(|| Error::Checkpoint(format!("{source}: layer {i} has unknown activation code {code}")))?;
        shapes.push((in_dim, out_dim, act));
    }
    let mut layers = Vec::with_capacity(count);
    for (in_dim, out_dim, activation) in shapes {
        let weights = r.f32s(in_dim.saturating_mul(out_dim))?;
        let bias = r.f32s(out_dim)?;
        layers.push(DenseLayer {
            weights: Array2::from_shape_vec((out_dim, in_dim), weights).map_err(|e| Error::Shape(e.to_string()))?,
            bias: Array1::from(bias),
            activation,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{source}: {} trailing bytes after parameters",
            bytes.len() - r.pos
        )));
    }
    MlpModel::from_layers(layers).map_err(|e| Error::Checkpoint(format!("{source}: {e}")))
}

pub fn save_checkpoint(model: &MlpModel, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model)?)
}

pub fn load_checkpoint(path: &Path) -> Result<MlpModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, &path.display().to_string())
}

/// `dir/name.ckpt` → `dir/name.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.meta.json"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleKind {
    Contact,
    Action,
}

/// Sidecar contents: the data layout the model was trained against and
/// how it was trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub kind: ModuleKind,
    pub dataset: DatasetConfig,
    pub frame_dim: usize,
    pub contact_dim: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<ActionHead>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmentation: Option<Augmentation>,
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: Option<f64>,
}

impl CheckpointMeta {
    pub fn for_contact(module: &TrainedContactModule, seed: u64, history: &[f64]) -> Self {
        Self {
            kind: ModuleKind::Contact,
            dataset: module.dataset.clone(),
            frame_dim: module.dataset.frame_dim(),
            contact_dim: module.dataset.contact_dim(),
            input_dim: module.model.input_dim(),
            output_dim: module.model.output_dim(),
            head: None,
            augmentation: None,
            seed,
            epochs: history.len(),
            final_loss: history.last().copied(),
        }
    }

    pub fn for_action(module: &TrainedActionModule, seed: u64, history: &[f64]) -> Self {
        Self {
            kind: ModuleKind::Action,
            dataset: module.dataset.clone(),
            frame_dim: module.dataset.frame_dim(),
            contact_dim: module.dataset.contact_dim(),
            input_dim: module.model.input_dim(),
            output_dim: module.model.output_dim(),
            head: Some(module.head),
            augmentation: Some(module.augmentation),
            seed,
            epochs: history.len(),
            final_loss: history.last().copied(),
        }
    }

    fn check(&self, model: &MlpModel, kind: ModuleKind, source: &Path) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Validation(format!(
                "{}: checkpoint holds a {:?} module, expected {kind:?}",
                source.display(),
                self.kind
            )));
        }
        self.dataset.validate()?;
        if self.frame_dim != self.dataset.frame_dim() || self.contact_dim != self.dataset.contact_dim() {
            return Err(Error::Shape(format!(
                "{}: sidecar widths {}/{} disagree with its dataset config {}/{}",
                source.display(),
                self.frame_dim,
                self.contact_dim,
                self.dataset.frame_dim(),
                self.dataset.contact_dim()
            )));
        }
        if self.input_dim != model.input_dim() || self.output_dim != model.output_dim() {
            return Err(Error::Shape(format!(
                "{}: sidecar says {} -> {}, weights are {} -> {}",
                source.display(),
                self.input_dim,
                self.output_dim,
                model.input_dim(),
                model.output_dim()
            )));
        }
        Ok(())
    }
}

fn write_meta(meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(meta).map_err(|e| Error::Validation(e.to_string()))?;
    text.push('\n');
    write_atomic(&meta_path(path), text.as_bytes())
}

fn read_meta(path: &Path) -> Result<CheckpointMeta> {
    let meta = meta_path(path);
    let text = read_to_string(&meta)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(&meta, e.line(), e.to_string()))
}

pub fn save_contact_module(module: &TrainedContactModule, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    meta.check(&module.model, ModuleKind::Contact, path)?;
    save_checkpoint(&module.model, path)?;
    write_meta(meta, path)
}

pub fn save_action_module(module: &TrainedActionModule, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    meta.check(&module.model, ModuleKind::Action, path)?;
    save_checkpoint(&module.model, path)?;
    write_meta(meta, path)
}

/// Loads a contact module; it comes back frozen.
pub fn load_contact_module(path: &Path) -> Result<(TrainedContactModule, CheckpointMeta)> {
    let model = load_checkpoint(path)?;
    let meta = read_meta(path)?;
    meta.check(&model, ModuleKind::Contact, path)?;
    let module = TrainedContactModule::new(model, meta.dataset.clone(), true)?;
    Ok((module, meta))
}

pub fn load_action_module(path: &Path) -> Result<(TrainedActionModule, CheckpointMeta)> {
    let model = load_checkpoint(path)?;
    let meta = read_meta(path)?;
    meta.check(&model, ModuleKind::Action, path)?;
    let module = TrainedActionModule::new(
        model,
        meta.head.unwrap_or_default(),
        meta.augmentation.unwrap_or_default(),
        meta.dataset.clone(),
    )?;
    Ok((module, meta))
}
