//! Staged training: derive ground-truth contact-maps, fit the contact
//! network on single frames, freeze it, then fit the action network on
//! whole clips augmented with the contact network's predictions.

mod checkpoint;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_action_module, load_checkpoint, load_contact_module,
    meta_path, save_action_module, save_checkpoint, save_contact_module, CheckpointMeta, ModuleKind,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{encode_clip, encode_frame, resample_frames, ActionClip, ContactSample, DatasetConfig};
use crate::error::{Error, Result};
use crate::geometry::{build_vertex_index, label_contact_map, transform_points, ObjectMesh};
use crate::neuralcore::{
    adam_step, argmax, focal_loss, ActionHead, AdamState, FocalParams, LrSchedule, MlpModel,
};

/// Hyperparameters of the contact network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContactModuleConfig {
    pub hidden_width: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub decay_factor: f64,
    pub period_epochs: usize,
    pub focal: FocalParams,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ContactModuleConfig {
    fn default() -> Self {
        Self {
            hidden_width: 256,
            epochs: 100,
            base_lr: 1e-4,
            decay_factor: 0.7,
            period_epochs: 20,
            focal: FocalParams::default(),
            batch_size: 64,
            seed: 0,
        }
    }
}

impl ContactModuleConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base_lr: self.base_lr,
            decay_factor: self.decay_factor,
            period_epochs: self.period_epochs,
            total_epochs: self.epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Validation(
                "contact module hidden_width, epochs and batch_size must be positive".into(),
            ));
        }
        self.focal.validate()?;
        self.schedule().validate()
    }
}

/// How predicted contact-maps are appended to the action network's input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Augmentation {
    /// Append per-frame contact predictions at all. When false the input is
    /// the plain skeleton encoding.
    pub use_contact: bool,
    /// Threshold predictions at 0.5 instead of passing probabilities.
    pub binarize: bool,
    /// Zero the contact half of every appended vector.
    pub mask_contact: bool,
    /// Zero the distant half of every appended vector.
    pub mask_distant: bool,
}

impl Default for Augmentation {
    fn default() -> Self {
        Self {
            use_contact: true,
            binarize: false,
            mask_contact: false,
            mask_distant: false,
        }
    }
}

/// Hyperparameters of the action network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActionModuleConfig {
    pub hidden_width: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub decay_factor: f64,
    pub period_epochs: usize,
    /// Weight of the contact loss in a joint objective. Only 0 (staged
    /// training) is supported.
    pub lambda: f64,
    pub head: ActionHead,
    pub batch_size: usize,
    pub seed: u64,
    pub augmentation: Augmentation,
}

impl Default for ActionModuleConfig {
    fn default() -> Self {
        Self {
            hidden_width: 5000,
            epochs: 600,
            base_lr: 1e-5,
            decay_factor: 0.7,
            period_epochs: 200,
            lambda: 0.0,
            head: ActionHead::SigmoidCe,
            batch_size: 16,
            seed: 0,
            augmentation: Augmentation::default(),
        }
    }
}

impl ActionModuleConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base_lr: self.base_lr,
            decay_factor: self.decay_factor,
            period_epochs: self.period_epochs,
            total_epochs: self.epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Validation(
                "action module hidden_width, epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Validation(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.lambda > 0.0 {
            return Err(Error::Validation(
                "joint training (lambda > 0) is not supported; use staged training with lambda = 0".into(),
            ));
        }
        self.schedule().validate()
    }
}

/// Full training configuration, as read from a config JSON document.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub dataset: DatasetConfig,
    pub contact: ContactModuleConfig,
    pub action: ActionModuleConfig,
}

/// The contact network `[D, h, h, 2·H·J]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedContactModule {
    pub model: MlpModel,
    pub frozen: bool,
    pub dataset: DatasetConfig,
}

impl TrainedContactModule {
    pub fn new(model: MlpModel, dataset: DatasetConfig, frozen: bool) -> Result<Self> {
        let module = Self { model, frozen, dataset };
        module.check_dims()?;
        Ok(module)
    }

    pub fn check_dims(&self) -> Result<()> {
        let (d, c) = (self.dataset.frame_dim(), self.dataset.contact_dim());
        if self.model.input_dim() != d || self.model.output_dim() != c {
            return Err(Error::Shape(format!(
                "contact model maps {} -> {}, expected {d} -> {c}",
                self.model.input_dim(),
                self.model.output_dim()
            )));
        }
        Ok(())
    }
}

/// The action network `[N_f·(D + 2·H·J), h, h, C]` (or `N_f·D` inputs when
/// contact augmentation is off).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedActionModule {
    pub model: MlpModel,
    pub head: ActionHead,
    pub augmentation: Augmentation,
    pub dataset: DatasetConfig,
}

impl TrainedActionModule {
    pub fn new(model: MlpModel, head: ActionHead, augmentation: Augmentation, dataset: DatasetConfig) -> Result<Self> {
        let module = Self {
            model,
            head,
            augmentation,
            dataset,
        };
        module.check_dims()?;
        Ok(module)
    }

    pub fn expected_input_width(&self) -> usize {
        self.dataset.clip_dim(self.augmentation.use_contact)
    }

    pub fn check_dims(&self) -> Result<()> {
        let w = self.expected_input_width();
        if self.model.input_dim() != w {
            return Err(Error::Shape(format!(
                "action model expects input width {}, expected {w}",
                self.model.input_dim()
            )));
        }
        if self.model.output_dim() != self.dataset.action_classes {
            return Err(Error::Shape(format!(
                "action model has {} outputs, expected {} classes",
                self.model.output_dim(),
                self.dataset.action_classes
            )));
        }
        if self.model.output_activation() != self.head.output_activation() {
            return Err(Error::Validation(format!(
                "action model output activation does not match head {}",
                self.head
            )));
        }
        Ok(())
    }
}

/// Labels every frame of every clip against its posed object mesh. Samples
/// come out in clip order, then frame order.
pub fn derive_contact_dataset(
    clips: &[ActionClip],
    meshes: &BTreeMap<String, ObjectMesh>,
    config: &DatasetConfig,
) -> Result<Vec<ContactSample>> {
    let per_clip: Vec<Vec<ContactSample>> = clips
        .par_iter()
        .map(|clip| {
            let mesh = match clip.frames.first().and_then(|f| f.object.mesh_id.as_ref()) {
                Some(id) => meshes.get(id).ok_or_else(|| {
                    Error::Validation(format!("clip '{}' references missing mesh '{id}'", clip.clip_id))
                })?,
                None => {
                    return Err(Error::Validation(format!("clip '{}' has no mesh_id", clip.clip_id)));
                }
            };
            clip.frames
                .iter()
                .enumerate()
                .map(|(frame_index, frame)| {
                    let world = transform_points(&frame.object.world_from_canonical, &mesh.vertices);
                    let index = build_vertex_index(&world)?;
                    let target =
                        label_contact_map(&frame.hand.joints(), &index, &config.thresholds, config.joint_count())
                            .map_err(|e| Error::Validation(format!("clip '{}': {e}", clip.clip_id)))?;
                    Ok(ContactSample {
                        clip_id: clip.clip_id.clone(),
                        frame_index,
                        frame: frame.clone(),
                        target,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_clip.into_iter().flatten().collect())
}

fn rows_to_matrix(rows: Vec<Vec<f64>>, width: usize) -> Result<Array2<f64>> {
    let n = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((n, width), flat).map_err(|e| Error::Shape(e.to_string()))
}

/// Encodes contact samples into an input matrix and a target matrix.
pub fn contact_training_matrices(
    samples: &[ContactSample],
    config: &DatasetConfig,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut inputs = Vec::with_capacity(samples.len());
    let mut targets = Vec::with_capacity(samples.len());
    for s in samples {
        if s.target.joint_count() != config.joint_count() {
            return Err(Error::Shape(format!(
                "contact target for '{}' frame {} has {} joints, expected {}",
                s.clip_id,
                s.frame_index,
                s.target.joint_count(),
                config.joint_count()
            )));
        }
        inputs.push(encode_frame(&s.frame, config)?);
        targets.push(s.target.to_target());
    }
    Ok((
        rows_to_matrix(inputs, config.frame_dim())?,
        rows_to_matrix(targets, config.contact_dim())?,
    ))
}

/// Generic mini-batch loop shared by both networks. `step_loss` gets the
/// batch outputs and row indices and returns the loss and output gradient.
fn train_loop<F>(
    model: &mut MlpModel,
    inputs: ArrayView2<f64>,
    schedule: &LrSchedule,
    batch_size: usize,
    seed: u64,
    mut step_loss: F,
) -> Result<Vec<f64>>
where
    F: FnMut(ArrayView2<f64>, &[usize]) -> Result<(f64, Array2<f64>)>,
{
    let n = inputs.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = AdamState::new(model);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(schedule.total_epochs);
    for epoch in 0..schedule.total_epochs {
        let lr = schedule.lr_at(epoch)?;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(batch_size) {
            let x = inputs.select(Axis(0), batch);
            let (out, cache) = model.forward(x.view())?;
            let (loss, grad) = step_loss(out.view(), batch)?;
            let grads = model.backward(&cache, grad.view())?;
            adam_step(model, &grads, &mut state, lr)?;
            epoch_loss += loss * batch.len() as f64;
        }
        let mean = epoch_loss / n as f64;
        if !mean.is_finite() {
            return Err(Error::Numeric(format!("training loss became non-finite at epoch {epoch}")));
        }
        history.push(mean);
    }
    Ok(history)
}

/// Fits the contact network with focal loss and returns it frozen, along
/// with the mean training loss of every epoch.
pub fn train_contact_module(
    samples: &[ContactSample],
    dataset: &DatasetConfig,
    config: &ContactModuleConfig,
) -> Result<(TrainedContactModule, Vec<f64>)> {
    dataset.validate()?;
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Validation("no contact samples to train on".into()));
    }
    let (inputs, targets) = contact_training_matrices(samples, dataset)?;
    let h = config.hidden_width;
    let mut model = MlpModel::init(&[dataset.frame_dim(), h, h, dataset.contact_dim()], config.seed)?;
    let focal = config.focal;
    let history = train_loop(
        &mut model,
        inputs.view(),
        &config.schedule(),
        config.batch_size,
        config.seed.wrapping_add(1),
        |out, rows| focal_loss(out, targets.select(Axis(0), rows).view(), &focal),
    )?;
    Ok((TrainedContactModule::new(model, dataset.clone(), true)?, history))
}

/// Contact and distant probabilities for one encoded frame: the first
/// `H·J` entries are contact, the rest distant.
pub fn predict_contact(module: &TrainedContactModule, frame_vec: &[f64]) -> Result<Vec<f64>> {
    let x = ArrayView2::from_shape((1, frame_vec.len()), frame_vec).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(module.model.predict(x)?.into_raw_vec_and_offset().0)
}

/// Batched [`predict_contact`] over rows of encoded frames.
pub fn predict_contact_batch(module: &TrainedContactModule, frames: ArrayView2<f64>) -> Result<Array2<f64>> {
    module.model.predict(frames)
}

fn augment(probs: Array2<f64>, aug: &Augmentation, joints: usize) -> Vec<Vec<f64>> {
    probs
        .outer_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(i, &p)| {
                    let masked = if i < joints { aug.mask_contact } else { aug.mask_distant };
                    if masked {
                        0.0
                    } else if aug.binarize {
                        if p >= 0.5 {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        p
                    }
                })
                .collect()
        })
        .collect()
}

/// Builds the action network's flat input for one clip: resample, predict
/// contact per frame, then concatenate.
pub fn action_input(
    contact: &TrainedContactModule,
    clip: &ActionClip,
    dataset: &DatasetConfig,
    aug: &Augmentation,
) -> Result<Vec<f64>> {
    let clip = resample_frames(clip, dataset.frames_per_clip)?;
    if !aug.use_contact {
        return encode_clip(&clip, dataset, None);
    }
    let frames: Vec<Vec<f64>> = clip
        .frames
        .iter()
        .map(|f| encode_frame(f, dataset))
        .collect::<Result<_>>()?;
    let frames = rows_to_matrix(frames, dataset.frame_dim())?;
    let probs = predict_contact_batch(contact, frames.view())?;
    let probs = augment(probs, aug, dataset.joint_count());
    encode_clip(&clip, dataset, Some(&probs))
}

/// Encodes a clip set into the action network's input matrix.
pub fn action_inputs(
    contact: &TrainedContactModule,
    clips: &[ActionClip],
    dataset: &DatasetConfig,
    aug: &Augmentation,
) -> Result<Array2<f64>> {
    let rows: Vec<Vec<f64>> = clips
        .par_iter()
        .map(|c| action_input(contact, c, dataset, aug))
        .collect::<Result<_>>()?;
    rows_to_matrix(rows, dataset.clip_dim(aug.use_contact))
}

/// Fits the action network on contact-augmented clips. The contact module
/// is only read.
pub fn train_action_module(
    clips: &[ActionClip],
    contact: &TrainedContactModule,
    dataset: &DatasetConfig,
    config: &ActionModuleConfig,
) -> Result<(TrainedActionModule, Vec<f64>)> {
    dataset.validate()?;
    config.validate()?;
    if !contact.frozen {
        return Err(Error::Validation("contact module must be frozen before action training".into()));
    }
    contact.check_dims()?;
    if clips.is_empty() {
        return Err(Error::Validation("no clips to train on".into()));
    }
    for clip in clips {
        clip.validate(dataset)?;
    }
    let labels: Vec<usize> = clips.iter().map(|c| c.action_label).collect();
    let inputs = action_inputs(contact, clips, dataset, &config.augmentation)?;
    train_action_on_inputs(inputs.view(), &labels, dataset, config)
}

/// Action training on pre-encoded inputs.
pub fn train_action_on_inputs(
    inputs: ArrayView2<f64>,
    labels: &[usize],
    dataset: &DatasetConfig,
    config: &ActionModuleConfig,
) -> Result<(TrainedActionModule, Vec<f64>)> {
    config.validate()?;
    let width = dataset.clip_dim(config.augmentation.use_contact);
    if inputs.ncols() != width {
        return Err(Error::Shape(format!("action inputs have width {}, expected {width}", inputs.ncols())));
    }
    if labels.len() != inputs.nrows() {
        return Err(Error::Shape(format!("{} labels for {} clips", labels.len(), inputs.nrows())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= dataset.action_classes) {
        return Err(Error::Validation(format!(
            "action label {bad} out of range for {} classes",
            dataset.action_classes
        )));
    }
    let h = config.hidden_width;
    let mut model = MlpModel::init_with_output(
        &[width, h, h, dataset.action_classes],
        config.head.output_activation(),
        config.seed,
    )?;
    let head = config.head;
    let history = train_loop(
        &mut model,
        inputs,
        &config.schedule(),
        config.batch_size,
        config.seed.wrapping_add(1),
        |out, rows| {
            let batch_labels: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
            head.loss(out, &batch_labels)
        },
    )?;
    Ok((
        TrainedActionModule::new(model, head, config.augmentation, dataset.clone())?,
        history,
    ))
}

/// Checks that the two modules describe the same dataset layout.
pub fn check_compatible(contact: &TrainedContactModule, action: &TrainedActionModule) -> Result<()> {
    contact.check_dims()?;
    action.check_dims()?;
    let expected = contact.dataset.clip_dim(action.augmentation.use_contact);
    if action.model.input_dim() != expected {
        return Err(Error::Shape(format!(
            "action checkpoint expects input width {}, but the contact checkpoint implies {expected}",
            action.model.input_dim()
        )));
    }
    if contact.dataset.frame_dim() != action.dataset.frame_dim()
        || contact.dataset.contact_dim() != action.dataset.contact_dim()
        || contact.dataset.frames_per_clip != action.dataset.frames_per_clip
    {
        return Err(Error::Shape(format!(
            "contact checkpoint has frame width {} / contact width {}, action checkpoint has {} / {}",
            contact.dataset.frame_dim(),
            contact.dataset.contact_dim(),
            action.dataset.frame_dim(),
            action.dataset.contact_dim()
        )));
    }
    Ok(())
}

/// Class prediction (lowest index wins ties) and the class scores.
pub fn predict_action(
    contact: &TrainedContactModule,
    action: &TrainedActionModule,
    clip: &ActionClip,
) -> Result<(usize, Vec<f64>)> {
    check_compatible(contact, action)?;
    let input = action_input(contact, clip, &action.dataset, &action.augmentation)?;
    let x = ArrayView2::from_shape((1, input.len()), &input).map_err(|e| Error::Shape(e.to_string()))?;
    let out = action.model.predict(x)?;
    let probs = action.head.probabilities(out.row(0));
    Ok((argmax(&probs), probs))
}

/// Batched prediction over already-encoded action inputs.
pub fn predict_action_inputs(action: &TrainedActionModule, inputs: ArrayView2<f64>) -> Result<Vec<(usize, Vec<f64>)>> {
    let out = action.model.predict(inputs)?;
    Ok(out
        .outer_iter()
        .map(|row| {
            let probs = action.head.probabilities(row);
            (argmax(&probs), probs)
        })
        .collect())
}
