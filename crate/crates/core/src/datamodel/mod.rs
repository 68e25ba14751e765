//! Per-frame and per-clip input encodings, frame-count normalization,
//! on-disk ingestion and the synthetic dataset generator.

mod io;
pub mod synth;

pub use io::{
    load_clips, load_contact_targets, load_contact_targets_subset, load_meshes, parse_clips, write_clips, write_contact_targets,
    write_meshes,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{check_finite, ContactMap, ContactThresholds, Point3, RigidTransform, BBOX_POINTS};

/// Dataset dimensions. Defaults describe a two-hand, 8-object, 36-action
/// setup with 32 frames per clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub hands: usize,
    pub joints_per_hand: usize,
    pub object_classes: usize,
    pub action_classes: usize,
    pub frames_per_clip: usize,
    pub thresholds: ContactThresholds,
    /// Translate each clip so its first object center sits at the origin.
    pub center_clips: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            hands: 2,
            joints_per_hand: 21,
            object_classes: 8,
            action_classes: 36,
            frames_per_clip: 32,
            thresholds: ContactThresholds::H2O,
            center_clips: false,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.hands) {
            return Err(Error::Validation(format!("hands must be 1 or 2, got {}", self.hands)));
        }
        if self.joints_per_hand == 0 {
            return Err(Error::Validation("joints_per_hand must be positive".into()));
        }
        if self.object_classes == 0 {
            return Err(Error::Validation("object_classes must be positive".into()));
        }
        if self.action_classes < 2 {
            return Err(Error::Validation(format!(
                "action_classes must be at least 2, got {}",
                self.action_classes
            )));
        }
        if self.frames_per_clip == 0 {
            return Err(Error::Validation("frames_per_clip must be at least 1".into()));
        }
        Ok(())
    }

    /// Total hand joints `H·J`.
    pub fn joint_count(&self) -> usize {
        self.hands * self.joints_per_hand
    }

    /// Per-frame width `3·H·J + 63 + K`.
    pub fn frame_dim(&self) -> usize {
        3 * self.joint_count() + 3 * BBOX_POINTS + self.object_classes
    }

    /// Contact-map width `2·H·J`.
    pub fn contact_dim(&self) -> usize {
        2 * self.joint_count()
    }

    pub fn clip_dim(&self, with_contact: bool) -> usize {
        let per_frame = self.frame_dim() + if with_contact { self.contact_dim() } else { 0 };
        self.frames_per_clip * per_frame
    }
}

/// Hand joints for one frame. `left` is `None` for single-hand datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct HandPose {
    pub left: Option<Vec<Point3>>,
    pub right: Vec<Point3>,
}

impl HandPose {
    /// Left hand joints followed by right hand joints.
    pub fn joints(&self) -> Vec<Point3> {
        let mut out = Vec::with_capacity(self.right.len() * 2);
        if let Some(left) = &self.left {
            out.extend_from_slice(left);
        }
        out.extend_from_slice(&self.right);
        out
    }

    fn validate(&self, config: &DatasetConfig) -> Result<()> {
        let j = config.joints_per_hand;
        match (&self.left, config.hands) {
            (Some(left), 2) if left.len() == j => check_finite(left, "left hand")?,
            (None, 1) => {}
            (Some(left), 2) => {
                return Err(Error::Shape(format!("left hand has {} joints, expected {j}", left.len())))
            }
            (None, _) => return Err(Error::Shape("left hand missing in a two-hand dataset".into())),
            (Some(_), _) => return Err(Error::Shape("left hand present in a single-hand dataset".into())),
        }
        if self.right.len() != j {
            return Err(Error::Shape(format!(
                "right hand has {} joints, expected {j}",
                self.right.len()
            )));
        }
        check_finite(&self.right, "right hand")
    }
}

/// Object state for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectAnnotation {
    pub label: usize,
    /// Output of [`crate::geometry::expand_bbox_21`].
    pub pose_points: Vec<Point3>,
    pub world_from_canonical: RigidTransform,
    pub mesh_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSample {
    pub hand: HandPose,
    pub object: ObjectAnnotation,
}

impl FrameSample {
    pub fn validate(&self, config: &DatasetConfig) -> Result<()> {
        self.hand.validate(config)?;
        if self.object.label >= config.object_classes {
            return Err(Error::Validation(format!(
                "object label {} out of range for {} classes",
                self.object.label, config.object_classes
            )));
        }
        if self.object.pose_points.len() != BBOX_POINTS {
            return Err(Error::Shape(format!(
                "object pose has {} points, expected {BBOX_POINTS}",
                self.object.pose_points.len()
            )));
        }
        check_finite(&self.object.pose_points, "object pose")
    }
}

/// A labeled, variable-length sequence of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionClip {
    pub clip_id: String,
    pub action_label: usize,
    pub frames: Vec<FrameSample>,
}

impl ActionClip {
    pub fn object_label(&self) -> Option<usize> {
        self.frames.first().map(|f| f.object.label)
    }

    pub fn validate(&self, config: &DatasetConfig) -> Result<()> {
        let ctx = |e: Error| match e {
            Error::Validation(m) => Error::Validation(format!("clip '{}': {m}", self.clip_id)),
            Error::Shape(m) => Error::Shape(format!("clip '{}': {m}", self.clip_id)),
            other => other,
        };
        if self.frames.is_empty() {
            return Err(ctx(Error::Validation("clip has no frames".into())));
        }
        if self.action_label >= config.action_classes {
            return Err(ctx(Error::Validation(format!(
                "action label {} out of range for {} classes",
                self.action_label, config.action_classes
            ))));
        }
        let first = &self.frames[0].object;
        for frame in &self.frames {
            frame.validate(config).map_err(ctx)?;
            if frame.object.label != first.label || frame.object.mesh_id != first.mesh_id {
                return Err(ctx(Error::Validation(
                    "object label and mesh must be constant across frames".into(),
                )));
            }
        }
        Ok(())
    }
}

/// One frame of `T^C`: frame features plus the ground-truth contact-map.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactSample {
    pub clip_id: String,
    pub frame_index: usize,
    pub frame: FrameSample,
    pub target: ContactMap,
}

pub fn one_hot(index: usize, k: usize) -> Result<Vec<f64>> {
    if index >= k {
        return Err(Error::Validation(format!("one-hot index {index} out of range for {k} classes")));
    }
    let mut v = vec![0.0; k];
    v[index] = 1.0;
    Ok(v)
}

/// `[hand joints xyz | 21 pose points xyz | object one-hot]`.
pub fn encode_frame(frame: &FrameSample, config: &DatasetConfig) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(config.frame_dim());
    encode_frame_into(frame, config, &mut out)?;
    Ok(out)
}

fn encode_frame_into(frame: &FrameSample, config: &DatasetConfig, out: &mut Vec<f64>) -> Result<()> {
    frame.validate(config)?;
    let start = out.len();
    if let Some(left) = &frame.hand.left {
        out.extend(left.iter().flat_map(|p| p.to_array()));
    }
    out.extend(frame.hand.right.iter().flat_map(|p| p.to_array()));
    out.extend(frame.object.pose_points.iter().flat_map(|p| p.to_array()));
    out.extend(one_hot(frame.object.label, config.object_classes)?);
    debug_assert_eq!(out.len() - start, config.frame_dim());
    Ok(())
}

/// Source frame indices `floor(j·L/N_f)` for `j in 0..N_f`.
pub fn resample_indices(len: usize, frames: usize) -> Vec<usize> {
    (0..frames).map(|j| j * len / frames).collect()
}

/// Uniformly subsamples long clips and repeats frames of short ones so the
/// result has exactly `frames` entries.
pub fn resample_frames(clip: &ActionClip, frames: usize) -> Result<ActionClip> {
    if clip.frames.is_empty() {
        return Err(Error::Validation(format!("clip '{}' has no frames", clip.clip_id)));
    }
    if frames == 0 {
        return Err(Error::Validation("target frame count must be at least 1".into()));
    }
    Ok(ActionClip {
        clip_id: clip.clip_id.clone(),
        action_label: clip.action_label,
        frames: resample_indices(clip.frames.len(), frames)
            .into_iter()
            .map(|i| clip.frames[i].clone())
            .collect(),
    })
}

/// Flattens a resampled clip, optionally appending one contact-probability
/// vector after each frame.
pub fn encode_clip(
    clip: &ActionClip,
    config: &DatasetConfig,
    contact_probs: Option<&[Vec<f64>]>,
) -> Result<Vec<f64>> {
    let n = config.frames_per_clip;
    if clip.frames.len() != n {
        return Err(Error::Shape(format!(
            "clip '{}' has {} frames; resample to {n} first",
            clip.clip_id,
            clip.frames.len()
        )));
    }
    if let Some(probs) = contact_probs {
        if probs.len() != n {
            return Err(Error::Shape(format!("expected {n} contact vectors, got {}", probs.len())));
        }
        if let Some(bad) = probs.iter().find(|p| p.len() != config.contact_dim()) {
            return Err(Error::Shape(format!(
                "contact vector has width {}, expected {}",
                bad.len(),
                config.contact_dim()
            )));
        }
    }
    let mut out = Vec::with_capacity(config.clip_dim(contact_probs.is_some()));
    for (j, frame) in clip.frames.iter().enumerate() {
        encode_frame_into(frame, config, &mut out)?;
        if let Some(probs) = contact_probs {
            out.extend_from_slice(&probs[j]);
        }
    }
    Ok(out)
}

/// Translates every point of the clip so the first frame's object center is
/// the origin.
pub fn center_clip(clip: &ActionClip) -> ActionClip {
    let Some(first) = clip.frames.first() else {
        return clip.clone();
    };
    let offset = first.object.pose_points[0] * -1.0;
    let shift = RigidTransform::translation(offset);
    let mut out = clip.clone();
    for frame in &mut out.frames {
        let shift_all = |pts: &mut Vec<Point3>| pts.iter_mut().for_each(|p| *p = *p + offset);
        if let Some(left) = &mut frame.hand.left {
            shift_all(left);
        }
        shift_all(&mut frame.hand.right);
        shift_all(&mut frame.object.pose_points);
        frame.object.world_from_canonical = shift.compose(&frame.object.world_from_canonical);
    }
    out
}
