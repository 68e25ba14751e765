//! JSON Lines clip and contact-target files, and OBJ mesh directories.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ActionClip, ContactSample, DatasetConfig, FrameSample, HandPose, ObjectAnnotation};
use crate::error::{Error, Result};
use crate::fsutil::{read_to_string, write_atomic};
use crate::geometry::{expand_bbox_21, parse_obj, write_obj, ContactMap, ObjectMesh, Point3, RigidTransform};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClipRecord {
    clip_id: String,
    action_label: usize,
    object_label: usize,
    mesh_id: Option<String>,
    frames: Vec<FrameRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    left: Option<Vec<[f64; 3]>>,
    right: Vec<[f64; 3]>,
    bbox_corners: Vec<[f64; 3]>,
    object_pose: [[f64; 4]; 4],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContactRecord {
    clip_id: String,
    frame_index: usize,
    contact: Vec<u8>,
    distant: Vec<u8>,
}

fn points(raw: &[[f64; 3]]) -> Vec<Point3> {
    raw.iter().copied().map(Point3::from).collect()
}

fn record_to_clip(rec: ClipRecord) -> Result<ActionClip> {
    let mut frames = Vec::with_capacity(rec.frames.len());
    for (i, f) in rec.frames.into_iter().enumerate() {
        let at = |e: Error| Error::Validation(format!("frame {i}: {e}"));
        let corners = points(&f.bbox_corners);
        let pose_points = expand_bbox_21(&corners).map_err(at)?;
        let world_from_canonical = RigidTransform::new(f.object_pose).map_err(at)?;
        frames.push(FrameSample {
            hand: HandPose {
                left: f.left.as_deref().map(points),
                right: points(&f.right),
            },
            object: ObjectAnnotation {
                label: rec.object_label,
                pose_points,
                world_from_canonical,
                mesh_id: rec.mesh_id.clone(),
            },
        });
    }
    Ok(ActionClip {
        clip_id: rec.clip_id,
        action_label: rec.action_label,
        frames,
    })
}

fn clip_to_record(clip: &ActionClip) -> ClipRecord {
    let first = clip.frames.first().map(|f| &f.object);
    ClipRecord {
        clip_id: clip.clip_id.clone(),
        action_label: clip.action_label,
        object_label: first.map_or(0, |o| o.label),
        mesh_id: first.and_then(|o| o.mesh_id.clone()),
        frames: clip
            .frames
            .iter()
            .map(|f| FrameRecord {
                left: f.hand.left.as_ref().map(|l| l.iter().map(|p| p.to_array()).collect()),
                right: f.hand.right.iter().map(|p| p.to_array()).collect(),
                bbox_corners: f.object.pose_points[1..9].iter().map(|p| p.to_array()).collect(),
                object_pose: *f.object.world_from_canonical.matrix(),
            })
            .collect(),
    }
}

/// Parses clip JSON Lines text; `source` names the file in errors.
pub fn parse_clips(text: &str, source: &Path, config: &DatasetConfig) -> Result<Vec<ActionClip>> {
    let mut clips = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fail = |msg: String| Error::parse(source, lineno + 1, msg);
        let rec: ClipRecord = serde_json::from_str(line).map_err(|e| fail(e.to_string()))?;
        let clip = record_to_clip(rec).map_err(|e| fail(e.to_string()))?;
        clip.validate(config).map_err(|e| fail(e.to_string()))?;
        clips.push(clip);
    }
    Ok(clips)
}

/// Loads and validates a clip file. Clips are centered when
/// `config.center_clips` is set.
pub fn load_clips(path: &Path, config: &DatasetConfig) -> Result<Vec<ActionClip>> {
    let clips = parse_clips(&read_to_string(path)?, path, config)?;
    Ok(if config.center_clips {
        clips.iter().map(super::center_clip).collect()
    } else {
        clips
    })
}

/// Writes clips in canonical form (compact JSON, one clip per line).
pub fn write_clips(path: &Path, clips: &[ActionClip]) -> Result<()> {
    let mut out = String::new();
    for clip in clips {
        out.push_str(&serde_json::to_string(&clip_to_record(clip)).expect("clip serializes"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Reads contact targets and joins them with their source frames. Every
/// record must refer to one of `clips`.
pub fn load_contact_targets(
    path: &Path,
    clips: &[ActionClip],
    config: &DatasetConfig,
) -> Result<Vec<ContactSample>> {
    read_contact_targets(path, clips, config, false)
}

/// Like [`load_contact_targets`], but records for clips outside `clips` are
/// skipped. Use it to read a split out of a file covering the whole dataset.
pub fn load_contact_targets_subset(
    path: &Path,
    clips: &[ActionClip],
    config: &DatasetConfig,
) -> Result<Vec<ContactSample>> {
    read_contact_targets(path, clips, config, true)
}

fn read_contact_targets(
    path: &Path,
    clips: &[ActionClip],
    config: &DatasetConfig,
    skip_unknown: bool,
) -> Result<Vec<ContactSample>> {
    let by_id: HashMap<&str, &ActionClip> = clips.iter().map(|c| (c.clip_id.as_str(), c)).collect();
    let text = read_to_string(path)?;
    let mut samples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fail = |msg: String| Error::parse(path, lineno + 1, msg);
        let rec: ContactRecord = serde_json::from_str(line).map_err(|e| fail(e.to_string()))?;
        let clip = match by_id.get(rec.clip_id.as_str()) {
            Some(clip) => clip,
            None if skip_unknown => continue,
            None => return Err(fail(format!("unknown clip_id '{}'", rec.clip_id))),
        };
        let frame = clip.frames.get(rec.frame_index).ok_or_else(|| {
            fail(format!(
                "frame_index {} out of range for clip '{}' with {} frames",
                rec.frame_index,
                rec.clip_id,
                clip.frames.len()
            ))
        })?;
        if rec.contact.len() != config.joint_count() {
            return Err(fail(format!(
                "contact has {} entries, expected {}",
                rec.contact.len(),
                config.joint_count()
            )));
        }
        let target = ContactMap::new(rec.contact, rec.distant).map_err(|e| fail(e.to_string()))?;
        samples.push(ContactSample {
            clip_id: rec.clip_id,
            frame_index: rec.frame_index,
            frame: frame.clone(),
            target,
        });
    }
    Ok(samples)
}

pub fn write_contact_targets(path: &Path, samples: &[ContactSample]) -> Result<()> {
    let mut out = String::new();
    for s in samples {
        let rec = ContactRecord {
            clip_id: s.clip_id.clone(),
            frame_index: s.frame_index,
            contact: s.target.contact.clone(),
            distant: s.target.distant.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("contact record serializes"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Loads every `<mesh_id>.obj` file in `dir`.
pub fn load_meshes(dir: &Path) -> Result<BTreeMap<String, ObjectMesh>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut meshes = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("obj") {
            continue;
        }
        let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let mesh = parse_obj(id, &read_to_string(&path)?, &path)?;
        meshes.insert(id.to_string(), mesh);
    }
    Ok(meshes)
}

pub fn write_meshes(dir: &Path, meshes: &BTreeMap<String, ObjectMesh>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (id, mesh) in meshes {
        write_atomic(&dir.join(format!("{id}.obj")), write_obj(mesh).as_bytes())?;
    }
    Ok(())
}
